"""Closed-form non-smooth weak solution used as ground truth.

For a positive integer ``m`` the function ``w(x, y)`` is the unique real root
``z`` of

    F(x, y, z) = z * (x**2 + z**2) ** (m - 1/2) + y,

which solves ``w_xx + d/dy (k(x, w) w_y) = 0`` with
``k(x, z) = 2m (x**2 + z**2) ** (2m - 1)``.  Away from the origin ``w`` is
smooth; on the line ``x = 0`` it behaves like ``|y| ** (1 / 2m)``, so it is
Hoelder continuous with exactly that exponent and no better.

The companion ``f(x, y) = x (x**2 + w**2) ** (m - 1/2)`` is conjugate to ``w``
through the first-order system

    f_x = -k(x, w) w_y,      f_y = w_x,

which is what :func:`oracle_diagnostics` checks numerically.

Note the sign: with ``F`` as written, ``w(0, y) = -sign(y) |y| ** (1/2m)``.
All routines follow ``F`` literally.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import NumericalError, ParameterError, SingularPointError
from .grid import StructuredGrid


@dataclass(frozen=True)
class SharpnessExample:
    m: int = 1
    newton_tol: float = 1e-14
    max_iters: int = 100

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ParameterError(f"m must be a positive integer, got {self.m!r}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def eps_sharp(self) -> float:
        """Exponent deficit ``1/(4m-2)`` of the ``|k_z| <= C k**(1-eps)`` bound."""
        return 1.0 / (4 * self.m - 2)

    @property
    def holder_exponent(self) -> float:
        return 1.0 / (2 * self.m)

    def k(self, x, z):
        return 2 * self.m * (np.square(x) + np.square(z)) ** (2 * self.m - 1)

    def k_z(self, x, z):
        m = self.m
        return 4 * m * (2 * m - 1) * z * (np.square(x) + np.square(z)) ** (2 * m - 2)


def implicit_residual(ex: SharpnessExample, x, y, z):
    """``F(x, y, z)``."""
    s = np.square(x) + np.square(z)
    return z * s ** (ex.m - 0.5) + y


def _F_z(m, x, z):
    s = np.square(x) + np.square(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        return s ** (m - 1.5) * (np.square(x) + 2 * m * np.square(z))


def _scalar_or_array(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


def sharpness_w(ex: SharpnessExample, x, y):
    """Root of ``F(x, y, .) = 0``; accepts scalars or broadcastable arrays.

    Safeguarded Newton on the certified bracket between ``0`` and
    ``-sign(y) * min(|y| ** (1/2m), |y| / |x| ** (2m-1))``: ``|F(z) - y|``
    dominates both ``|z| ** 2m`` and ``|z| |x| ** (2m-1)``, so the root cannot
    lie further out.  Iteration stops once the residual is below
    ``newton_tol * (1 + |y|)`` and the last step moved ``z`` by at most a few
    ulps (or the bracket has collapsed).
    """
    x_arr, y_arr = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if not (np.all(np.isfinite(x_arr)) and np.all(np.isfinite(y_arr))):
        raise ParameterError("sharpness_w needs finite (x, y)")
    m = ex.m
    xa = np.abs(x_arr).ravel().copy()
    ya = y_arr.ravel().copy()
    sgn = -np.sign(ya)
    ay = np.abs(ya)

    # Solve for t = |z| >= 0 with G(t) = t (x^2 + t^2)^(m-1/2) - |y| = 0.
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        cap = np.minimum(ay ** (1.0 / (2 * m)), np.where(xa > 0, ay / xa ** (2 * m - 1), np.inf))
    lo = np.zeros_like(ay)
    hi = cap.copy()
    t = cap.copy()
    tol = ex.newton_tol * (1.0 + ay)
    active = ay > 0
    t[~active] = 0.0
    step = np.full_like(ay, np.inf)

    for _ in range(ex.max_iters):
        if not active.any():
            break
        ta, xa_a = t[active], xa[active]
        g = ta * (xa_a**2 + ta**2) ** (m - 0.5) - ay[active]
        lo_a, hi_a = lo[active], hi[active]
        lo_a = np.where(g < 0, ta, lo_a)
        hi_a = np.where(g > 0, ta, hi_a)
        gz = _F_z(m, xa_a, ta)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = ta - g / gz
        inside = np.isfinite(newton) & (newton > lo_a) & (newton < hi_a)
        t_new = np.where(inside, newton, 0.5 * (lo_a + hi_a))
        t_new = np.where(g == 0, ta, t_new)
        st = np.abs(t_new - ta)
        t[active], lo[active], hi[active], step[active] = t_new, lo_a, hi_a, st

        resid = np.abs(t_new * (xa_a**2 + t_new**2) ** (m - 0.5) - ay[active])
        small_step = st <= 4 * np.spacing(np.maximum(t_new, np.finfo(float).tiny))
        collapsed = (hi_a - lo_a) <= 4 * np.spacing(np.maximum(hi_a, np.finfo(float).tiny))
        done = (resid <= tol[active]) & (small_step | collapsed) | (g == 0)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    if active.any():
        i = np.flatnonzero(active)[0]
        raise NumericalError(
            "sharpness_w did not converge",
            bracket=(float(sgn[i] * lo[i]), float(sgn[i] * hi[i])),
            x=float(x_arr.ravel()[i]),
            y=float(ya[i]),
        )
    z = (sgn * t).reshape(x_arr.shape)
    return _scalar_or_array(z, x_arr)


def sharpness_grad_w(ex: SharpnessExample, x, y):
    """Analytic ``(w_x, w_y)`` via the implicit function theorem."""
    x_arr, y_arr = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    m = ex.m
    w = np.asarray(sharpness_w(ex, x_arr, y_arr))
    denom = np.square(x_arr) + 2 * m * np.square(w)
    if np.any(denom == 0):
        raise SingularPointError("gradient of w is undefined at the origin", x=0.0, y=0.0)
    w_x = -(2 * m - 1) * x_arr * w / denom
    w_y = -1.0 / _F_z(m, x_arr, w)
    return _scalar_or_array(w_x, x_arr), _scalar_or_array(w_y, x_arr)


def sharpness_conjugate_f(ex: SharpnessExample, x, y):
    """``f(x, y) = x (x**2 + w**2) ** (m - 1/2)``."""
    x_arr = np.asarray(x, dtype=float)
    w = sharpness_w(ex, x, y)
    f = x_arr * (np.square(x_arr) + np.square(w)) ** (ex.m - 0.5)
    return _scalar_or_array(f, np.broadcast_arrays(x_arr, np.asarray(y))[0])


def conjugate_f_quotient(ex: SharpnessExample, x, y):
    """Second closed form ``f = -x y / w``, valid where ``w != 0``."""
    w = sharpness_w(ex, x, y)
    return -np.asarray(x) * np.asarray(y) / w


def conjugate_grad_f(ex: SharpnessExample, x, y):
    """``(f_x, f_y)`` by the chain rule through ``w``, without using the CR system."""
    x_arr, y_arr = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    m = ex.m
    w = np.asarray(sharpness_w(ex, x_arr, y_arr))
    w_x, w_y = (np.asarray(g) for g in sharpness_grad_w(ex, x_arr, y_arr))
    s = np.square(x_arr) + np.square(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = (2 * m - 1) * x_arr * s ** (m - 1.5)
        f_x = s ** (m - 0.5) + inner * (x_arr + w * w_x)
        f_y = inner * w * w_y
    return _scalar_or_array(f_x, x_arr), _scalar_or_array(f_y, x_arr)


def cr_residual_analytic(ex: SharpnessExample, x, y):
    """Pointwise ``(f_x + k w_y, f_y - w_x)`` from analytic gradients."""
    w = np.asarray(sharpness_w(ex, x, y))
    w_x, w_y = sharpness_grad_w(ex, x, y)
    f_x, f_y = conjugate_grad_f(ex, x, y)
    return f_x + ex.k(x, w) * w_y, f_y - w_x


def _gradient_2nd_order(values, spacing, axis):
    # centered inside, one-sided second order on the two end layers
    return np.gradient(values, spacing, axis=axis, edge_order=2)


def fit_holder_exponent(ys, values, drop_extremes=True):
    """OLS slope of ``log|value|`` against ``log|y|``.

    The samples are sorted by ``|y|``; with ``drop_extremes`` the smallest and
    largest are discarded before fitting.
    """
    ys = np.abs(np.asarray(ys, dtype=float))
    vals = np.abs(np.asarray(values, dtype=float))
    order = np.argsort(ys)
    ys, vals = ys[order], vals[order]
    if drop_extremes:
        ys, vals = ys[1:-1], vals[1:-1]
    if ys.size < 2:
        raise ParameterError("need at least two samples for a slope fit")
    slope, _ = np.polyfit(np.log(ys), np.log(vals), 1)
    return float(slope)


@dataclass
class DiagnosticsReport:
    cr_residual_max: float
    energy: float
    energy_bound: float
    holder_slope: float
    holder_target: float

    def to_dict(self) -> dict:
        return asdict(self)


def energy_integrand(ex: SharpnessExample, x, y):
    """``w_x**2 + k(x, w) w_y**2``; at the origin the limit along ``y = 0`` (``2m``) is used."""
    x_arr, y_arr = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    origin = (x_arr == 0) & (y_arr == 0)
    xs = np.where(origin, 1.0, x_arr)
    w = np.asarray(sharpness_w(ex, xs, y_arr))
    w_x, w_y = (np.asarray(g) for g in sharpness_grad_w(ex, xs, y_arr))
    vals = w_x**2 + ex.k(xs, w) * w_y**2
    return np.where(origin, 2.0 * ex.m, vals)


def trapezoid_nd(values, axes):
    out = values
    for ax in reversed(axes):
        out = trapezoid(out, ax, axis=-1)
    return float(out)


def oracle_diagnostics(
    ex: SharpnessExample,
    grid: StructuredGrid,
    exclusion_radius: float,
    holder_ys=None,
) -> DiagnosticsReport:
    """CR residual, energy and Hoelder-slope diagnostics on ``grid``.

    ``cr_residual_max`` is the max-norm over nodes at distance
    ``>= exclusion_radius`` from the origin of both first-order identities,
    with derivatives of the sampled ``w`` and ``f`` taken by second-order
    finite differences.
    """
    if grid.dim != 2:
        raise ParameterError("oracle diagnostics need a 2D grid")
    if not exclusion_radius > 0:
        raise ParameterError("exclusion_radius must be positive")
    X, Y = grid.coords
    hx, hy = grid.spacing
    w = np.asarray(sharpness_w(ex, X, Y))
    f = np.asarray(sharpness_conjugate_f(ex, X, Y))
    w_x = _gradient_2nd_order(w, hx, 0)
    w_y = _gradient_2nd_order(w, hy, 1)
    f_x = _gradient_2nd_order(f, hx, 0)
    f_y = _gradient_2nd_order(f, hy, 1)
    keep = np.hypot(X, Y) >= exclusion_radius
    r1 = np.abs(f_x + ex.k(X, w) * w_y)[keep]
    r2 = np.abs(f_y - w_x)[keep]
    cr_max = float(max(r1.max(initial=0.0), r2.max(initial=0.0)))

    energy = trapezoid_nd(energy_integrand(ex, X, Y), grid.axes)
    bound = 3.0 * ex.m**2 * grid.volume

    if holder_ys is None:
        holder_ys = 2.0 ** -np.arange(4, 21)
    holder_ys = np.asarray(holder_ys, dtype=float)
    slope = fit_holder_exponent(holder_ys, sharpness_w(ex, np.zeros_like(holder_ys), holder_ys))
    return DiagnosticsReport(
        cr_residual_max=cr_max,
        energy=energy,
        energy_bound=bound,
        holder_slope=slope,
        holder_target=ex.holder_exponent,
    )
