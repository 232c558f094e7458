"""Coefficient fields and numerical checks of their structural conditions.

A :class:`CoefficientField` bundles the data of the divergence-form operator

    Q w = div(A(x, w) grad w) + gamma(x, w) . grad w + f(x, w)

together with the diagonal comparison vector ``k(x, z)``.  Every evaluator is
vectorised: ``x`` is an ``(N, n)`` array of points and ``z`` an ``(N,)``
array of values; matrices come back as ``(N, n, n)``.

The check functions sweep a sample lattice and solve, per sample, the
symmetric (generalised) eigenvalue problem that discharges the quantifier
"for all xi" exactly.  They return :class:`ConditionReport` records whose
``best_constant`` is the smallest constant that works on the samples.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import DataError, NondegeneracyViolation, ParameterError

Array = np.ndarray

CONDITIONS = (
    "diagonal",
    "subordinate",
    "super_subordinate",
    "subunit",
    "drift_super_subordinate",
    "wirtinger",
    "nondegeneracy",
)
SUITE_FLAGS = frozenset(CONDITIONS) - {"diagonal", "nondegeneracy"}


def _batch(x, z, dim):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[-1] != dim:
        x = x.reshape(-1, dim)
    z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
    return x, z


def _fd_dz(func, x, z, h=1e-6):
    step = h * (1.0 + np.abs(z))
    return (func(x, z + step) - func(x, z - step)) / (2 * step).reshape((-1,) + (1,) * (np.ndim(func(x, z)) - 1))


@dataclass
class CoefficientField:
    """Evaluators for ``A``, ``k``, ``gamma``, ``f`` and their derivatives.

    Only ``dim``, ``matrix_eval`` and ``k_eval`` are required.  Missing
    ``z``-derivatives fall back to centred differences, missing ``gamma`` and
    ``f`` default to zero.  ``k_is_c2`` records whether every component of
    ``k`` is twice continuously differentiable (needed by the Wirtinger
    check).
    """

    dim: int
    matrix_eval: Callable
    k_eval: Callable
    matrix_dz_eval: Callable | None = None
    matrix_dx_eval: Callable | None = None
    drift_eval: Callable | None = None
    drift_dz_eval: Callable | None = None
    zero_eval: Callable | None = None
    zero_dz_eval: Callable | None = None
    name: str = "custom"
    params: tuple = ()
    k_is_c2: bool = True

    def matrix(self, x, z) -> Array:
        x, z = _batch(x, z, self.dim)
        return np.asarray(self.matrix_eval(x, z), dtype=float)

    def matrix_dz(self, x, z) -> Array:
        x, z = _batch(x, z, self.dim)
        if self.matrix_dz_eval is None:
            return _fd_dz(self.matrix_eval, x, z)
        return np.asarray(self.matrix_dz_eval(x, z), dtype=float)

    def matrix_dx(self, x, z, i) -> Array:
        x, z = _batch(x, z, self.dim)
        if self.matrix_dx_eval is None:
            step = 1e-6 * (1.0 + np.abs(x[:, i]))
            xp, xm = x.copy(), x.copy()
            xp[:, i] += step
            xm[:, i] -= step
            diff = self.matrix_eval(xp, z) - self.matrix_eval(xm, z)
            return diff / (2 * step)[:, None, None]
        return np.asarray(self.matrix_dx_eval(x, z, i), dtype=float)

    def k(self, x, z) -> Array:
        x, z = _batch(x, z, self.dim)
        return np.asarray(self.k_eval(x, z), dtype=float)

    def kstar(self, x, z) -> Array:
        return self.k(x, z).min(axis=1)

    def drift(self, x, z) -> Array:
        x, z = _batch(x, z, self.dim)
        if self.drift_eval is None:
            return np.zeros_like(x)
        return np.asarray(self.drift_eval(x, z), dtype=float)

    def drift_dz(self, x, z) -> Array:
        x, z = _batch(x, z, self.dim)
        if self.drift_eval is None:
            return np.zeros_like(x)
        if self.drift_dz_eval is None:
            return _fd_dz(self.drift_eval, x, z)
        return np.asarray(self.drift_dz_eval(x, z), dtype=float)

    def zero(self, x, z) -> Array:
        x, z = _batch(x, z, self.dim)
        if self.zero_eval is None:
            return np.zeros_like(z)
        return np.asarray(self.zero_eval(x, z), dtype=float)

    def zero_dz(self, x, z) -> Array:
        x, z = _batch(x, z, self.dim)
        if self.zero_eval is None:
            return np.zeros_like(z)
        if self.zero_dz_eval is None:
            return _fd_dz(self.zero_eval, x, z)
        return np.asarray(self.zero_dz_eval(x, z), dtype=float)

    @property
    def has_drift(self) -> bool:
        return self.drift_eval is not None

    @property
    def has_zero_order(self) -> bool:
        return self.zero_eval is not None


# ---------------------------------------------------------------------------
# built-in families


def _diag(entries):
    """Stack ``(N,)`` arrays into ``(N, n, n)`` diagonal matrices."""
    entries = np.stack(entries, axis=-1)
    out = np.zeros(entries.shape + (entries.shape[-1],))
    idx = np.arange(entries.shape[-1])
    out[..., idx, idx] = entries
    return out


def _exp_inv_square(r2):
    """``exp(-1/r2)`` extended by 0 at ``r2 = 0``."""
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros_like(r2)
    pos = r2 > 0
    out[pos] = np.exp(-1.0 / r2[pos])
    return out


def _exp_inv_square_d(r2):
    """Derivative of ``exp(-1/r2)`` with respect to ``r2`` (0 at ``r2 = 0``)."""
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros_like(r2)
    pos = r2 > 0
    out[pos] = np.exp(-1.0 / r2[pos]) / r2[pos] ** 2
    return out


def _identity_family(params):
    dim = int(params[0]) if params else 2
    if dim < 1:
        raise ParameterError("identity dimension must be positive")

    def matrix(x, z):
        return np.broadcast_to(np.eye(dim), (x.shape[0], dim, dim)).copy()

    def zeros_mat(x, z, i=None):
        return np.zeros((x.shape[0], dim, dim))

    return CoefficientField(
        dim=dim,
        matrix_eval=matrix,
        k_eval=lambda x, z: np.ones((x.shape[0], dim)),
        matrix_dz_eval=zeros_mat,
        matrix_dx_eval=zeros_mat,
        name="identity",
        params=(dim,),
    )


def _sharpness_family(params):
    if len(params) != 1:
        raise ParameterError("sharpness family takes exactly one parameter m")
    m = params[0]
    if int(m) != m or m < 1:
        raise ParameterError(f"sharpness needs an integer m >= 1, got {m!r}")
    m = int(m)

    def k(x1, z):
        return 2 * m * (x1**2 + z**2) ** (2 * m - 1)

    def matrix(x, z):
        return _diag([np.ones_like(z), k(x[:, 0], z)])

    def matrix_dz(x, z):
        s = x[:, 0] ** 2 + z**2
        return _diag([np.zeros_like(z), 4 * m * (2 * m - 1) * z * s ** (2 * m - 2)])

    def matrix_dx(x, z, i):
        if i != 0:
            return np.zeros((x.shape[0], 2, 2))
        s = x[:, 0] ** 2 + z**2
        return _diag([np.zeros_like(z), 4 * m * (2 * m - 1) * x[:, 0] * s ** (2 * m - 2)])

    return CoefficientField(
        dim=2,
        matrix_eval=matrix,
        k_eval=lambda x, z: np.stack([np.ones_like(z), k(x[:, 0], z)], axis=1),
        matrix_dz_eval=matrix_dz,
        matrix_dx_eval=matrix_dx,
        name="sharpness",
        params=(m,),
    )


def _fedii_family(params):
    if params:
        raise ParameterError("fedii family takes no parameters")

    def kk(x1):
        return _exp_inv_square(x1**2)

    def matrix(x, z):
        return _diag([np.ones_like(z), kk(x[:, 0])])

    def matrix_dx(x, z, i):
        if i != 0:
            return np.zeros((x.shape[0], 2, 2))
        x1 = x[:, 0]
        return _diag([np.zeros_like(z), 2 * x1 * _exp_inv_square_d(x1**2)])

    return CoefficientField(
        dim=2,
        matrix_eval=matrix,
        k_eval=lambda x, z: np.stack([np.ones_like(z), kk(x[:, 0])], axis=1),
        matrix_dz_eval=lambda x, z: np.zeros((x.shape[0], 2, 2)),
        matrix_dx_eval=matrix_dx,
        name="fedii",
        params=(),
    )


def _axis_family(params):
    dim = int(params[0]) if params else 3
    if dim < 2:
        raise ParameterError("axis family needs dimension >= 2")

    def components(x):
        # k^i vanishes exactly on the i-th coordinate axis
        sq = x**2
        total = sq.sum(axis=1)
        comps = [np.ones(x.shape[0])]
        for i in range(1, dim):
            comps.append(_exp_inv_square(total - sq[:, i]))
        return comps

    def matrix_dx(x, z, j):
        sq = x**2
        total = sq.sum(axis=1)
        entries = [np.zeros(x.shape[0])]
        for i in range(1, dim):
            d = 2 * x[:, j] * _exp_inv_square_d(total - sq[:, i])
            entries.append(np.zeros(x.shape[0]) if i == j else d)
        return _diag(entries)

    return CoefficientField(
        dim=dim,
        matrix_eval=lambda x, z: _diag(components(x)),
        k_eval=lambda x, z: np.stack(components(x), axis=1),
        matrix_dz_eval=lambda x, z: np.zeros((x.shape[0], dim, dim)),
        matrix_dx_eval=matrix_dx,
        name="axis",
        params=(dim,),
    )


def _power_family(params):
    if len(params) != 1:
        raise ParameterError("power family takes exactly one exponent p")
    p = float(params[0])
    if not p > 0:
        raise ParameterError(f"power exponent must be positive, got {p}")

    def kk(x1):
        return np.abs(x1) ** p

    def matrix_dx(x, z, i):
        if i != 0:
            return np.zeros((x.shape[0], 2, 2))
        x1 = x[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(x1 == 0, 0.0, p * np.abs(x1) ** (p - 1) * np.sign(x1))
        return _diag([np.zeros_like(z), d])

    return CoefficientField(
        dim=2,
        matrix_eval=lambda x, z: _diag([np.ones_like(z), kk(x[:, 0])]),
        k_eval=lambda x, z: np.stack([np.ones_like(z), kk(x[:, 0])], axis=1),
        matrix_dz_eval=lambda x, z: np.zeros((x.shape[0], 2, 2)),
        matrix_dx_eval=matrix_dx,
        name="power",
        params=(p,),
        k_is_c2=p >= 2,
    )


FAMILIES = {
    "identity": _identity_family,
    "sharpness": _sharpness_family,
    "fedii": _fedii_family,
    "axis": _axis_family,
    "power": _power_family,
}


def make_builtin_family(name: str, params=()) -> CoefficientField:
    """Build one of the shipped coefficient families.

    ``identity [n]``
        ``A = I`` in dimension ``n`` (default 2).
    ``sharpness [m]``
        ``A = diag(1, k)``, ``k(x, z) = 2m (x_1**2 + z**2) ** (2m-1)``; the
        operator solved by :mod:`degensolve.oracle`.
    ``fedii``
        ``A = diag(1, exp(-1/x_1**2))``, infinitely degenerate on ``x_1 = 0``.
    ``axis [n]``
        ``k^1 = 1``, ``k^i = exp(-1/|x without x_i|**2)`` for ``i >= 2``.
    ``power [p]``
        ``A = diag(1, |x_1| ** p)``.

    All families have ``gamma = 0`` and ``f = 0``.
    """
    try:
        builder = FAMILIES[name]
    except KeyError:
        raise ParameterError(f"unknown coefficient family {name!r}") from None
    return builder(tuple(params))


def with_lower_order(
    field: CoefficientField,
    drift=None,
    drift_dz=None,
    zero=None,
    zero_dz=None,
) -> CoefficientField:
    """Copy of ``field`` with the given drift and zero-order evaluators."""
    from dataclasses import replace

    return replace(
        field,
        drift_eval=drift if drift is not None else field.drift_eval,
        drift_dz_eval=drift_dz if drift is not None else field.drift_dz_eval,
        zero_eval=zero if zero is not None else field.zero_eval,
        zero_dz_eval=zero_dz if zero is not None else field.zero_dz_eval,
        name=field.name + "+lower",
    )


# ---------------------------------------------------------------------------
# regions and reports


@dataclass(frozen=True)
class BoxRegion:
    center: tuple[float, ...]
    half_lengths: tuple[float, ...]

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        half = tuple(float(r) for r in np.atleast_1d(self.half_lengths))
        if len(center) != len(half):
            raise ParameterError("center and half_lengths must have equal length")
        if not all(r > 0 for r in half):
            raise ParameterError(f"half_lengths must be positive, got {half}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_lengths", half)

    @classmethod
    def from_bounds(cls, lows, highs):
        lows, highs = np.asarray(lows, float), np.asarray(highs, float)
        return cls(tuple((lows + highs) / 2), tuple((highs - lows) / 2))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lows(self) -> np.ndarray:
        return np.subtract(self.center, self.half_lengths)

    @property
    def highs(self) -> np.ndarray:
        return np.add(self.center, self.half_lengths)

    def scaled(self, factor: float) -> BoxRegion:
        return BoxRegion(self.center, tuple(factor * r for r in self.half_lengths))

    def contains(self, point, rel_tol=1e-12) -> bool:
        offset = np.abs(np.subtract(point, self.center))
        return bool(np.all(offset <= np.asarray(self.half_lengths) * (1 + rel_tol)))

    def lattice(self, density: int) -> np.ndarray:
        axes = [np.linspace(lo, hi, density) for lo, hi in zip(self.lows, self.highs)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def wrap_samples(self, i: int, density: int) -> np.ndarray:
        """Lattice points on the i-wrap: faces where some ``y_j``, ``j != i``, is extreme."""
        axes = [np.linspace(lo, hi, density) for lo, hi in zip(self.lows, self.highs)]
        pts = []
        for j in range(self.dim):
            if j == i:
                continue
            for end in (self.lows[j], self.highs[j]):
                face_axes = list(axes)
                face_axes[j] = np.array([end])
                mesh = np.meshgrid(*face_axes, indexing="ij")
                pts.append(np.stack([m.ravel() for m in mesh], axis=1))
        return np.concatenate(pts, axis=0)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "half_lengths": list(self.half_lengths)}


@dataclass
class ConditionReport:
    condition_name: str
    holds: bool
    best_constant: float
    worst_point: dict
    samples: int
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _sample_set(region: BoxRegion, z_range, density: int, z_density: int | None = None):
    if density < 2:
        raise ParameterError("sample_density must be at least 2 per axis")
    z_lo, z_hi = float(z_range[0]), float(z_range[1])
    if z_hi < z_lo:
        raise ParameterError("empty z_range")
    pts = region.lattice(density)
    zs = np.linspace(z_lo, z_hi, z_density or density)
    X = np.repeat(pts, zs.size, axis=0)
    Z = np.tile(zs, pts.shape[0])
    return X, Z


def _worst(X, Z, values):
    i = int(np.nanargmax(np.where(np.isnan(values), -np.inf, values)))
    return i, {"x": [float(v) for v in X[i]], "z": float(Z[i])}


def _check_symmetric(A, X, Z):
    scale = np.maximum(1.0, np.abs(A).max(axis=(1, 2)))
    asym = np.abs(A - np.swapaxes(A, 1, 2)).max(axis=(1, 2)) / scale
    bad = np.flatnonzero(asym >= 1e-12)
    if bad.size:
        i = bad[0]
        raise DataError(f"matrix not symmetric at x={X[i].tolist()}, z={Z[i]}")
    if not np.all(np.isfinite(A)):
        i = int(np.flatnonzero(~np.isfinite(A).all(axis=(1, 2)))[0])
        raise DataError(f"non-finite matrix at x={X[i].tolist()}, z={Z[i]}")


def max_generalized_eig(T: Array, S: Array, rel_tol: float = 1e-12):
    """Per-sample ``max_xi (xi' T xi) / (xi' S xi)`` for PSD ``T`` and ``S``.

    Directions in the numerical null space of ``S`` give ``inf`` unless ``T``
    also vanishes on them.  Returns ``(values, witnesses)`` where the witness
    is a maximising ``xi`` (a null direction for infinite values).
    """
    T = 0.5 * (T + np.swapaxes(T, -1, -2))
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    n = T.shape[-1]
    offdiag = ~np.eye(n, dtype=bool)
    if not (np.any(T[:, offdiag]) or np.any(S[:, offdiag])):
        # diagonal pencil: exact ratios, no eigen-decomposition thresholds
        t = np.diagonal(T, axis1=-2, axis2=-1)
        s = np.diagonal(S, axis1=-2, axis2=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(s > 0, t / np.where(s > 0, s, 1.0), np.where(t > 0, np.inf, 0.0))
        j = np.argmax(ratio, axis=-1)
        witness = np.eye(n)[j]
        return np.maximum(ratio[np.arange(len(j)), j], 0.0), witness
    s, V = np.linalg.eigh(S)
    # purely relative: a uniformly small S is not degenerate
    s_scale = np.abs(s).max(axis=-1, keepdims=True)
    in_range = s > rel_tol * s_scale
    Tv = np.swapaxes(V, -1, -2) @ T @ V
    t_scale = np.maximum(np.abs(T).max(axis=(-1, -2)), 1.0)[:, None]
    tdiag = np.diagonal(Tv, axis1=-2, axis2=-1)
    leak = (~in_range) & (tdiag > rel_tol * t_scale)
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(in_range, 1.0 / np.sqrt(np.where(in_range, s, 1.0)), 0.0)
    C = inv_sqrt[:, :, None] * Tv * inv_sqrt[:, None, :]
    lam, U = np.linalg.eigh(C)
    values = np.maximum(lam[:, -1], 0.0)
    witness = V @ (inv_sqrt * U[:, :, -1])[:, :, None]
    witness = witness[:, :, 0]
    infinite = leak.any(axis=-1)
    if infinite.any():
        j = np.argmax(leak, axis=-1)
        null_dirs = np.take_along_axis(V, j[:, None, None], axis=-1)[:, :, 0]
        witness = np.where(infinite[:, None], null_dirs, witness)
        values = np.where(infinite, np.inf, values)
    return values, witness


def check_diagonal_equivalence(
    field: CoefficientField,
    region: BoxRegion,
    z_range,
    lambda_bound: float,
    sample_density: int,
) -> ConditionReport:
    """Two-sided comparison ``sum k_i xi_i**2 <= xi' A xi <= Lambda sum k_i xi_i**2``."""
    if lambda_bound < 1:
        raise ParameterError("lambda_bound must be >= 1")
    X, Z = _sample_set(region, z_range, sample_density)
    A = field.matrix(X, Z)
    _check_symmetric(A, X, Z)
    kv = field.k(X, Z)
    if np.any(kv < 0):
        i = int(np.flatnonzero((kv < 0).any(axis=1))[0])
        raise DataError(f"negative k at x={X[i].tolist()}, z={Z[i]}")
    D = np.zeros_like(A)
    idx = np.arange(field.dim)
    D[:, idx, idx] = kv
    norm = np.abs(np.linalg.eigvalsh(A)).max(axis=1)
    lower_gap = np.linalg.eigvalsh(A - D)[:, 0]
    lower_ok = lower_gap >= -1e-12 * np.maximum(norm, 1.0)
    lam, _ = max_generalized_eig(A, D)
    best = float(lam.max())
    if not lower_ok.all():
        i, worst = _worst(X, Z, -lower_gap)
        holds = False
    else:
        i, worst = _worst(X, Z, lam)
        holds = best <= lambda_bound * (1 + 1e-12)
    return ConditionReport(
        condition_name="diagonal",
        holds=bool(holds),
        best_constant=best,
        worst_point=worst,
        samples=int(X.shape[0]),
        details={
            "lower_bound_holds": bool(lower_ok.all()),
            "min_lower_gap": float(lower_gap.min()),
            "lambda_bound": float(lambda_bound),
            "z_range": [float(z_range[0]), float(z_range[1])],
        },
    )


def _fd_grad_k(field, X, Z, h=1e-6):
    """Centred differences of every ``k`` component in all ``x`` and ``z``."""
    grads = []
    for i in range(field.dim):
        step = h * (1.0 + np.abs(X[:, i]))
        Xp, Xm = X.copy(), X.copy()
        Xp[:, i] += step
        Xm[:, i] -= step
        grads.append((field.k(Xp, Z) - field.k(Xm, Z)) / (2 * step)[:, None])
    step = h * (1.0 + np.abs(Z))
    grads.append((field.k(X, Z + step) - field.k(X, Z - step)) / (2 * step)[:, None])
    return np.stack(grads, axis=-1)  # (N, n_k, n+1)


def check_subordination_suite(
    field: CoefficientField,
    region: BoxRegion,
    z_range,
    flags,
    sample_density: int = 21,
    z_density: int | None = None,
    bounds: dict | None = None,
    exponent: float = 1.0,
) -> list[ConditionReport]:
    """Best constants for the derivative-domination conditions.

    ``exponent`` generalises the super-subordination weight: the tested
    inequality is ``|d_z A xi|**2 <= B**2 (k*)**(2q-1) xi' A xi`` with
    ``q = exponent``.  For ``A = diag(1, k)`` with ``k <= 1`` this reads
    ``|k_z| <= B k**q``; ``q = 1`` is the standard condition.

    ``bounds`` maps a flag to an upper bound on its constant; flags without a
    bound hold iff the constant is finite.
    """
    flags = set(flags)
    if not flags:
        raise ParameterError("empty flag set")
    unknown = flags - SUITE_FLAGS
    if unknown:
        raise ParameterError(f"unknown condition flags {sorted(unknown)}")
    bounds = bounds or {}
    X, Z = _sample_set(region, z_range, sample_density, z_density)
    A = field.matrix(X, Z)
    _check_symmetric(A, X, Z)
    n = field.dim
    kstar = field.kstar(X, Z)

    def report(name, sq_values, witnesses, extra=None):
        # sq_values are squared constants per sample
        vals = np.sqrt(sq_values)
        best = float(vals.max())
        i, worst = _worst(X, Z, vals)
        worst["xi"] = [float(v) for v in witnesses[i]]
        bound = bounds.get(name)
        holds = math.isfinite(best) if bound is None else best <= bound * (1 + 1e-12)
        details = {"z_range": [float(z_range[0]), float(z_range[1])]}
        if bound is not None:
            details["bound"] = float(bound)
        details.update(extra or {})
        return ConditionReport(name, bool(holds), best, worst, int(X.shape[0]), details)

    out = []
    order = [c for c in CONDITIONS if c in flags]
    for name in order:
        if name == "subordinate":
            T = np.zeros_like(A)
            for i in range(n):
                Di = field.matrix_dx(X, Z, i)
                T += np.swapaxes(Di, 1, 2) @ Di
            Dz = field.matrix_dz(X, Z)
            T += np.swapaxes(Dz, 1, 2) @ Dz
            vals, wit = max_generalized_eig(T, A)
            out.append(report(name, vals, wit))
        elif name == "super_subordinate":
            Dz = field.matrix_dz(X, Z)
            T = np.swapaxes(Dz, 1, 2) @ Dz
            weight = np.power(kstar, 2 * exponent - 1)
            vals, wit = max_generalized_eig(T, weight[:, None, None] * A)
            out.append(report(name, vals, wit, {"exponent": float(exponent)}))
        elif name == "drift_super_subordinate":
            g = field.drift_dz(X, Z)
            T = g[:, :, None] * g[:, None, :]
            vals, wit = max_generalized_eig(T, kstar[:, None, None] * A)
            out.append(report(name, vals, wit))
        elif name == "subunit":
            g = field.drift(X, Z)
            off = A - np.einsum("nii->ni", A)[:, :, None] * np.eye(n)
            if np.all(off == 0):
                diag = np.einsum("nii->ni", A)
                zero = diag <= 0
                leak = zero & (g != 0)
                with np.errstate(divide="ignore", invalid="ignore"):
                    vals = np.where(zero, 0.0, g**2 / np.where(zero, 1.0, diag)).sum(axis=1)
                vals = np.where(leak.any(axis=1), np.inf, vals)
                with np.errstate(divide="ignore", invalid="ignore"):
                    wit = np.where(zero, leak.astype(float), g / np.where(zero, 1.0, diag))
            else:
                vals, wit = max_generalized_eig(g[:, :, None] * g[:, None, :], A)
            out.append(report(name, vals, wit))
        elif name == "wirtinger":
            if not field.k_is_c2:
                raise ParameterError("Wirtinger check requires k of class C^2")
            grad = _fd_grad_k(field, X, Z)
            kv = field.k(X, Z)
            gnorm2 = (grad**2).sum(axis=-1)
            zero = kv <= 0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(zero, np.where(gnorm2 > 1e-20, np.inf, 0.0), gnorm2 / np.where(zero, 1, kv))
            vals = ratio.max(axis=1)
            comp = ratio.argmax(axis=1)
            wit = np.eye(kv.shape[1])[comp]
            out.append(report(name, vals, wit))
    return out


# ---------------------------------------------------------------------------
# nondegeneracy


def _positivity_tol(kv):
    return 1e-12 * (1.0 + np.linalg.norm(kv, axis=1))


def _box_failure(field, box: BoxRegion, z_values, density):
    """First ``(i, point, z, k_i)`` with ``k_i <= tol`` on the i-wrap, else ``None``."""
    for i in range(field.dim):
        pts = box.wrap_samples(i, density)
        X = np.repeat(pts, z_values.size, axis=0)
        Z = np.tile(z_values, pts.shape[0])
        kv = field.k(X, Z)
        bad = np.flatnonzero(kv[:, i] <= _positivity_tol(kv))
        if bad.size:
            j = bad[0]
            return {"axis": i, "x": X[j].tolist(), "z": float(Z[j]), "k": float(kv[j, i])}
    return None


def is_admissible_box(field, x, box: BoxRegion, epsilon, z_range, density=9) -> bool:
    """Structural and positivity test of a candidate box around ``x``."""
    half = np.asarray(box.half_lengths)
    if np.any(half >= epsilon):
        return False
    if not box.scaled(1.0 / 3.0).contains(x):
        return False
    zs = np.linspace(z_range[0], z_range[1], density)
    return _box_failure(field, box, zs, density) is None


def check_nondegeneracy_box(
    field: CoefficientField,
    x,
    epsilon: float,
    z_range,
    search_budget: int = 1000,
    sample_density: int = 9,
) -> BoxRegion:
    """Find a box ``R`` with ``x`` in ``R/3``, sides ``< epsilon`` and ``k_i > 0`` on each i-wrap.

    Candidates: per-axis half-lengths from ``{eps/2, eps/4, eps/8}`` (largest
    first) and per-axis centre offsets ``j * eps/8`` with ``|offset| <= r/3``,
    ordered ``0, +eps/8, -eps/8, ...``.  The first admissible candidate wins.
    """
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    x = np.asarray(x, dtype=float).ravel()
    if x.size != field.dim:
        raise ParameterError("point dimension does not match the field")
    zs = np.linspace(z_range[0], z_range[1], sample_density)
    radii = (epsilon / 2, epsilon / 4, epsilon / 8)
    step = epsilon / 8
    tried = 0
    best = None
    witness = None
    for half in itertools.product(radii, repeat=field.dim):
        offsets_per_axis = []
        for r in half:
            jmax = int(math.floor((r / 3) / step + 1e-12))
            js = [0] + [s * j for j in range(1, jmax + 1) for s in (1, -1)]
            offsets_per_axis.append([j * step for j in js])
        for offsets in itertools.product(*offsets_per_axis):
            if tried >= search_budget:
                raise NondegeneracyViolation(
                    f"no admissible box within budget {search_budget}", best=best, witness=witness
                )
            tried += 1
            box = BoxRegion(tuple(x + np.asarray(offsets)), half)
            failure = _box_failure(field, box, zs, sample_density)
            if failure is None:
                return box
            best, witness = box, failure
    raise NondegeneracyViolation(
        f"no admissible box among {tried} candidates", best=best, witness=witness
    )


def nondegeneracy_report(field, x, epsilon, z_range, search_budget=1000, sample_density=9):
    """:func:`check_nondegeneracy_box` wrapped as a :class:`ConditionReport`."""
    try:
        box = check_nondegeneracy_box(field, x, epsilon, z_range, search_budget, sample_density)
    except NondegeneracyViolation as exc:
        w = exc.witness or {}
        return ConditionReport(
            "nondegeneracy",
            False,
            math.inf,
            {"x": w.get("x", list(np.ravel(x))), "z": w.get("z", 0.0)},
            0,
            {"witness": w, "best": exc.best.to_dict() if exc.best else None},
        )
    return ConditionReport(
        "nondegeneracy",
        True,
        float(max(box.half_lengths)),
        {"x": [float(v) for v in np.ravel(x)], "z": float(z_range[0])},
        sample_density,
        {"box": box.to_dict(), "z_range": [float(z_range[0]), float(z_range[1])]},
    )
