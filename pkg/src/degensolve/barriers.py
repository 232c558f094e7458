"""Concave majorants, explicit boundary barriers and boundary-continuity checks.

The barrier at a boundary point ``x0`` lives in rotated coordinates
``y = Theta (x - x0)`` with ``y_n`` (the last axis) along the inward normal:

    h(y) = -2 psi(sqrt(rho y_n)) + m1 y_l^2 / 2 + 1 / ln(y_n),

with ``psi = sqrt(omega~)`` and ``rho = (kappa0^{-1/2} + 1)^2``.  It is
meant for the region ``kappa0 |y'|^2 <= y_n < t1`` near a strongly convex
boundary.  Axis indices are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .coefficients import CoefficientField
from .errors import ConstructionError, DataError, ParameterError
from .principles import PrincipleReport
from .solver import DiscreteSolution, _dirichlet_array

SAMPLE_FLOOR = 1e-10
DERIVATIVE_CUTOFF = 1e-8


# ---------------------------------------------------------------------------
# moduli and majorants


@dataclass(frozen=True)
class Modulus:
    """Sampled modulus of continuity ``(r_i, omega_i)`` with ``r_0 = 0``.

    Samples need not be monotone; :func:`concave_majorant` takes care of
    that.  Evaluation is piecewise linear on the running maximum.
    """

    radii: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or r.size < 2:
            raise DataError("modulus needs matching 1-D radii and values (at least 2)")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
            raise DataError("modulus samples must be finite")
        if r[0] != 0.0:
            raise DataError("modulus radii must start at 0")
        if np.any(np.diff(r) <= 0):
            raise DataError("modulus radii must be strictly increasing")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, func: Callable, rbar: float, count: int = 257) -> Modulus:
        r = np.linspace(0.0, rbar, count)
        return cls(r, np.asarray(func(r), dtype=float))

    @property
    def rbar(self) -> float:
        return float(self.radii[-1])

    def __call__(self, r):
        return np.interp(r, self.radii, np.maximum.accumulate(self.values))


def local_modulus(points: np.ndarray, values: np.ndarray, x0, value0: float) -> Modulus:
    """``omega(r) = max{|phi(x) - phi(x0)| : |x - x0| <= r}`` over sampled boundary points."""
    d = np.linalg.norm(np.asarray(points) - np.asarray(x0), axis=1)
    dev = np.abs(np.asarray(values) - value0)
    order = np.argsort(d, kind="stable")
    d, dev = d[order], np.maximum.accumulate(dev[order])
    radii, idx = np.unique(d, return_index=True)
    # value at a radius is the max over all points with that distance
    last = np.r_[idx[1:] - 1, d.size - 1]
    vals = dev[last]
    if radii[0] > 0:
        radii = np.r_[0.0, radii]
        vals = np.r_[0.0, vals]
    else:
        vals[0] = 0.0
    return Modulus(radii, vals)


def _pl_integral(r, u, x):
    """Integral over ``[0, x]`` of the piecewise-linear ``u`` extended by its last value."""
    cum = np.r_[0.0, np.cumsum(0.5 * (u[1:] + u[:-1]) * np.diff(r))]
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    beyond = x >= r[-1]
    out[beyond] = cum[-1] + (x[beyond] - r[-1]) * u[-1]
    xi = x[~beyond]
    k = np.clip(np.searchsorted(r, xi, side="right") - 1, 0, r.size - 2)
    ux = u[k] + (u[k + 1] - u[k]) * (xi - r[k]) / (r[k + 1] - r[k])
    out[~beyond] = cum[k] + 0.5 * (xi - r[k]) * (u[k] + ux)
    return out


@dataclass
class ConcaveMajorant:
    """Concave, strictly increasing majorant on ``[0, rbar]``.

    Sampled majorants evaluate piecewise linearly; first derivatives
    interpolate the interval slopes placed at interval midpoints and second
    derivatives differentiate that interpolant.  Analytic majorants carry
    callables for the value and both derivatives.
    """

    rbar: float
    radii: np.ndarray | None = None
    values: np.ndarray | None = None
    analytic: tuple[Callable, Callable, Callable] | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.analytic is None and (self.radii is None or self.values is None):
            raise ParameterError("majorant needs samples or analytic callables")
        if self.analytic is None:
            self.radii = np.asarray(self.radii, dtype=float)
            self.values = np.asarray(self.values, dtype=float)
            s = np.diff(self.values) / np.diff(self.radii)
            self._slopes = s
            self._mids = 0.5 * (self.radii[1:] + self.radii[:-1])
            curv = np.diff(s) / np.diff(self._mids) if s.size > 1 else np.zeros(0)
            self._curv = np.minimum(curv, 0.0)

    @classmethod
    def from_callables(cls, value, d1, d2, rbar, **provenance) -> ConcaveMajorant:
        return cls(float(rbar), analytic=(value, d1, d2), provenance={"kind": "analytic", **provenance})

    @classmethod
    def power(cls, exponent: float, coeff: float = 1.0, rbar: float = 1.0) -> ConcaveMajorant:
        """``omega(r) = coeff r^exponent`` with ``0 < exponent <= 1``."""
        a, c = float(exponent), float(coeff)
        if not (0 < a <= 1 and c > 0):
            raise ParameterError("power majorant needs 0 < exponent <= 1 and coeff > 0")
        return cls.from_callables(
            lambda r: c * np.power(r, a),
            lambda r: c * a * np.power(r, a - 1),
            lambda r: c * a * (a - 1) * np.power(r, a - 2),
            rbar,
            exponent=a,
            coeff=c,
        )

    @property
    def is_sampled(self) -> bool:
        return self.analytic is None

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.analytic is not None:
            return self.analytic[0](r)
        return np.interp(r, self.radii, self.values)

    def _guard(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < DERIVATIVE_CUTOFF * self.rbar):
            raise ParameterError(
                f"majorant derivatives refused below r = {DERIVATIVE_CUTOFF} * rbar (min r = {r.min()!r})"
            )
        return r

    def d1(self, r):
        r = self._guard(r)
        if self.analytic is not None:
            return self.analytic[1](r)
        return np.interp(r, self._mids, self._slopes)

    def d2(self, r):
        r = self._guard(r)
        if self.analytic is not None:
            return self.analytic[2](r)
        if self._curv.size == 0:
            return np.zeros_like(r)
        k = np.searchsorted(self._mids, r, side="right") - 1
        inside = (k >= 0) & (k < self._curv.size)
        return np.where(inside, self._curv[np.clip(k, 0, self._curv.size - 1)], 0.0)

    # psi = sqrt(omega)
    def psi(self, r):
        return np.sqrt(np.maximum(self(r), 0.0))

    def psi_d1(self, r):
        return self.d1(r) / (2.0 * np.sqrt(self(r)))

    def psi_d2(self, r):
        w = self(r)
        return (2.0 * self.d2(r) * w - self.d1(r) ** 2) / (4.0 * w**1.5)

    def inverse(self, level: float) -> float:
        """Largest ``r`` in ``(0, rbar]`` with ``omega(r) <= level``."""
        if self(self.rbar) <= level:
            return float(self.rbar)
        lo = 0.0
        if self(lo) > level:
            raise ConstructionError("majorant exceeds the level at r = 0", level=level)
        return float(brentq(lambda r: float(self(r)) - level, lo, self.rbar, xtol=1e-15 * self.rbar, rtol=4 * np.finfo(float).eps))

    def to_dict(self) -> dict:
        out = {"rbar": self.rbar, "kind": "analytic" if self.analytic is not None else "sampled"}
        out.update({k: v for k, v in self.provenance.items() if not isinstance(v, np.ndarray)})
        return out


def concave_majorant(mod: Modulus, lift: float | None = None) -> ConcaveMajorant:
    """Concave, strictly increasing majorant of a sampled modulus.

    Stages: running maximum; averaging over ``[1.5 r, 2.5 r]`` (a window
    proportional to the distance from 0, data extended by the last value);
    running maximum plus a small linear lift; replacement of the convex part
    of the slope changes by its chord; a final running maximum and lift so
    the result is strictly increasing.
    """
    r = mod.radii
    u = np.maximum.accumulate(mod.values)
    rbar = r[-1]
    scale = max(1.0, float(np.abs(u).max()))
    lift = max(1e-9 * scale / rbar, 1e-11) if lift is None else float(lift)

    v = np.empty_like(u)
    v[0] = u[0]
    rp = r[1:]
    v[1:] = (_pl_integral(r, u, 2.5 * rp) - _pl_integral(r, u, 1.5 * rp)) / rp

    vt = np.maximum.accumulate(v) + lift * r

    s = np.diff(vt) / np.diff(r)
    ds = np.diff(s)
    pos = np.maximum(ds, 0.0)
    rj = r[1:-1]
    P = np.r_[0.0, np.cumsum(pos)]
    Q = np.r_[0.0, np.cumsum(pos * rj)]
    # w_plus(r_i) = sum_{j < i} pos_j (r_i - r_j), interior knots only
    wplus = np.r_[0.0, r[1:] * P - Q]
    chord = wplus[-1] * r / rbar
    split = vt - wplus + chord

    out = np.maximum.accumulate(split) + lift * r
    out[0] = mod.values[0]
    prov = {
        "kind": "sampled",
        "lift": lift,
        "running_max": u,
        "smoothed": v,
        "lifted": vt,
        "split": split,
    }
    return ConcaveMajorant(float(rbar), radii=r.copy(), values=out, provenance=prov)


# ---------------------------------------------------------------------------
# barrier


def _rho(kappa0: float) -> float:
    return (kappa0**-0.5 + 1.0) ** 2


@dataclass
class Barrier:
    omega: ConcaveMajorant
    kappa0: float
    m1: float
    t1: float
    ell: int
    dim: int
    rotation: np.ndarray | None = None
    x0: np.ndarray | None = None
    alpha0: float = 1.0
    nu: float = 1.0
    c1: float | None = None

    def __post_init__(self):
        if not self.kappa0 > 0:
            raise ParameterError("kappa0 must be positive")
        if not 0 < self.t1 <= 1:
            raise ParameterError("t1 must lie in (0, 1]")
        if not 0 <= self.ell < self.dim:
            raise ParameterError("ell must be a valid axis index")
        self.rotation = np.eye(self.dim) if self.rotation is None else np.asarray(self.rotation, float)
        self.x0 = np.zeros(self.dim) if self.x0 is None else np.asarray(self.x0, float)
        self.rho = _rho(self.kappa0)
        self.r0 = self.omega.inverse(self.alpha0)

    @property
    def normal_axis(self) -> int:
        return self.dim - 1

    def to_y(self, x):
        return (np.atleast_2d(x) - self.x0) @ self.rotation.T

    def to_x(self, y):
        return np.atleast_2d(y) @ self.rotation + self.x0

    # all evaluators take y of shape (N, n) in barrier coordinates
    def h(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        yn = y[:, -1]
        with np.errstate(divide="ignore"):
            logterm = np.where(yn > 0, 1.0 / np.log(np.where(yn > 0, yn, 0.5)), 0.0)
        quad = 0.5 * self.m1 * y[:, self.ell] ** 2
        return quad - 2.0 * self.omega.psi(np.sqrt(self.rho * yn)) + logterm

    def _Gn(self, yn):
        s = np.sqrt(self.rho * yn)
        L = np.log(yn)
        return np.sqrt(self.rho / yn) * self.omega.psi_d1(s) + 1.0 / (L**2 * yn)

    def grad(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        g = np.zeros_like(y)
        g[:, -1] = -self._Gn(y[:, -1])
        g[:, self.ell] += self.m1 * y[:, self.ell]
        return g

    def hess_diag(self, y):
        """Diagonal of ``D^2 h``; off-diagonal entries vanish identically."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        yn = y[:, -1]
        s = np.sqrt(self.rho * yn)
        L = np.log(yn)
        hnn = (self._Gn(yn) - self.rho * self.omega.psi_d2(s)) / (2 * yn) + (2.0 / L + 0.5) / (L**2 * yn**2)
        H = np.zeros_like(y)
        H[:, -1] = hnn
        H[:, self.ell] += self.m1
        return H

    def laplacian(self, y):
        return self.hess_diag(y).sum(axis=1)

    def operator(self, y, field: CoefficientField, m: float):
        """``L_m H = div(A(x, H + m) grad H)`` at ``x = x0 + Theta^T y``."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        T = self.rotation
        x = self.to_x(y)
        z = self.h(y) + m
        gx = self.grad(y) @ T
        Hd = self.hess_diag(y)
        Hx = np.einsum("ki,nk,kj->nij", T, Hd, T)
        A = field.matrix(x, z)
        dA = field.matrix_dz(x, z)
        div = np.zeros_like(gx)
        for i in range(self.dim):
            div += field.matrix_dx(x, z, i)[:, i, :]
        div += np.einsum("nij,ni->nj", dA, gx)
        return np.einsum("nij,nij->n", A, Hx) + np.einsum("nj,nj->n", div, gx)

    def psi_checks(self, count: int = 100) -> dict:
        """Properties of ``psi`` at log-spaced radii in ``(0, r0]``."""
        lo = max(DERIVATIVE_CUTOFF * self.omega.rbar * 10, self.r0 * 1e-6)
        r = np.geomspace(lo, self.r0, count)
        om = self.omega
        psi, p1, p2 = om.psi(r), om.psi_d1(r), om.psi_d2(r)
        a0 = float(om(om.rbar)) / om.rbar
        tol = 1e-12
        return {
            "psi_le_one": bool(np.all(psi <= math.sqrt(self.alpha0) + tol)),
            "psi_concavity": bool(np.all(-p2 - p1**2 / psi >= -tol * (1 + np.abs(p2)))),
            "psi_line": bool(np.all(psi >= np.sqrt(a0 * r) - tol)),
        }

    def certificate(self, margins: dict | None = None) -> dict:
        return {
            "kappa0": self.kappa0,
            "rho": self.rho,
            "m1": self.m1,
            "t1": self.t1,
            "ell": self.ell,
            "nu": self.nu,
            "r0": self.r0,
            "c1": self.c1,
            "x0": [float(v) for v in self.x0],
            "rotation": [[float(v) for v in row] for row in self.rotation],
            "omega": self.omega.to_dict(),
            "margins": dict(margins or {}),
        }


def region_samples(dim, kappa0, t1, r0, count=10_000, floor=SAMPLE_FLOOR, yn_values=None):
    """Samples of ``{kappa0 |y'|^2 <= y_n < t1, |y| < r0, y_n >= floor}``."""
    per = max(int(round(count ** (1.0 / 2))), 2)
    if yn_values is None:
        yn_values = np.geomspace(floor, t1, per + 1)[:-1]
    yn_values = np.asarray(yn_values, dtype=float)
    if dim == 2:
        dirs = np.linspace(-1.0, 1.0, per)[:, None]
    else:
        side = max(int(round(math.sqrt(per))), 2)
        s, th = np.meshgrid(np.linspace(0.0, 1.0, side), np.linspace(0, 2 * np.pi, side, endpoint=False))
        dirs = np.stack([s.ravel() * np.cos(th.ravel()), s.ravel() * np.sin(th.ravel())], axis=1)
        for extra in range(dim - 3):
            dirs = np.c_[dirs, np.zeros(len(dirs))]
    rad = np.sqrt(yn_values / kappa0)
    yp = rad[:, None, None] * dirs[None, :, :]
    Y = np.concatenate([yp, np.broadcast_to(yn_values[:, None, None], yp.shape[:2] + (1,))], axis=2)
    Y = Y.reshape(-1, dim)
    return Y[np.linalg.norm(Y, axis=1) < r0]


def outflow_samples(dim, kappa0, t1, r0, count=200):
    return region_samples(dim, kappa0, t1, r0, count=count * count, yn_values=np.array([t1]))


def _margins(b: Barrier, field, m0, K, Y, Yout) -> dict:
    om = b.omega
    h = b.h(Y)
    hv = float(np.min(-om(np.linalg.norm(Y, axis=1)) - h))
    lap = float(np.min(b.laplacian(Y)))
    Lm = min(float(np.min(b.operator(Y, field, m) - K)) for m in (-m0, 0.0, m0))
    out = float(np.min(-b.nu - b.h(Yout))) if len(Yout) else math.inf
    return {"h_vs_omega": hv, "laplacian": lap, "Lm": Lm, "outflow": out}


def _select_axis(field, dim, kappa0, t, m0, rotation, x0):
    yn = np.geomspace(SAMPLE_FLOOR, t, 25)
    Y = region_samples(dim, kappa0, t, np.inf, yn_values=yn, count=441)
    # boundary side of the paraboloid
    Y[:, -1] = kappa0 * np.sum(Y[:, :-1] ** 2, axis=1)
    X = Y @ rotation + x0
    best = (-np.inf, 0)
    for ell in range(dim):
        d = rotation[ell]
        c = np.inf
        for z in np.linspace(-2 * m0, 2 * m0, 9):
            A = field.matrix(X, np.full(len(X), z))
            c = min(c, float(np.min(np.einsum("i,nij,j->n", d, A, d))))
        if c > best[0]:
            best = (c, ell)
    return best


def build_barrier(
    omega: ConcaveMajorant,
    kappa0: float,
    m0: float,
    K: float,
    field: CoefficientField,
    search_budget: int = 200,
    nu: float | None = None,
    alpha0: float = 1.0,
    eta: float | None = None,
    x0=None,
    rotation=None,
    m1_start: float = 1.0,
) -> Barrier:
    """Choose ``ell``, ``m1`` and ``t1`` by a deterministic sweep.

    ``ell`` maximises the sampled minimum of the directional coefficient
    near the boundary point.  ``m1`` is doubled until ``L_m h >= K`` and
    ``lap h > 0`` hold on a fixed sample lattice (halving ``t1`` instead whenever a
    doubling lowers the ``L_m h`` margin); ``t1`` is then halved until
    ``h <= -omega(|y|)`` and ``h <= -nu`` on the outflow face hold.  Later
    lattices are subsets of the first, so ``m1`` is monotone in ``K``.
    ``nu`` defaults to ``m0``.
    """
    dim = field.dim
    if not kappa0 > 0:
        raise ParameterError("kappa0 must be positive")
    if not 0 < alpha0 <= 1:
        raise ParameterError("alpha0 must lie in (0, 1]")
    nu = float(m0 if nu is None else nu)
    rotation = np.eye(dim) if rotation is None else np.asarray(rotation, dtype=float)
    x0 = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)
    rho = _rho(kappa0)
    r0 = omega.inverse(alpha0)
    t_cap = min(r0**2 / rho, 0.5)
    if eta is not None:
        # |y| <= sqrt(rho y_n) on the region
        t_cap = min(t_cap, eta**2 / rho)
    if not t_cap > SAMPLE_FLOOR:
        raise ConstructionError("no admissible t1 above the sample floor", r0=r0, rho=rho)
    c1, ell = _select_axis(field, dim, kappa0, t_cap, m0, rotation, x0)
    if not c1 > 0:
        raise ConstructionError("no axis with positive directional coefficient", c1=c1)

    halvings = np.array([t_cap * 0.5**k for k in range(64) if t_cap * 0.5**k > 10 * SAMPLE_FLOOR])
    yn = np.unique(np.r_[np.geomspace(SAMPLE_FLOOR, t_cap, 48), halvings])
    Y_all = region_samples(dim, kappa0, t_cap, r0, count=21**2, yn_values=yn)

    m1, t1 = float(m1_start), float(t_cap)
    steps = 0
    last = None
    failing = None
    prev = None  # (m1, Lm margin) of the previous doubling at this t1
    while steps < search_budget:
        steps += 1
        b = Barrier(omega, kappa0, m1, t1, ell, dim, rotation, x0, alpha0, nu, c1)
        Y = Y_all[Y_all[:, -1] <= t1 * (1 + 1e-12)]
        Yout = Y_all[np.abs(Y_all[:, -1] - t1) <= 1e-12 * t1]
        mg = _margins(b, field, m0, K, Y, Yout)
        last = mg
        if mg["Lm"] < 0 or mg["laplacian"] <= 0:
            failing = "Lm" if mg["Lm"] < 0 else "laplacian"
            if failing == "Lm" and prev is not None and mg["Lm"] < prev[1]:
                # doubling made it worse: z-dependent coefficients grow with
                # the quadratic term, so t1 must shrink before m1 can help
                m1, prev = prev[0], None
                if t1 / 2 <= 10 * SAMPLE_FLOOR:
                    break
                t1 /= 2
                continue
            prev = (m1, mg["Lm"])
            m1 *= 2.0
            continue
        prev = None
        if mg["h_vs_omega"] < 0 or mg["outflow"] < 0:
            failing = "h_vs_omega" if mg["h_vs_omega"] < 0 else "outflow"
            t_next = t1 / 2
            if t_next <= 10 * SAMPLE_FLOOR:
                break
            t1 = t_next
            continue
        return b
    raise ConstructionError(
        f"barrier search failed ({failing}) after {steps} steps",
        m1=m1,
        t1=t1,
        failing=failing,
        margins=last,
    )


def verify_barrier(b: Barrier, field: CoefficientField, m0: float, K: float, sample_spec=10_000) -> PrincipleReport:
    """Check the four barrier inequalities on a sample sweep.

    ``sample_spec`` is a sample count or an explicit ``(N, n)`` array of
    points in barrier coordinates (each must lie in the validity region).
    """
    if isinstance(sample_spec, (int, np.integer)):
        Y = region_samples(b.dim, b.kappa0, b.t1, b.r0, count=int(sample_spec))
    else:
        Y = np.atleast_2d(np.asarray(sample_spec, dtype=float))
        ok = (
            (Y[:, -1] >= SAMPLE_FLOOR)
            & (Y[:, -1] < b.t1 * (1 + 1e-12))
            & (b.kappa0 * np.sum(Y[:, :-1] ** 2, axis=1) <= Y[:, -1] * (1 + 1e-12))
            & (np.linalg.norm(Y, axis=1) < b.r0)
        )
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise ParameterError(f"sample {bad} lies outside the barrier's validity region")
    Yout = outflow_samples(b.dim, b.kappa0, b.t1, b.r0, count=max(int(math.sqrt(len(Y))), 10))
    mg = _margins(b, field, m0, K, Y, Yout)
    h0 = float(b.h(np.zeros((1, b.dim)))[0])
    holds = all(v >= 0 for v in mg.values()) and mg["laplacian"] > 0 and h0 == 0.0
    meta = {"h0": h0, "samples": int(len(Y)), "outflow_samples": int(len(Yout)), "certificate": b.certificate(mg)}
    return PrincipleReport("barrier", bool(holds), float(min(mg.values())), None, meta)


# ---------------------------------------------------------------------------
# boundary continuity of solver output


def _inward_rotation(grid, x0):
    """Permutation/sign matrix sending the inward normal at a face point to the last axis."""
    n = grid.dim
    for ax in range(n):
        for side, val in ((1.0, grid.lows[ax]), (-1.0, grid.highs[ax])):
            if abs(x0[ax] - val) <= 1e-12 * (grid.highs[ax] - grid.lows[ax]):
                others = [i for i in range(n) if i != ax]
                T = np.zeros((n, n))
                for row, i in enumerate(others):
                    T[row, i] = 1.0
                T[-1, ax] = side
                return T
    raise ParameterError(f"x0={list(x0)} is not on the grid boundary")


def boundary_modulus_check(ladder: list[DiscreteSolution], dirichlet, barrier_spec: dict) -> PrincipleReport:
    """Uniform-in-eps boundary continuity at ``x0``.

    ``barrier_spec`` keys: ``x0`` (boundary point, a node unless the data are
    callable), ``sigma``, ``field``; optional ``kappa0`` (1), ``m0`` and
    ``nu`` (both ``2 sup|phi|``), ``K`` (sampled ``sup|f|``), ``search_budget``.
    ``delta0`` is the largest sampled radius with ``-h < sigma`` on the
    validity region; every node within ``delta0`` of ``x0`` must satisfy
    ``|w - phi(x0)| <= sigma`` on every rung.
    """
    if not ladder:
        raise ParameterError("empty ladder")
    grid = ladder[0].grid
    sigma = float(barrier_spec["sigma"])
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    field = barrier_spec["field"]
    x0 = np.asarray(barrier_spec["x0"], dtype=float)
    phi = _dirichlet_array(grid, dirichlet)
    pts = grid.points
    bmask = grid.boundary_mask.ravel()
    if callable(dirichlet):
        phi0 = float(np.asarray(dirichlet(*x0)))
    else:
        d = np.linalg.norm(pts - x0, axis=1)
        j = int(np.argmin(d))
        if d[j] > 1e-12:
            raise ParameterError("x0 must be a grid node when dirichlet is an array")
        phi0 = float(phi.ravel()[j])
    rotation = _inward_rotation(grid, x0)
    mod = local_modulus(pts[bmask], phi.ravel()[bmask], x0, phi0)
    diam = float(np.linalg.norm(np.subtract(grid.highs, grid.lows)))

    meta = {"sigma": sigma, "x0": [float(v) for v in x0]}
    if float(mod.values.max()) == 0.0:
        delta0 = diam
        meta["barrier"] = None
    else:
        maj = concave_majorant(mod)
        M0 = float(np.abs(phi.ravel()[bmask]).max())
        m0 = float(barrier_spec.get("m0", 2 * M0))
        nu = float(barrier_spec.get("nu", 2 * M0))
        K = barrier_spec.get("K")
        if K is None:
            K = 0.0
            if field.has_zero_order:
                for z in np.linspace(-2 * M0, 2 * M0, 9):
                    K = max(K, float(np.abs(field.zero(pts, np.full(len(pts), z))).max()))
        b = build_barrier(
            maj,
            float(barrier_spec.get("kappa0", 1.0)),
            m0,
            float(K),
            field,
            int(barrier_spec.get("search_budget", 200)),
            nu=nu,
            x0=x0,
            rotation=rotation,
        )
        Y = region_samples(b.dim, b.kappa0, b.t1, b.r0, count=int(barrier_spec.get("samples", 10_000)))
        rad = np.linalg.norm(Y, axis=1)
        bad = -b.h(Y) >= sigma
        delta0 = float(rad[bad].min()) if np.any(bad) else float(rad.max())
        meta["barrier"] = b.certificate()
    meta["delta0"] = delta0

    near = np.linalg.norm(pts - x0, axis=1) < delta0
    worst, witness, per_rung = -np.inf, None, []
    for sol in ladder:
        dev = np.abs(sol.values.ravel() - phi0)
        dev = np.where(near, dev, -np.inf)
        j = int(np.argmax(dev))
        val = float(dev[j]) if near.any() else 0.0
        per_rung.append({"eps": sol.eps, "max_dev": val})
        if near.any() and val > worst:
            worst, witness = val, tuple(int(i) for i in np.unravel_index(j, grid.shape))
    worst = max(worst, 0.0)
    meta["per_rung"] = per_rung
    meta["nodes_checked"] = int(near.sum())
    margin = sigma - worst
    return PrincipleReport("boundary_modulus", bool(margin >= 0), margin, witness, meta)
