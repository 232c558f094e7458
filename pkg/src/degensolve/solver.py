"""Finite-difference solver for the truncated, regularised Dirichlet problem.

For ``eps > 0`` and a truncation level ``M`` the discrete operator is

    R(w) = div_h(A(x, chi(w)) grad_h w) + gamma(x, chi(w)) . grad_up w
           + f(x, chi(w)) + eps * lap_h w,

with ``chi = chi_M`` a smooth clamp.  Diagonal diffusion uses face
coefficients that are arithmetic means of the two neighbouring nodes,
off-diagonal entries use mixed centred differences and the drift is
upwinded.  The Jacobian is assembled exactly (including the ``chi'`` chain
terms) and the system is solved by damped Newton with a sparse direct solve.
:func:`viscosity_continuation` walks ``eps`` down a ladder with warm starts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .coefficients import CoefficientField, make_builtin_family
from .errors import DataError, NumericalError, ParameterError
from .grid import StructuredGrid

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# truncation


def _smoothstep(t):
    return t**3 * (10 - 15 * t + 6 * t**2)


@dataclass(frozen=True)
class TruncationProfile:
    """Odd clamp with ``chi(z) = z`` on ``|z| <= M`` and ``+-1.5 M`` on ``|z| >= 2M``.

    On ``M <= |z| <= 2M`` the slope ``chi'`` decreases from 1 to 0 along a
    quintic smoothstep, so ``0 <= chi' <= 1`` everywhere and ``chi`` is
    ``C^3``.
    """

    M: float

    def __post_init__(self):
        if not self.M > 0:
            raise ParameterError(f"truncation level must be positive, got {self.M}")

    def value(self, z):
        z = np.asarray(z, dtype=float)
        a = np.abs(z)
        t = np.clip((a - self.M) / self.M, 0.0, 1.0)
        # M * integral_0^t (1 - smoothstep)
        blend = self.M * (1.0 + t - t**6 + 3 * t**5 - 2.5 * t**4)
        out = np.where(a <= self.M, z, np.sign(z) * blend)
        return out if out.ndim else float(out)

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        a = np.abs(z)
        t = np.clip((a - self.M) / self.M, 0.0, 1.0)
        out = np.where(a <= self.M, 1.0, 1.0 - _smoothstep(t))
        return out if out.ndim else float(out)

    __call__ = value


def build_truncation(M: float) -> TruncationProfile:
    return TruncationProfile(float(M))


# ---------------------------------------------------------------------------
# configuration and results


def default_eps_ladder(levels: int = 21) -> tuple[float, ...]:
    return tuple(2.0**-k for k in range(levels))


@dataclass
class SolverConfig:
    eps_ladder: tuple[float, ...] = field(default_factory=default_eps_ladder)
    newton_tol: float = 1e-10
    max_newton_iters: int = 60
    damping: float = 0.5
    min_step: float = 2.0**-30
    M: float | None = None

    def __post_init__(self):
        ladder = tuple(float(e) for e in self.eps_ladder)
        if not ladder:
            raise ParameterError("eps_ladder must not be empty")
        if any(e <= 0 for e in ladder):
            raise ParameterError("eps_ladder entries must be positive")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ParameterError("eps_ladder must be strictly decreasing")
        self.eps_ladder = ladder
        if not self.newton_tol > 0:
            raise ParameterError("newton_tol must be positive")
        if not 0 < self.damping < 1:
            raise ParameterError("damping must lie in (0, 1)")
        if self.M is not None and not self.M > 0:
            raise ParameterError("M must be positive")

    def to_dict(self) -> dict:
        return {
            "eps_ladder": list(self.eps_ladder),
            "newton_tol": self.newton_tol,
            "max_newton_iters": self.max_newton_iters,
            "damping": self.damping,
            "min_step": self.min_step,
            "M": self.M,
        }


@dataclass
class DiscreteSolution:
    grid: StructuredGrid
    values: np.ndarray
    eps: float
    M: float
    residual_norm: float
    newton_iters: int
    history: list = field(default_factory=list)
    rung_change: float | None = None

    def boundary_values(self) -> np.ndarray:
        return self.values[self.grid.boundary_mask]

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior_mask]

    def summary(self) -> dict:
        return {
            "eps": self.eps,
            "M": self.M,
            "residual_norm": self.residual_norm,
            "newton_iters": self.newton_iters,
            "rung_change": self.rung_change,
        }


# ---------------------------------------------------------------------------
# assembly


def _flat_index(shape):
    return np.arange(int(np.prod(shape))).reshape(shape)


def _shift_slices(dim, axis, lo, hi):
    """Slices selecting nodes with index in ``[lo, n + hi)`` along ``axis``."""
    sl = [slice(None)] * dim
    sl[axis] = slice(lo, None if hi == 0 else hi)
    return tuple(sl)


class _Assembler:
    """Residual/Jacobian builder for one (field, grid) pair."""

    def __init__(self, field: CoefficientField, grid: StructuredGrid):
        if field.dim != grid.dim:
            raise ParameterError(f"field is {field.dim}D but grid is {grid.dim}D")
        self.field = field
        self.grid = grid
        self.idx = _flat_index(grid.shape)
        self.points = grid.points
        self.interior = grid.interior_mask.ravel()

    def __call__(self, w, eps, trunc: TruncationProfile, newton=True):
        g = self.grid
        F = self.field
        n = g.dim
        h = g.spacing
        N = g.size
        w = np.asarray(w, dtype=float).reshape(g.shape)
        wf = w.ravel()
        zt = np.asarray(trunc.value(wf))
        dchi = np.asarray(trunc.derivative(wf)) if newton else np.zeros(N)

        A = F.matrix(self.points, zt)
        dA = F.matrix_dz(self.points, zt) * dchi[:, None, None] if newton else np.zeros_like(A)
        if not np.all(np.isfinite(A)):
            bad = int(np.flatnonzero(~np.isfinite(A).all(axis=(1, 2)))[0])
            raise DataError(f"non-finite diffusion matrix at node {np.unravel_index(bad, g.shape)}")

        R = np.zeros(N)
        rows, cols, vals = [], [], []

        def add(r, c, v):
            rows.append(r)
            cols.append(c)
            vals.append(v)

        # diagonal diffusion (+ eps Laplacian) in flux form
        for i in range(n):
            lo = self.idx[_shift_slices(n, i, 0, -1)].ravel()
            hi = self.idx[_shift_slices(n, i, 1, 0)].ravel()
            a_face = 0.5 * (A[lo, i, i] + A[hi, i, i]) + eps
            dw = (wf[hi] - wf[lo]) / h[i]
            flux = a_face * dw
            d_lo = 0.5 * dA[lo, i, i] * dw - a_face / h[i]
            d_hi = 0.5 * dA[hi, i, i] * dw + a_face / h[i]
            np.add.at(R, lo, flux / h[i])
            np.add.at(R, hi, -flux / h[i])
            add(lo, lo, d_lo / h[i])
            add(lo, hi, d_hi / h[i])
            add(hi, lo, -d_lo / h[i])
            add(hi, hi, -d_hi / h[i])

        # off-diagonal diffusion: d_i(a_ij d_j w), mixed centred differences
        off = A.copy()
        off[:, np.arange(n), np.arange(n)] = 0.0
        if np.any(off != 0) or np.any(dA[:, ~np.eye(n, dtype=bool)] != 0):
            self._mixed_terms(A, dA, wf, R, add)

        p = self.idx[tuple([slice(1, -1)] * n)].ravel()

        # upwinded drift
        if F.has_drift:
            gam = F.drift(self.points[p], zt[p])
            dgam = F.drift_dz(self.points[p], zt[p]) * dchi[p, None] if newton else np.zeros_like(gam)
            strides = np.array([int(np.prod(g.shape[i + 1 :])) for i in range(n)])
            for i in range(n):
                fwd = gam[:, i] > 0
                nb = np.where(fwd, p + strides[i], p - strides[i])
                sgn = np.where(fwd, 1.0, -1.0)
                D = sgn * (wf[nb] - wf[p]) / h[i]
                R[p] += gam[:, i] * D
                add(p, nb, gam[:, i] * sgn / h[i])
                add(p, p, -gam[:, i] * sgn / h[i] + dgam[:, i] * D)

        # zero-order term
        if F.has_zero_order:
            R[p] += F.zero(self.points[p], zt[p])
            if newton:
                add(p, p, F.zero_dz(self.points[p], zt[p]) * dchi[p])

        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        keep = self.interior[r]
        J = sp.coo_matrix((v[keep], (r[keep], c[keep])), shape=(N, N)).tocsr()
        bnd = np.flatnonzero(~self.interior)
        J = J + sp.csr_matrix((np.ones(bnd.size), (bnd, bnd)), shape=(N, N))
        R[~self.interior] = 0.0
        return R, J

    def _mixed_terms(self, A, dA, wf, R, add):
        g = self.grid
        n = g.dim
        h = g.spacing
        strides = np.array([int(np.prod(g.shape[i + 1 :])) for i in range(n)])
        p = self.idx[tuple([slice(1, -1)] * n)].ravel()
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                si, sj = strides[i], strides[j]
                acc = np.zeros(p.size)
                for sgn_i in (1, -1):
                    q = p + sgn_i * si
                    qp, qm = q + sj, q - sj
                    cd = (wf[qp] - wf[qm]) / (2 * h[j])
                    scale = sgn_i / (2 * h[i])
                    acc += scale * A[q, i, j] * cd
                    add(p, qp, scale * A[q, i, j] / (2 * h[j]))
                    add(p, qm, -scale * A[q, i, j] / (2 * h[j]))
                    add(p, q, scale * dA[q, i, j] * cd)
                R[p] += acc


_ASSEMBLER_CACHE: dict = {}


def _assembler(field, grid):
    key = (id(field), grid)
    cached = _ASSEMBLER_CACHE.get(key)
    if cached is None or cached.field is not field:
        if len(_ASSEMBLER_CACHE) > 16:
            _ASSEMBLER_CACHE.clear()
        cached = _Assembler(field, grid)
        _ASSEMBLER_CACHE[key] = cached
    return cached


def assemble_residual(
    field: CoefficientField,
    grid: StructuredGrid,
    w,
    eps: float,
    trunc: TruncationProfile,
):
    """Residual at every node and its exact sparse Jacobian.

    Boundary rows of the Jacobian are identity rows and the boundary entries
    of the residual are zero (the iterate carries the Dirichlet data).
    """
    w = np.asarray(w, dtype=float)
    if w.size != grid.size:
        raise ParameterError("w does not match the grid")
    return _assembler(field, grid)(w, eps, trunc, newton=True)


def assemble_operator(field, grid, w, eps, trunc):
    """Frozen-coefficient operator at ``w`` (no ``chi'`` chain terms).

    ``R(w) = L_w w`` exactly, so sign properties of ``L_w`` govern the
    discrete maximum principle at a converged solution.
    """
    _, L = _assembler(field, grid)(np.asarray(w, dtype=float), eps, trunc, newton=False)
    return L


def is_m_matrix(L: sp.spmatrix, rows, tol: float = 1e-12) -> bool:
    """Sign pattern and weak diagonal dominance of ``-L`` on ``rows``.

    Off-diagonal entries of ``L`` in the given rows must be nonnegative and
    every row sum nonpositive, i.e. ``-L`` is a weakly diagonally dominant
    Z-matrix.
    """
    rows = np.asarray(rows)
    L = sp.csr_matrix(L)[rows]
    coo = L.tocoo()
    offd = rows[coo.row] != coo.col
    scale = max(1.0, float(abs(L).max()))
    if np.any(coo.data[offd] < -tol * scale):
        return False
    row_sums = np.asarray(L.sum(axis=1)).ravel()
    return bool(np.all(row_sums <= tol * scale))


# ---------------------------------------------------------------------------
# Newton


def _dirichlet_array(grid: StructuredGrid, dirichlet) -> np.ndarray:
    if callable(dirichlet):
        phi = grid.evaluate(dirichlet)
    else:
        phi = np.asarray(dirichlet, dtype=float)
        if phi.size == 1:
            phi = np.full(grid.shape, float(phi))
        phi = phi.reshape(grid.shape)
    if not np.all(np.isfinite(phi[grid.boundary_mask])):
        raise ParameterError("Dirichlet data must be finite on the boundary")
    return phi


def harmonic_extension(grid: StructuredGrid, dirichlet) -> np.ndarray:
    """Discrete harmonic function with the given boundary values."""
    phi = _dirichlet_array(grid, dirichlet)
    w0 = np.where(grid.boundary_mask, phi, 0.0)
    ident = make_builtin_family("identity", [grid.dim])
    R, J = assemble_residual(ident, grid, w0, 1.0, TruncationProfile(1.0))
    inner = np.flatnonzero(grid.interior_mask.ravel())
    delta = spsolve(sp.csc_matrix(J[inner][:, inner]), -R[inner])
    w = w0.ravel().copy()
    w[inner] += delta
    return w.reshape(grid.shape)


def newton_solve(
    field: CoefficientField,
    grid: StructuredGrid,
    dirichlet,
    eps: float,
    trunc: TruncationProfile,
    config: SolverConfig | None = None,
    initial=None,
) -> DiscreteSolution:
    """Solve ``R(w) = 0`` with damped Newton.

    Backtracking halves the step until the Euclidean residual norm decreases
    (Armijo factor ``1e-4``); convergence is declared on the interior max-norm.
    """
    config = config or SolverConfig()
    if not eps > 0:
        raise ParameterError("eps must be positive")
    phi = _dirichlet_array(grid, dirichlet)
    bmask = grid.boundary_mask
    if initial is None:
        w = harmonic_extension(grid, phi)
    else:
        w = np.asarray(initial, dtype=float).reshape(grid.shape).copy()
    w[bmask] = phi[bmask]
    w = w.ravel()
    inner = np.flatnonzero(grid.interior_mask.ravel())

    R, J = assemble_residual(field, grid, w, eps, trunc)
    rnorm = float(np.abs(R[inner]).max(initial=0.0))
    history = [rnorm]
    iters = 0
    while rnorm > config.newton_tol:
        if iters >= config.max_newton_iters:
            raise NumericalError(
                f"Newton hit the iteration cap ({config.max_newton_iters}) at eps={eps}",
                iterate=w.reshape(grid.shape),
                history=history,
                eps=eps,
            )
        Jii = sp.csc_matrix(J[inner][:, inner])
        delta = spsolve(Jii, -R[inner])
        if not np.all(np.isfinite(delta)):
            raise NumericalError("singular Newton system", iterate=w.reshape(grid.shape), history=history, eps=eps)
        r2 = float(np.linalg.norm(R[inner]))
        t = 1.0
        while True:
            trial = w.copy()
            trial[inner] += t * delta
            R_t, J_t = assemble_residual(field, grid, trial, eps, trunc)
            if np.linalg.norm(R_t[inner]) <= (1 - 1e-4 * t) * r2:
                break
            t *= config.damping
            if t < config.min_step:
                raise NumericalError(
                    f"line search reached the damping floor at eps={eps}",
                    iterate=w.reshape(grid.shape),
                    history=history,
                    eps=eps,
                )
        w, R, J = trial, R_t, J_t
        rnorm = float(np.abs(R[inner]).max(initial=0.0))
        history.append(rnorm)
        iters += 1
    log.debug("eps=%g converged in %d Newton steps, |R|=%.3e", eps, iters, rnorm)
    values = w.reshape(grid.shape)
    values[bmask] = phi[bmask]
    return DiscreteSolution(grid, values, float(eps), trunc.M, rnorm, iters, history)


def viscosity_continuation(
    field: CoefficientField,
    grid: StructuredGrid,
    dirichlet,
    config: SolverConfig | None = None,
    callback: Callable | None = None,
) -> list[DiscreteSolution]:
    """Solve down ``config.eps_ladder``, warm-starting each rung.

    ``M`` defaults to ``sup |dirichlet|`` on the boundary (1 if the data
    vanish).  Each returned solution records ``rung_change``, the sup-norm
    distance to the previous rung.
    """
    config = config or SolverConfig()
    phi = _dirichlet_array(grid, dirichlet)
    M = config.M
    if M is None:
        sup = float(np.abs(phi[grid.boundary_mask]).max())
        M = sup if sup > 0 else 1.0
    trunc = build_truncation(M)
    ladder = []
    warm = None
    for eps in config.eps_ladder:
        try:
            sol = newton_solve(field, grid, phi, eps, trunc, config, initial=warm)
        except NumericalError as exc:
            exc.state.setdefault("eps", eps)
            exc.args = (f"{exc.args[0]} (continuation rung eps={eps})",)
            raise
        if ladder:
            sol.rung_change = float(np.abs(sol.values - ladder[-1].values).max())
        ladder.append(sol)
        warm = sol.values
        if callback is not None:
            callback(sol)
    return ladder
