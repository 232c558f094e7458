"""Post-processing checks of maximum, comparison and interior-regularity behaviour."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientField
from .errors import ParameterError
from .grid import StructuredGrid
from .solver import (
    DiscreteSolution,
    SolverConfig,
    _dirichlet_array,
    viscosity_continuation,
)


@dataclass
class PrincipleReport:
    name: str
    holds: bool
    margin: float
    witness: tuple | None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "holds": bool(self.holds),
            "margin": float(self.margin),
            "witness": None if self.witness is None else [int(i) for i in self.witness],
            "metadata": self.metadata,
        }


def _sample_f_sign(field: CoefficientField, grid: StructuredGrid, zmax: float, count: int = 9):
    """Sampled violations of ``f sign z <= 0`` and ``f_z <= 0`` (zero-order term)."""
    if not field.has_zero_order:
        return []
    pts = grid.points
    zs = np.linspace(-zmax, zmax, count)
    issues = []
    for z in zs:
        zz = np.full(len(pts), z)
        if np.any(field.zero(pts, zz) * np.sign(z) > 1e-14):
            issues.append(f"f(x,z) sign z > 0 at z={z!r}")
        if np.any(field.zero_dz(pts, zz) > 1e-14):
            issues.append(f"f_z > 0 at z={z!r}")
    return issues


def check_maximum_principle(
    sol: DiscreteSolution,
    dirichlet,
    field: CoefficientField | None = None,
) -> PrincipleReport:
    """``max_interior |w| <= max_boundary |phi| + 1e-8 (1 + sup|phi|)``.

    If ``field`` is given, the sign conditions on its zero-order term are
    sampled and any violation is recorded as a warning in the metadata.
    """
    grid = sol.grid
    try:
        phi = _dirichlet_array(grid, dirichlet)
    except ValueError as exc:
        raise ParameterError(f"dirichlet data do not match the grid: {exc}") from exc
    values = np.asarray(sol.values)
    if values.shape != grid.shape:
        raise ParameterError("solution values do not match the grid")
    bound = float(np.abs(phi[grid.boundary_mask]).max())
    tol = 1e-8 * (1.0 + bound)
    inner = np.where(grid.interior_mask, np.abs(values), -np.inf)
    flat = int(np.argmax(inner))
    peak = float(inner.ravel()[flat])
    margin = bound + tol - peak
    meta = {"eps": sol.eps, "boundary_sup": bound, "interior_sup": peak, "tol": tol}
    if field is not None:
        warnings = _sample_f_sign(field, grid, max(bound, 1.0))
        if warnings:
            meta["precondition_warning"] = warnings
    return PrincipleReport(
        "maximum", bool(margin >= 0), margin, tuple(np.unravel_index(flat, grid.shape)), meta
    )


def check_comparison(
    field: CoefficientField,
    grid: StructuredGrid,
    phi0,
    phi1,
    kappa: float,
    config: SolverConfig | None = None,
    tol: float = 1e-8,
) -> PrincipleReport:
    """Solve with data ``phi0`` and ``phi1`` and test ``w0 + kappa >= w1 - tol``."""
    config = config or SolverConfig()
    if field.has_drift:
        raise ParameterError("comparison check requires a field with zero drift")
    if field.has_zero_order:
        bad = [s for s in _sample_f_sign(field, grid, 10.0) if s.startswith("f_z")]
        if bad:
            raise ParameterError(f"comparison check requires f_z <= 0 ({bad[0]})")
    p0 = _dirichlet_array(grid, phi0)
    p1 = _dirichlet_array(grid, phi1)
    b = grid.boundary_mask
    gap = p0[b] + kappa - p1[b]
    if np.any(gap < 0):
        raise ParameterError(f"boundary ordering violated: min(phi0 + kappa - phi1) = {gap.min()!r}")
    if config.M is None:
        # one truncation level for both problems so the operators agree
        sup = float(max(np.abs(p0[b]).max(), np.abs(p1[b]).max()))
        config = SolverConfig(**{**config.to_dict(), "M": sup if sup > 0 else 1.0})
    w0 = viscosity_continuation(field, grid, p0, config)[-1].values
    w1 = viscosity_continuation(field, grid, p1, config)[-1].values
    slack = w0 + kappa - w1
    flat = int(np.argmin(slack))
    margin = float(slack.ravel()[flat]) + tol
    meta = {
        "kappa": float(kappa),
        "eps": config.eps_ladder[-1],
        "tol": tol,
        "min_slack": float(slack.ravel()[flat]),
    }
    return PrincipleReport(
        "comparison", bool(margin >= 0), margin, tuple(np.unravel_index(flat, grid.shape)), meta
    )


def _shrunk_slices(grid: StructuredGrid, shrink: float):
    """Index ranges of nodes inside the box shrunk about its centre, one node off the edge."""
    sl = []
    for ax, lo, hi in zip(grid.axes, grid.lows, grid.highs):
        c, r = 0.5 * (lo + hi), 0.5 * (hi - lo) * shrink
        inside = np.flatnonzero(np.abs(ax - c) <= r + 1e-12 * (hi - lo))
        i0, i1 = max(int(inside[0]), 1), min(int(inside[-1]), len(ax) - 2)
        if i1 < i0:
            raise ParameterError("shrunk subdomain contains no interior nodes")
        sl.append((i0, i1 + 1))
    return sl


def derivative_norms(values: np.ndarray, grid: StructuredGrid, shrink: float):
    """Max gradient and Hessian (spectral) norms over the shrunk subdomain.

    Centred differences only; the stencils never leave the grid because the
    subdomain stays one node away from the boundary.
    """
    n = grid.dim
    h = grid.spacing
    ranges = _shrunk_slices(grid, shrink)

    def shifted(offsets):
        return values[tuple(slice(a + o, b + o) for (a, b), o in zip(ranges, offsets))]

    e = np.eye(n, dtype=int)
    center = shifted([0] * n)
    grad = np.stack([(shifted(e[i]) - shifted(-e[i])) / (2 * h[i]) for i in range(n)], axis=-1)
    H = np.empty(center.shape + (n, n))
    for i in range(n):
        H[..., i, i] = (shifted(e[i]) - 2 * center + shifted(-e[i])) / h[i] ** 2
        for j in range(i + 1, n):
            mixed = (
                shifted(e[i] + e[j]) - shifted(e[i] - e[j]) - shifted(-e[i] + e[j]) + shifted(-e[i] - e[j])
            ) / (4 * h[i] * h[j])
            H[..., i, j] = H[..., j, i] = mixed
    gnorm = np.linalg.norm(grad, axis=-1)
    hnorm = np.abs(np.linalg.eigvalsh(H)).max(axis=-1)
    gi = np.unravel_index(int(np.argmax(gnorm)), gnorm.shape)
    hi = np.unravel_index(int(np.argmax(hnorm)), hnorm.shape)
    offset = [a for a, _ in ranges]
    return (
        float(gnorm[gi]),
        tuple(int(i + o) for i, o in zip(gi, offset)),
        float(hnorm[hi]),
        tuple(int(i + o) for i, o in zip(hi, offset)),
    )


def interior_regularity_report(
    ladder: list[DiscreteSolution],
    shrink: float = 0.5,
    factor: float = 10.0,
) -> PrincipleReport:
    """No-blow-up check of interior derivatives along the viscosity ladder.

    Holds when every rung's gradient and Hessian maxima on the shrunk
    subdomain stay within ``factor`` times the first rung's values.  The raw
    per-rung table is always included.
    """
    if len(ladder) < 3:
        raise ParameterError("interior_regularity_report needs at least 3 rungs")
    if not 0 < shrink < 1:
        raise ParameterError("shrink must lie in (0, 1)")
    table = []
    for sol in ladder:
        g, gw, H, hw = derivative_norms(sol.values, sol.grid, shrink)
        table.append({"eps": sol.eps, "grad_max": g, "grad_at": list(gw), "hess_max": H, "hess_at": list(hw)})
    g0, h0 = table[0]["grad_max"], table[0]["hess_max"]
    scale = 1e-12 * (1.0 + max(g0, h0))
    margin, witness = np.inf, None
    for row in table:
        for key, ref, at in (("grad_max", g0, "grad_at"), ("hess_max", h0, "hess_at")):
            slack = factor * ref + scale - row[key]
            if slack < margin:
                margin, witness = slack, tuple(row[at])
    meta = {"shrink": shrink, "factor": factor, "table": table}
    return PrincipleReport("interior_bounds", bool(margin >= 0), float(margin), witness, meta)
