import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degensolve.barriers import (
    Barrier,
    ConcaveMajorant,
    Modulus,
    boundary_modulus_check,
    build_barrier,
    concave_majorant,
    local_modulus,
    region_samples,
    verify_barrier,
)
from degensolve.coefficients import make_builtin_family
from degensolve.errors import ConstructionError, DataError, ParameterError
from degensolve.grid import StructuredGrid
from degensolve.solver import SolverConfig, default_eps_ladder, viscosity_continuation

IDENT = make_builtin_family("identity", [2])
FEDII = make_builtin_family("fedii", [])


def _second_diff(r, v):
    dv, dr = np.diff(v), np.diff(r)
    # second differences in value units, nonuniform spacing
    return dv[1:] - dv[:-1] * dr[1:] / dr[:-1]


def _assert_majorant(mod, maj, tol=1e-10):
    r = mod.radii
    v = maj(r)
    assert np.all(v >= np.maximum.accumulate(mod.values) - tol)
    assert np.all(np.diff(v) > 0)
    assert _second_diff(r, v).max() <= tol * max(1.0, v.max())


# --- moduli and majorants ------------------------------------------------


def test_modulus_validation():
    with pytest.raises(DataError):
        Modulus([0.1, 0.2], [0.0, 1.0])
    with pytest.raises(DataError):
        Modulus([0.0, 0.2, 0.2], [0.0, 1.0, 1.0])
    with pytest.raises(DataError):
        Modulus([0.0, 1.0], [0.0, np.nan])


def test_local_modulus_simple():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [-1.0, 0.0]])
    mod = local_modulus(pts, np.array([0.0, 0.5, 0.1, 0.2]), [0.0, 0.0], 0.0)
    assert list(mod.radii) == [0.0, 1.0, 2.0]
    assert list(mod.values) == [0.0, 0.5, 0.5]


def test_majorant_of_linear_is_linear():
    mod = Modulus.from_function(lambda r: r, 1.0)
    maj = concave_majorant(mod)
    _assert_majorant(mod, maj)
    # averaging over [1.5r, 2.5r] doubles a linear modulus on the interior
    assert maj(0.2) == pytest.approx(0.4, rel=1e-6)


def test_majorant_of_convex_modulus():
    mod = Modulus.from_function(lambda r: r**2, 1.0)
    _assert_majorant(mod, concave_majorant(mod))


def test_majorant_of_steep_step():
    mod = Modulus.from_function(lambda r: np.where(r > 0.3, 1.0, 0.0), 1.0, count=301)
    maj = concave_majorant(mod)
    _assert_majorant(mod, maj)
    assert maj(0.0) == 0.0


def test_majorant_of_zero_modulus():
    mod = Modulus.from_function(lambda r: 0 * r, 1.0)
    maj = concave_majorant(mod)
    assert maj(0.0) == 0.0 and np.all(np.diff(maj(mod.radii)) > 0)


@settings(max_examples=100)
@given(
    st.lists(st.floats(0.0, 5.0), min_size=3, max_size=40),
    st.lists(st.floats(1e-3, 1.0), min_size=3, max_size=40),
)
def test_majorant_properties(vals, steps):
    k = min(len(vals), len(steps))
    r = np.r_[0.0, np.cumsum(steps[: k - 1])]
    v = np.r_[0.0, np.asarray(vals[1:k])]
    mod = Modulus(r, v)
    _assert_majorant(mod, concave_majorant(mod), tol=1e-9)


def test_sampled_derivatives_refused_near_zero():
    maj = concave_majorant(Modulus.from_function(np.sqrt, 1.0))
    with pytest.raises(ParameterError):
        maj.d1(1e-9)
    with pytest.raises(ParameterError):
        maj.d2(0.0)
    assert np.isfinite(maj.d1(1e-3))


def test_power_majorant_and_inverse():
    maj = ConcaveMajorant.power(0.5, rbar=4.0)
    assert maj.inverse(1.0) == pytest.approx(1.0, rel=1e-12)
    assert maj.inverse(10.0) == 4.0
    with pytest.raises(ParameterError):
        ConcaveMajorant.power(1.5)


# --- barrier evaluation --------------------------------------------------


def _linear_barrier(**kw):
    args = dict(omega=ConcaveMajorant.power(1.0), kappa0=1.0, m1=2.0, t1=0.25, ell=0, dim=2)
    args.update(kw)
    return Barrier(**args)


def test_barrier_vanishes_at_origin():
    assert _linear_barrier().h(np.zeros((1, 2)))[0] == 0.0


def test_barrier_formula_value():
    b = _linear_barrier()
    assert b.rho == 4.0
    expect = -2 * (4e-4) ** 0.25 + 1 / math.log(1e-4)
    assert b.h([[0.0, 1e-4]])[0] == pytest.approx(expect, rel=1e-12)
    assert b.h([[0.0, 1e-4]])[0] == pytest.approx(-0.3914, abs=5e-5)


def test_barrier_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        _linear_barrier(t1=1.5)
    with pytest.raises(ParameterError):
        _linear_barrier(kappa0=0.0)
    with pytest.raises(ParameterError):
        _linear_barrier(ell=2)


@pytest.mark.parametrize("ell", [0, 1])
@pytest.mark.parametrize("omega", [ConcaveMajorant.power(0.5), ConcaveMajorant.power(1.0)])
def test_barrier_gradient_and_laplacian(omega, ell):
    # ell = 1 puts the quadratic term on the normal axis
    b = _linear_barrier(omega=omega, ell=ell)
    Y = region_samples(2, 1.0, 0.25, b.r0, count=400, floor=1e-4)
    h = 1e-7
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (b.h(Y + e) - b.h(Y - e)) / (2 * h)
        assert np.abs(fd - b.grad(Y)[:, k]).max() <= 1e-5 * (1 + np.abs(fd).max())
    h2 = 1e-5
    lap = sum(
        (b.h(Y + h2 * e) - 2 * b.h(Y) + b.h(Y - h2 * e)) / h2**2 for e in np.eye(2)
    )
    # finite differences lose accuracy close to y_n = 0; compare away from it
    far = Y[:, -1] > 1e-2
    rel = np.abs(lap[far] - b.laplacian(Y[far])) / np.abs(b.laplacian(Y[far]))
    assert rel.max() <= 1e-3


def test_psi_checks_pass():
    b = build_barrier(ConcaveMajorant.power(0.5), 1.0, 1.0, 1.0, IDENT)
    assert all(b.psi_checks().values())


# --- construction and verification --------------------------------------


def test_build_and_verify_identity():
    b = build_barrier(ConcaveMajorant.power(0.5), 1.0, 1.0, 1.0, IDENT)
    rep = verify_barrier(b, IDENT, 1.0, 1.0, 10_000)
    assert rep.holds
    assert rep.metadata["h0"] == 0.0
    margins = rep.metadata["certificate"]["margins"]
    assert set(margins) == {"h_vs_omega", "laplacian", "Lm", "outflow"}
    assert all(v >= 0 for v in margins.values())


def test_m1_monotone_in_K():
    m1s = [build_barrier(ConcaveMajorant.power(0.5), 1.0, 1.0, K, IDENT).m1 for K in (1.0, 10.0, 100.0)]
    assert m1s == sorted(m1s)


def test_sampled_majorant_barrier():
    maj = concave_majorant(Modulus.from_function(lambda r: 0.5 * r, 2.0, count=513))
    b = build_barrier(maj, 1.0, 0.5, 0.0, IDENT)
    assert verify_barrier(b, IDENT, 0.5, 0.0, 2_500).holds


def test_explicit_samples_outside_region():
    b = build_barrier(ConcaveMajorant.power(0.5), 1.0, 1.0, 1.0, IDENT)
    with pytest.raises(ParameterError, match="outside"):
        verify_barrier(b, IDENT, 1.0, 1.0, np.array([[0.5, 0.01]]))


def test_large_nu_cannot_be_reached():
    # h is bounded below near the outflow face, so an outflow level far
    # beyond -2 - 1/|ln t1| is out of reach however small t1 becomes
    with pytest.raises(ConstructionError) as info:
        build_barrier(ConcaveMajorant.power(0.5), 1.0, 1.0, 1.0, IDENT, nu=50.0)
    assert info.value.state["failing"] == "outflow"


def test_search_budget_exhaustion():
    with pytest.raises(ConstructionError):
        build_barrier(ConcaveMajorant.power(0.5), 1.0, 1.0, 1e6, IDENT, search_budget=3)


# --- boundary continuity -------------------------------------------------


def test_boundary_check_constant_data():
    g = StructuredGrid.square(-1, 1, 9)
    ladder = viscosity_continuation(FEDII, g, 0.3, SolverConfig(eps_ladder=default_eps_ladder(5)))
    rep = boundary_modulus_check(ladder, 0.3, {"x0": [0.0, -1.0], "sigma": 0.1, "field": FEDII})
    assert rep.holds
    assert rep.metadata["delta0"] == pytest.approx(2 * math.sqrt(2))


def test_boundary_check_fedii():
    g = StructuredGrid.square(-1, 1, 17)
    phi = lambda x, y: 0.25 * (x + y)
    ladder = viscosity_continuation(FEDII, g, phi, SolverConfig(eps_ladder=default_eps_ladder(9)))
    rep = boundary_modulus_check(ladder, phi, {"x0": [0.0, -1.0], "sigma": 0.05, "field": FEDII})
    assert rep.holds
    assert 0 < rep.metadata["delta0"] < 1e-3
    assert len(rep.metadata["per_rung"]) == 9


def test_boundary_check_needs_boundary_point():
    g = StructuredGrid.square(-1, 1, 9)
    ladder = viscosity_continuation(FEDII, g, 0.0, SolverConfig(eps_ladder=(1.0,)))
    with pytest.raises(ParameterError):
        boundary_modulus_check(ladder, 0.0, {"x0": [0.0, 0.0], "sigma": 0.1, "field": FEDII})


def _sharp_ladder(amp):
    g = StructuredGrid.square(-1, 1, 17)
    phi = lambda x, y: amp * np.sqrt(np.abs(x))
    sharp = make_builtin_family("sharpness", [1])
    return sharp, phi, viscosity_continuation(sharp, g, phi, SolverConfig(eps_ladder=default_eps_ladder(10)))


def test_boundary_check_sharpness_square_root_modulus():
    sharp, phi, ladder = _sharp_ladder(0.02)
    rep = boundary_modulus_check(ladder, phi, {"x0": [0.0, -1.0], "sigma": 0.1, "field": sharp})
    assert rep.holds
    assert rep.metadata["delta0"] > 0


def test_boundary_check_sharpness_outflow_unreachable():
    # nu = 2 sup|phi| is beyond what h reaches on the outflow face once t1
    # is small enough for the z-dependent coefficient
    sharp, phi, ladder = _sharp_ladder(0.05)
    with pytest.raises(ConstructionError, match="outflow"):
        boundary_modulus_check(ladder, phi, {"x0": [0.0, -1.0], "sigma": 0.1, "field": sharp})
