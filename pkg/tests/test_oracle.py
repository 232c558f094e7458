import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from degensolve.errors import ParameterError, SingularPointError
from degensolve.grid import StructuredGrid
from degensolve.oracle import (
    SharpnessExample,
    conjugate_f_quotient,
    cr_residual_analytic,
    energy_integrand,
    fit_holder_exponent,
    implicit_residual,
    oracle_diagnostics,
    sharpness_conjugate_f,
    sharpness_grad_w,
    sharpness_w,
)

coord = st.floats(-2.0, 2.0, allow_nan=False)


# frozen reference values (computed once and checked against the closed-form root)
def test_frozen_values():
    assert sharpness_w(SharpnessExample(2), 0.3, 0.7) == pytest.approx(-0.8775539965062898, rel=1e-14)
    assert sharpness_w(SharpnessExample(1), 0.0, 0.25) == pytest.approx(-0.5, rel=1e-15)
    assert sharpness_w(SharpnessExample(3), 0.0, 2.0**-12) == pytest.approx(-0.25, rel=1e-14)


def test_m1_closed_form():
    # for m = 1: z (x^2 + z^2)^{1/2} = -y, so z^2 = (-x^2 + sqrt(x^4 + 4 y^2)) / 2
    ex = SharpnessExample(1)
    x, y = 0.6, -0.35
    expected = np.sqrt((-(x**2) + np.sqrt(x**4 + 4 * y**2)) / 2)
    assert sharpness_w(ex, x, y) == pytest.approx(expected, rel=1e-14)


def test_sign_follows_printed_relation():
    ex = SharpnessExample(1)
    assert sharpness_w(ex, 0.0, 0.5) < 0
    assert sharpness_w(ex, 0.0, -0.5) > 0
    assert sharpness_w(ex, 0.4, 0.0) == 0.0


def test_scalar_in_scalar_out_and_shape():
    ex = SharpnessExample(1)
    assert isinstance(sharpness_w(ex, 0.1, 0.2), float)
    X, Y = np.meshgrid(np.linspace(-1, 1, 5), np.linspace(-1, 1, 4))
    assert sharpness_w(ex, X, Y).shape == X.shape


def test_parameter_validation():
    with pytest.raises(ParameterError):
        SharpnessExample(0)


def test_gradient_singular_at_origin():
    with pytest.raises(SingularPointError):
        sharpness_grad_w(SharpnessExample(1), 0.0, 0.0)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_root_residual_random(m, rng):
    ex = SharpnessExample(m)
    x = rng.uniform(-2, 2, 10_000)
    y = rng.uniform(-2, 2, 10_000)
    z = sharpness_w(ex, x, y)
    assert np.all(np.abs(implicit_residual(ex, x, y, z)) <= 1e-12 * (1 + np.abs(y)))


@given(coord, coord, st.integers(1, 3))
def test_oddness_and_evenness(x, y, m):
    ex = SharpnessExample(m)
    w = sharpness_w(ex, x, y)
    assert sharpness_w(ex, x, -y) == pytest.approx(-w, abs=1e-12)
    assert sharpness_w(ex, -x, y) == pytest.approx(w, abs=1e-12)


@given(coord, coord.filter(lambda v: abs(v) >= 1e-8), st.integers(1, 3))
def test_gradient_bounds(x, y, m):
    ex = SharpnessExample(m)
    wx, wy = sharpness_grad_w(ex, x, y)
    w = sharpness_w(ex, x, y)
    assert abs(wx) <= m + 1e-12
    assert ex.k(x, w) * wy**2 <= 2 * m + 1e-12


@given(coord.filter(lambda v: abs(v) > 0.05), coord.filter(lambda v: abs(v) > 0.05), st.integers(1, 3))
def test_cr_identities_analytic(x, y, m):
    r1, r2 = cr_residual_analytic(SharpnessExample(m), x, y)
    assert abs(r1) <= 1e-9 and abs(r2) <= 1e-9


@given(coord, coord.filter(lambda v: abs(v) > 1e-3), st.integers(1, 3))
def test_conjugate_closed_forms_agree(x, y, m):
    ex = SharpnessExample(m)
    assert sharpness_conjugate_f(ex, x, y) == pytest.approx(conjugate_f_quotient(ex, x, y), rel=1e-10, abs=1e-12)


def test_gradient_matches_finite_differences(rng):
    ex = SharpnessExample(2)
    x, y = rng.uniform(0.2, 1, 50), rng.uniform(0.2, 1, 50)
    h = 1e-6
    wx, wy = sharpness_grad_w(ex, x, y)
    fdx = (sharpness_w(ex, x + h, y) - sharpness_w(ex, x - h, y)) / (2 * h)
    fdy = (sharpness_w(ex, x, y + h) - sharpness_w(ex, x, y - h)) / (2 * h)
    assert np.allclose(wx, fdx, atol=1e-7) and np.allclose(wy, fdy, atol=1e-7)


def test_energy_integrand_at_origin_limit():
    ex = SharpnessExample(2)
    assert energy_integrand(ex, 0.0, 0.0) == pytest.approx(4.0)


def test_holder_fit_recovers_power():
    ys = 2.0 ** -np.arange(4, 20)
    assert fit_holder_exponent(ys, 3 * ys**0.3) == pytest.approx(0.3, abs=1e-12)
    with pytest.raises(ParameterError):
        fit_holder_exponent([0.1, 0.2], [1, 2])


def test_diagnostics_m1():
    rep = oracle_diagnostics(SharpnessExample(1), StructuredGrid.square(-1, 1, 65), 0.1)
    assert rep.energy <= rep.energy_bound == 12.0
    assert abs(rep.holder_slope - 0.5) < 1e-6
    assert set(rep.to_dict()) == {"cr_residual_max", "energy", "energy_bound", "holder_slope", "holder_target"}
