import math

import numpy as np
import pytest

from degensolve.coefficients import (
    FAMILIES,
    BoxRegion,
    CoefficientField,
    check_diagonal_equivalence,
    check_nondegeneracy_box,
    check_subordination_suite,
    is_admissible_box,
    make_builtin_family,
    nondegeneracy_report,
    with_lower_order,
)
from degensolve.errors import NondegeneracyViolation, ParameterError

FAMILY_CASES = [("identity", [2]), ("sharpness", [1]), ("sharpness", [2]), ("fedii", []), ("axis", []), ("power", [2])]


def _samples(field, rng, count=1000):
    x = rng.uniform(-1, 1, (count, field.dim))
    z = rng.uniform(-1, 1, count)
    return x, z


@pytest.mark.parametrize("name,params", FAMILY_CASES)
def test_matrix_dz_matches_centered_differences(name, params, rng):
    f = make_builtin_family(name, params)
    x, z = _samples(f, rng)
    h = 1e-6
    fd = (f.matrix(x, z + h) - f.matrix(x, z - h)) / (2 * h)
    scale = np.abs(f.matrix(x, z)).max(axis=(1, 2))
    tol = np.maximum(1e-6, 1e-4 * scale)
    assert np.all(np.abs(f.matrix_dz(x, z) - fd).max(axis=(1, 2)) <= tol)


@pytest.mark.parametrize("name,params", FAMILY_CASES)
def test_diagonal_equivalence_is_one(name, params):
    f = make_builtin_family(name, params)
    region = BoxRegion.from_bounds([-1.0] * f.dim, [1.0] * f.dim)
    rep = check_diagonal_equivalence(f, region, (-1.0, 1.0), 1.0, 9 if f.dim == 3 else 21)
    assert rep.holds
    assert abs(rep.best_constant - 1.0) <= 1e-10


def test_unknown_family():
    with pytest.raises(ParameterError):
        make_builtin_family("nope", [])
    assert {"identity", "sharpness", "fedii", "axis", "power"} <= set(FAMILIES)


def test_fedii_vanishes_at_axis():
    f = make_builtin_family("fedii", [])
    k = f.k(np.array([[0.0, 0.3], [0.5, 0.3]]), np.zeros(2))
    assert k[0, 1] == 0.0
    assert k[1, 1] == pytest.approx(math.exp(-4.0))


def test_wirtinger_on_square_and_rejects_nonsmooth():
    region = BoxRegion.from_bounds([-1.0, -1.0], [1.0, 1.0])
    sq = make_builtin_family("power", [2])
    (rep,) = check_subordination_suite(sq, region, (-1.0, 1.0), ["wirtinger"])
    assert rep.holds and math.isfinite(rep.best_constant)
    assert rep.best_constant == pytest.approx(2.0, rel=1e-3)
    ab = make_builtin_family("power", [1])
    with pytest.raises(ParameterError):
        check_subordination_suite(ab, region, (-1.0, 1.0), ["wirtinger"])


def test_subunit_scales_linearly_with_drift():
    base = make_builtin_family("identity", [2])
    region = BoxRegion.from_bounds([-1.0, -1.0], [1.0, 1.0])

    def drift(scale):
        return with_lower_order(base, drift=lambda x, z: scale * np.c_[np.sin(x[:, 0]) + z, np.cos(x[:, 1])])

    (a,) = check_subordination_suite(drift(1.0), region, (-1.0, 1.0), ["subunit"])
    (b,) = check_subordination_suite(drift(2.0), region, (-1.0, 1.0), ["subunit"])
    assert b.best_constant / a.best_constant == pytest.approx(2.0, abs=1e-12)


def test_suite_flag_validation():
    f = make_builtin_family("identity", [2])
    region = BoxRegion.from_bounds([-1.0, -1.0], [1.0, 1.0])
    with pytest.raises(ParameterError):
        check_subordination_suite(f, region, (-1.0, 1.0), [])
    with pytest.raises(ParameterError):
        check_subordination_suite(f, region, (-1.0, 1.0), ["bogus"])


def test_super_subordination_exponents_sharpness():
    f = make_builtin_family("sharpness", [2])
    region = BoxRegion.from_bounds([-1.0, -1.0], [1.0, 1.0])
    q = 1 - 1 / (4 * 2 - 2)
    (rep,) = check_subordination_suite(f, region, (-1.0, 1.0), ["super_subordinate"], exponent=q)
    assert rep.holds and math.isfinite(rep.best_constant)


def test_bounds_turn_constants_into_verdicts():
    f = make_builtin_family("sharpness", [1])
    region = BoxRegion.from_bounds([-1.0, -1.0], [1.0, 1.0])
    (rep,) = check_subordination_suite(f, region, (-1.0, 1.0), ["subordinate"], bounds={"subordinate": 1e-3})
    assert not rep.holds
    assert rep.details["bound"] == 1e-3


@pytest.mark.parametrize("point", [[0.0, 0.0], [0.3, -0.2], [0.05, 0.7]])
@pytest.mark.parametrize("eps", [1.0, 0.5])
def test_nondegeneracy_box_structure(point, eps):
    f = make_builtin_family("fedii", [])
    box = check_nondegeneracy_box(f, point, eps, (-1.0, 1.0))
    assert np.all(np.asarray(box.half_lengths) < eps)
    assert box.scaled(1.0 / 3.0).contains(point)
    assert is_admissible_box(f, point, box, eps, (-1.0, 1.0))


def test_nondegeneracy_example_box_is_admissible():
    f = make_builtin_family("fedii", [])
    eps = 1.0
    box = BoxRegion((eps / 8, 0.0), (eps / 2, eps / 2))
    assert is_admissible_box(f, [0.0, 0.0], box, eps, (-1.0, 1.0))


def test_nondegeneracy_violation_for_tiny_boxes():
    f = make_builtin_family("fedii", [])
    with pytest.raises(NondegeneracyViolation):
        check_nondegeneracy_box(f, [0.0, 0.0], 0.02, (-1.0, 1.0))
    rep = nondegeneracy_report(f, [0.0, 0.0], 0.02, (-1.0, 1.0))
    assert not rep.holds


def test_box_region_validation():
    with pytest.raises(ParameterError):
        BoxRegion((0.0, 0.0), (1.0, -1.0))


def test_custom_field_roundtrip():
    f = CoefficientField(
        dim=2,
        matrix_eval=lambda x, z: np.broadcast_to(np.eye(2), (len(x), 2, 2)) * (1 + z**2)[:, None, None],
        k_eval=lambda x, z: np.c_[1 + z**2, 1 + z**2],
        name="custom",
    )
    x = np.zeros((3, 2))
    z = np.array([0.0, 1.0, 2.0])
    assert np.allclose(f.matrix_dz(x, z)[:, 0, 0], 2 * z, atol=1e-6)


def test_generalized_eig_small_scale_not_treated_as_null():
    from degensolve.coefficients import max_generalized_eig

    S = np.array([[[5e-7, 0.0], [0.0, 2.5e-13]]])
    T = np.array([[[0.0, 0.0], [0.0, 1e-24]]])
    vals, wit = max_generalized_eig(T, S)
    assert vals[0] == pytest.approx(4e-12, rel=1e-12)
    assert list(wit[0]) == [0.0, 1.0]


def test_generalized_eig_diagonal_null_direction():
    from degensolve.coefficients import max_generalized_eig

    S = np.array([np.diag([1.0, 0.0]), np.diag([1.0, 0.0])])
    T = np.array([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])
    vals, _ = max_generalized_eig(T, S)
    assert vals[0] == 1.0 and vals[1] == np.inf


@pytest.mark.parametrize("m", [1, 2, 3])
def test_standard_super_subordination_grows_like_inverse_spacing(m):
    f = make_builtin_family("sharpness", [m])
    region = BoxRegion.from_bounds([-0.1, -0.1], [0.1, 0.1])
    c = [
        check_subordination_suite(f, region, (-0.1, 0.1), ["super_subordinate"], d)[0].best_constant
        for d in (21, 41)
    ]
    # constant is 2(2m-1)/min|z| and min|z| is the lattice step
    assert c[0] == pytest.approx(2 * (2 * m - 1) / 0.01, rel=1e-9)
    assert c[1] / c[0] == pytest.approx(2.0, rel=1e-9)
