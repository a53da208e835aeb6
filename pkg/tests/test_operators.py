import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyhj import (DensityFamily, FiniteAtomicFamily, LevyItoFamily, LocalizationFunction,
                    TestFunction, eval_full, eval_inner, eval_outer, infimum_modulus,
                    levy_ito_drift, levy_ito_eval, localization_estimates, moment2_ball,
                    pushforward_eval)
from levyhj.measures import QuadConfig, levy_constant
from levyhj.operators import drift_bound, outer_parts

# Reference values below were computed once with mpmath (30 digits) from the
# defining one-dimensional integrals and are frozen here.
COS_INNER = -0.929323395389380      # 2 cos(0.3) int_0^1 (cos z - 1) z^-2 dz
COS_OUTER_32 = -2.011319360377107   # 2 cos(0.3) int_1^32 (cos z - 1) z^-2 dz
COS_OUTER_INF = -2.071916212759131  # same integral up to infinity
ONE_SIDED_DRIFT = -0.550510257216822  # -1.5 int_{2/3}^1 z^-1/2 dz


@pytest.fixture
def cauchy():
    return DensityFamily.power_law(1.0)


def one_sided(sigma=0.5):
    """Density ``1_{z > 0} |z|^-(1 + sigma)``, which makes dilations drift."""
    return DensityFamily(lambda xi, z: (z[..., 0] > 0) * np.abs(z[..., 0]) ** -(1 + sigma),
                         sigma, 1.0, xi_independent=True)


def combine(a, f, b, g):
    return TestFunction(lambda X: a * f(X) + b * g(X),
                        lambda x: a * np.asarray(f.grad(x)) + b * np.asarray(g.grad(x)),
                        lambda x: a * np.asarray(f.hess(x)) + b * np.asarray(g.hess(x)),
                        far_field=a * f.far_field + b * g.far_field)


# -- inner and outer pieces ----------------------------------------------------

@pytest.mark.parametrize("dim", [1, 2])
def test_affine_functions_are_annihilated(dim):
    fam = DensityFamily.power_law(1.3, dim=dim)
    phi = TestFunction.affine(np.arange(1, dim + 1), c=0.7)
    # exact up to cancellation in phi(x + z) - phi(x) - Dphi.z against weights ~ |z|^-(N+sigma)
    assert eval_inner(fam, np.full(dim, 0.4), phi, 0.5) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("sigma,delta", [(0.5, 0.3), (1.0, 1.0), (1.7, 0.05)])
def test_quadratic_gives_second_moment(sigma, delta):
    fam = DensityFamily.power_law(sigma, dim=2)
    phi = TestFunction.quadratic(2, center=[0.2, -0.1])
    x = np.array([1.0, 0.5])
    assert eval_inner(fam, x, phi, delta) == pytest.approx(moment2_ball(fam, x, delta), rel=1e-9)


def test_inner_cosine_against_reference(cauchy):
    phi = TestFunction.cosine([1.0])
    assert eval_inner(cauchy, [0.3], phi, 1.0) == pytest.approx(COS_INNER, abs=1e-4)


def test_outer_cosine_against_reference(cauchy):
    phi = TestFunction.cosine([1.0])
    x = np.array([0.3])
    parts = outer_parts(cauchy, x, phi.grad(x), phi, 1.0)
    got = eval_outer(cauchy, x, phi.grad(x), phi, 1.0)
    assert got == pytest.approx(COS_OUTER_32, abs=1e-4)
    # without a far field the tail is dropped; the reported bound covers it
    assert abs(COS_OUTER_INF - got) <= parts["truncation_bound"]


def test_outer_tail_uses_far_field(cauchy):
    phi = TestFunction.gaussian(1)
    wide = eval_outer(cauchy, [0.2], phi.grad([0.2]), phi, 0.5, QuadConfig(r_outer=512.0))
    assert eval_outer(cauchy, [0.2], phi.grad([0.2]), phi, 0.5) == pytest.approx(wide, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.02, 0.9), st.floats(0.02, 0.9), st.floats(-2, 2))
def test_split_radius_does_not_change_the_total(d1, d2, x):
    fam = DensityFamily.power_law(1.2)
    phi = TestFunction.gaussian(1, scale=0.8)
    assert eval_full(fam, [x], phi, d1) == pytest.approx(eval_full(fam, [x], phi, d2),
                                                         rel=1e-6, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2))
def test_linear_in_the_test_function(a, b, x):
    fam = DensityFamily.power_law(0.8)
    f, g = TestFunction.gaussian(1), TestFunction.gaussian(1, scale=2.0, center=[1.0])
    lhs = eval_full(fam, [x], combine(a, f, b, g))
    rhs = a * eval_full(fam, [x], f) + b * eval_full(fam, [x], g)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_nonpositive_at_a_maximum(cauchy):
    # the operator is nonpositive where phi attains its global maximum
    assert eval_full(cauchy, [0.0], TestFunction.gaussian(1)) < 0


# -- Levy-Ito form ---------------------------------------------------------------

def test_dilation_of_one_sided_base_drift():
    fam = LevyItoFamily(one_sided(), lambda xi, z: 1.5 * z, 1.5, 1.5)
    b = levy_ito_drift(fam, [0.0])
    assert b[0] == pytest.approx(ONE_SIDED_DRIFT, rel=1e-9)
    assert abs(b[0]) <= drift_bound(fam, [0.0])


def test_dilation_of_symmetric_base_has_no_drift(cauchy):
    fam = LevyItoFamily(DensityFamily.power_law(0.5), lambda xi, z: 1.5 * z, 1.5, 1.5)
    assert levy_ito_drift(fam, [0.0])[0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("x", [-1.0, 0.0, 0.4, 2.5])
def test_one_sided_forms_agree(x):
    fam = LevyItoFamily(one_sided(), lambda xi, z: 1.5 * z, 1.5, 1.5)
    phi = TestFunction.gaussian(1)
    direct = levy_ito_eval(fam, [x], phi)
    split = pushforward_eval(fam, [x], phi) + levy_ito_drift(fam, [x]) @ phi.grad([x])
    assert split == pytest.approx(direct, rel=1e-6)


def test_atomic_base_by_hand():
    base = FiniteAtomicFamily(([[0.3], [-0.4], [0.7], [1.5]], [1.0, 2.0, 1.0, 0.5]))
    fam = LevyItoFamily(base, lambda xi, z: 2 * z, 2.0, 2.0)
    phi, x = TestFunction.quadratic(1), np.array([0.2])
    # sum m (|x + 2z|^2 - |x|^2 - 1_{|z|<1} 2x.2z) = 8.1 + 0.6
    assert levy_ito_eval(fam, x, phi) == pytest.approx(8.7)
    # only the atom at 0.7 leaves the unit ball under j
    np.testing.assert_allclose(levy_ito_drift(fam, [0.0]), [-1.4])
    split = pushforward_eval(fam, x, phi) + levy_ito_drift(fam, [0.0]) @ phi.grad(x)
    assert split == pytest.approx(8.7)


# -- localization ---------------------------------------------------------------

def test_localization_profile_shape():
    loc = LocalizationFunction(c=2.0, beta=0.1)
    r = np.array([[0.0], [9.99], [20.01], [100.0]])
    np.testing.assert_allclose(loc.value(r), [0.0, 0.0, 2.0, 2.0], atol=1e-12)
    assert loc.as_test_function().check_consistency(np.array([[12.0], [15.0], [18.5]]))


def test_inner_term_bound(cauchy):
    loc = LocalizationFunction(c=1.0, beta=0.1)
    for x in (12.0, 15.0, 18.0):
        inner = eval_inner(cauchy, [x], loc.as_test_function(), 1.0)
        assert abs(inner) <= 0.5 * loc.C0 * levy_constant(cauchy, [x]) * 0.01


def test_outer_term_vanishes_with_beta(cauchy):
    outer = [localization_estimates(LocalizationFunction(1.0, b), cauchy, [0.0], 0.5)[0].outer
             for b in (0.2, 0.1, 0.05)]
    assert outer[0] > outer[1] > outer[2] > 0


def test_localization_in_transition_annulus(cauchy):
    loc = LocalizationFunction(1.0, 0.2)
    est = localization_estimates(loc, cauchy, [7.0], 0.5)[0]
    assert est.holds and est.inner != 0.0 and est.bound_outer > 0


def test_infimum_modulus_reciprocal():
    assert infimum_modulus(lambda R: 1 / R, 0.01) == pytest.approx(0.2, abs=1e-4)


def test_infimum_modulus_zero_function():
    assert infimum_modulus(lambda R: 0.0, 0.3) == pytest.approx(0.3)


def test_infimum_modulus_exponential():
    R = np.linspace(1, 50, 2_000_001)
    dense = float(np.min(np.exp(-R) + 0.1 * R))
    got = infimum_modulus(lambda r: math.exp(-r), 0.1)
    assert got == pytest.approx(dense, abs=1e-6)
    assert got == pytest.approx(0.1 + 0.1 * math.log(10), abs=1e-9)


def test_infimum_modulus_rejects_nonpositive_beta():
    with pytest.raises(ValueError):
        infimum_modulus(lambda R: 1 / R, 0.0)
