import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyhj import (DensityFamily, FiniteAtomicFamily, LevyItoFamily, PolarGrid,
                    RotatedQuadrantFamily, VariableOrderFamily, discretize, moment2_ball,
                    tail_mass)
from levyhj.errors import JumpOutOfBounds, NoDensity, QuadratureDivergence, ZeroPoint
from levyhj.measures import annulus_mass, levy_constant, pushforward_discretize


@pytest.fixture
def cauchy():
    return DensityFamily.power_law(1.0)


def single_atom(z=0.5, mass=1.0):
    return FiniteAtomicFamily(([[z]], [mass]))


# -- density ----------------------------------------------------------------

def test_density_power_law(cauchy):
    assert cauchy.density_at([0.0], [0.5]) == pytest.approx(4.0)


def test_density_variable_order_at_unit_radius():
    fam = VariableOrderFamily(lambda xi: 1.5, 0.5, 1.5)
    assert fam.density_at([0.2], [1.0]) == 1.0


def test_density_outside_quadrant():
    fam = RotatedQuadrantFamily(1.0)
    assert fam.density_at([1.0, 0.0], [-0.5, -0.5]) == 0.0
    assert fam.density_at([1.0, 0.0], [0.5, 0.5]) > 0


def test_density_errors(cauchy):
    with pytest.raises(ZeroPoint):
        cauchy.density_at([0.0], [0.0])
    with pytest.raises(NoDensity):
        single_atom().density_at([0.0], [0.5])


def test_order_outside_declared_range():
    fam = VariableOrderFamily(lambda xi: 1.8, 0.5, 1.5)
    with pytest.raises(ValueError):
        fam.order(np.zeros(1))


# -- moments and tails -------------------------------------------------------

def test_second_moment_closed_form(cauchy):
    assert moment2_ball(cauchy, [0.0], 1.0) == pytest.approx(2.0, abs=1e-3)


@pytest.mark.parametrize("r,expected", [(1.0, 0.25), (0.4, 0.0)])
def test_second_moment_single_atom(r, expected):
    assert moment2_ball(single_atom(), [0.0], r) == expected


def test_tail_closed_form(cauchy):
    assert tail_mass(cauchy, [0.0], 2.0) == pytest.approx(1.0, abs=1e-3)


def test_tail_of_atom_inside_unit_ball():
    assert tail_mass(single_atom(), [0.0], 1.0) == 0.0


def test_tail_of_rotated_quadrant():
    assert tail_mass(RotatedQuadrantFamily(1.0), [0.3, -0.4], 1.0) == pytest.approx(math.pi / 2,
                                                                                   abs=1e-2)


def test_tail_requires_large_radius(cauchy):
    with pytest.raises(ValueError):
        tail_mass(cauchy, [0.0], 0.5)


def test_order_two_singularity_detected():
    # |z|^-3 in one dimension is not a Levy measure
    fam = DensityFamily(lambda xi, z: np.linalg.norm(z, axis=-1) ** -3.0, 1.99, 1.0)
    fam.order = lambda xi: 2.0 - 1e-12
    with pytest.raises(QuadratureDivergence):
        moment2_ball(fam, [0.0], 1.0)


@pytest.mark.parametrize("sigma,lam,dim", [(0.5, 1.0, 1), (1.2, 0.7, 1), (1.0, 1.0, 2),
                                           (0.8, 1.0, 3)])
def test_scaling_law(sigma, lam, dim):
    fam = DensityFamily.power_law(sigma, lam, dim=dim)
    vals = [moment2_ball(fam, np.zeros(dim), r) / r ** (2 - sigma) for r in (0.05, 0.3, 1.0, 3.0)]
    assert max(vals) / min(vals) - 1 < 0.01


def test_variable_order_constant_within_bound():
    fam = VariableOrderFamily(lambda xi: 1.0 + 0.5 * math.sin(3 * xi[0]), 0.5, 1.5)
    bound = fam.m1_bound()
    assert bound == pytest.approx(8.0)
    for xi in np.linspace(-2, 2, 9):
        assert levy_constant(fam, [xi]) <= bound


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 1.8), st.floats(0.01, 4.0), st.floats(0.01, 4.0))
def test_monotone_in_radius(sigma, r1, r2):
    fam = DensityFamily.power_law(sigma)
    lo, hi = sorted((r1, r2))
    assert moment2_ball(fam, [0.0], lo) <= moment2_ball(fam, [0.0], hi) + 1e-12
    assert tail_mass(fam, [0.0], 1 + lo) >= tail_mass(fam, [0.0], 1 + hi) - 1e-12


# -- discretization ----------------------------------------------------------

def test_atomic_round_trip():
    atoms = ([[0.3], [-0.7], [2.0]], [1.0, 5.0, 0.25])
    mu = discretize(FiniteAtomicFamily(atoms), [0.0], PolarGrid.geometric())
    np.testing.assert_array_equal(mu.points, np.asarray(atoms[0]))
    np.testing.assert_array_equal(mu.masses, atoms[1])


def test_annulus_mass_from_atoms(cauchy):
    mu = discretize(cauchy, [0.0], PolarGrid.geometric())
    r = mu.radii()
    total = mu.masses[(r > 0.5) & (r <= 1.0)].sum()
    assert total == pytest.approx((0.5 ** -1 - 1.0) * 2 / 1.0, abs=1e-6)


@pytest.mark.parametrize("family", [DensityFamily.power_law(0.7),
                                    DensityFamily.power_law(1.3, dim=2),
                                    RotatedQuadrantFamily(1.0)])
def test_mass_conservation(family):
    grid = PolarGrid.geometric(dim=family.dim, r_inner=1e-2, r_outer=8.0)
    xi = np.full(family.dim, 0.4)
    mu = discretize(family, xi, grid)
    assert mu.total_mass == pytest.approx(annulus_mass(family, xi, grid.r_inner, grid.r_outer),
                                          rel=1e-6)
    assert np.all(mu.radii() > grid.r_inner) and np.all(mu.radii() <= grid.r_outer)


def test_identity_pushforward_matches_base(cauchy):
    grid = PolarGrid.geometric(r_inner=1e-2, r_outer=8.0)
    ito = LevyItoFamily(cauchy, lambda xi, z: z, 1.0, 1.0)
    a, b = discretize(ito, [0.2], grid), discretize(cauchy, [0.2], grid)
    np.testing.assert_allclose(a.points, b.points)
    np.testing.assert_allclose(a.masses, b.masses)


def test_pushforward_doubles_atoms():
    ito = LevyItoFamily(single_atom(0.3), lambda xi, z: 2 * z, 2.0, 2.0)
    mu = pushforward_discretize(ito, [0.0], PolarGrid.geometric())
    np.testing.assert_allclose(mu.points, [[0.6]])
    np.testing.assert_allclose(mu.masses, [1.0])


def test_rotation_pushforward_is_an_isometry():
    base = DensityFamily.power_law(1.0, dim=2)

    def rotate(xi, z):
        a = np.linalg.norm(xi)
        c, s = math.cos(a), math.sin(a)
        return z @ np.array([[c, s], [-s, c]])

    ito = LevyItoFamily(base, rotate, 1.0, 1.0)
    grid = PolarGrid.geometric(dim=2, r_inner=1e-2, r_outer=4.0, n_angular=16)
    xi = np.array([0.6, -0.2])
    mu, ref = pushforward_discretize(ito, xi, grid), discretize(base, xi, grid)
    np.testing.assert_allclose(mu.radii(), ref.radii(), rtol=1e-12)
    assert mu.total_mass == ref.total_mass


def test_pushforward_bounds_enforced(cauchy):
    ito = LevyItoFamily(cauchy, lambda xi, z: 3 * z, 0.5, 2.0)
    with pytest.raises(JumpOutOfBounds):
        pushforward_discretize(ito, [0.0], PolarGrid.geometric(r_inner=0.1, r_outer=2.0))


def test_grid_is_anchored_at_one():
    edges = np.asarray(PolarGrid.geometric().edges)
    assert np.any(np.isclose(edges, 1.0)) and np.any(np.isclose(edges, 0.5))
    ratios = edges[1:] / edges[:-1]
    np.testing.assert_allclose(ratios, ratios[0])
