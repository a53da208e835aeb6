import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levyhj import (DensityFamily, DiscretizedMeasure, PolarGrid, brute_force_wasserstein,
                    discretize, explicit_coupling, gigli_bound_check, tv_annulus,
                    tv_second_moment_ball, wasserstein_p_ball)
from levyhj.errors import GridMismatch, NotAdmissible, TooManyAtoms
from levyhj.transport import ORIGIN, Coupling, align, check_admissible

from _builders import random_atomic_pair


def atoms(*pairs):
    pts = [[z] for z, _ in pairs]
    return DiscretizedMeasure(np.array(pts).reshape(-1, 1), [m for _, m in pairs])


A = atoms((0.5, 1.0))
B = atoms((0.5, 2.0))
EMPTY = atoms()


# -- total variation -----------------------------------------------------------

def test_tv_of_identical_measures_is_zero():
    assert tv_annulus(A, A, 0.2, 1.0) == 0.0
    assert tv_second_moment_ball(A, A, 1.0) == 0.0


def test_tv_jordan_decomposition():
    assert tv_annulus(A, atoms((0.5, 2.0), (0.8, 0.5)), 0.2, 1.0) == pytest.approx(1.5)


def test_tv_second_moment_single_atom():
    assert tv_second_moment_ball(A, EMPTY, 1.0) == pytest.approx(0.25)


def test_tv_requires_matching_grids():
    fam = DensityFamily.power_law(1.0)
    g1 = PolarGrid.geometric(r_inner=1e-2, r_outer=4.0)
    g2 = PolarGrid.geometric(r_inner=1e-2, r_outer=4.0, ratio=2 ** 0.5)
    mu1, mu2 = discretize(fam, [0.0], g1), discretize(fam, [0.0], g2)
    with pytest.raises(GridMismatch):
        tv_annulus(mu1, mu2, 0.1, 1.0)
    wasserstein_p_ball(mu1, mu2, 0.5)  # non-aligned inputs are fine here


def test_weighted_pair_bounds():
    # kernel (1 + 0.5 sin xi)|z|^-2 has Lipschitz constant C_K = 0.5 in xi
    fam = DensityFamily.power_law(1.0, weight=lambda xi: 0.75 + 0.25 * np.sin(xi[0]), c_k=0.25)
    grid = PolarGrid.geometric(r_inner=1e-3, r_outer=8.0)
    x, y = 0.1, 0.13
    mu1, mu2 = discretize(fam, [x], grid), discretize(fam, [y], grid)
    r, R, c_k, sigma = 0.25, 4.0, 0.25, 1.0
    assert tv_annulus(mu1, mu2, r, R) <= c_k / sigma * 2 * (r ** -sigma - R ** -sigma) * abs(x - y)
    assert tv_second_moment_ball(mu1, mu2, r) <= c_k / (2 - sigma) * 2 * r ** (2 - sigma) \
        * abs(x - y) * (1 + 1e-6)


# -- explicit coupling -------------------------------------------------------

def test_explicit_coupling_of_equal_measures_is_diagonal():
    cp = explicit_coupling(A, A, 1.0)
    assert np.all(cp.src != ORIGIN) and np.all(cp.dst != ORIGIN)
    assert cp.cost(2.0) == 0.0


def test_explicit_coupling_construction():
    cp = explicit_coupling(A, B, 1.0)
    legs = sorted(zip(cp.src.tolist(), cp.dst.tolist(), cp.mass.tolist()))
    assert legs == [(ORIGIN, 0, 1.0), (0, 0, 1.0)]
    assert cp.cost(2.0) == pytest.approx(0.25)


def test_coupling_csv_columns():
    cp = explicit_coupling(A, B, 1.0)
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(cp.csv_header())
    w.writerows(cp.to_rows())
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["src_z0", "src_is_origin", "dst_z0", "dst_is_origin", "mass"]
    assert len(rows) == 3


# -- exact solver ------------------------------------------------------------

def test_distance_to_itself_is_zero():
    assert wasserstein_p_ball(A, A, 1.0).cost == 0.0


def test_two_node_instance():
    res = wasserstein_p_ball(A, B, 1.0, p=2)
    assert res.cost == pytest.approx(0.25, abs=1e-12)
    assert res.cost == pytest.approx(brute_force_wasserstein(A, B, 1.0, 2), abs=1e-12)
    doc = json.loads(res.to_json())
    assert doc["n_atoms"] == [1, 1] and doc["status"] == "optimal"


def test_closed_ball_includes_boundary_atoms():
    assert wasserstein_p_ball(A, EMPTY, 0.5).cost == pytest.approx(0.25)


def test_atom_cap():
    big = DiscretizedMeasure(np.linspace(0.01, 1, 30)[:, None], np.ones(30))
    with pytest.raises(TooManyAtoms):
        wasserstein_p_ball(big, A, 1.0, max_atoms=10)


def test_never_ships_origin_to_origin():
    rng = np.random.default_rng(3)
    for _ in range(20):
        mu1, mu2 = random_atomic_pair(rng, 10)
        cp = wasserstein_p_ball(mu1, mu2, 0.8).coupling
        assert not np.any((cp.src == ORIGIN) & (cp.dst == ORIGIN))
        assert check_admissible(cp)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([1.0, 1.5, 2.0]))
def test_symmetric_and_dominated(seed, p):
    rng = np.random.default_rng(seed)
    mu1, mu2 = random_atomic_pair(rng, 12, dim=2)
    fwd = wasserstein_p_ball(mu1, mu2, 1.0, p).cost
    assert wasserstein_p_ball(mu2, mu1, 1.0, p).cost == pytest.approx(fwd, rel=1e-9, abs=1e-12)
    assert fwd <= explicit_coupling(mu1, mu2, 1.0).cost(p) + 1e-9


def test_restricted_distance_can_drop_as_the_ball_grows():
    # the atom at 0.5 must go to the origin in B_0.5, but can meet 0.9 in B_1
    mu1, mu2 = atoms((0.5, 1.0)), atoms((0.9, 1.0))
    assert wasserstein_p_ball(mu1, mu2, 0.5).cost == pytest.approx(0.25)
    assert wasserstein_p_ball(mu1, mu2, 1.0).cost == pytest.approx(0.16)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([1.0, 2.0]))
def test_growth_in_radius_bounded_by_annulus_variation(seed, p):
    rng = np.random.default_rng(seed)
    mu1, mu2 = random_atomic_pair(rng, 8)
    radii = (0.25, 0.5, 0.75, 1.0)
    costs = [wasserstein_p_ball(mu1, mu2, r, p).cost for r in radii]
    for (r, a), (R, b) in zip(zip(radii, costs), zip(radii[1:], costs[1:])):
        extra = sum(abs(m1 - m2) * np.linalg.norm(z) ** p for z, m1, m2 in _annulus(mu1, mu2, r, R))
        assert b <= a + extra + 1e-12


def _annulus(mu1, mu2, r, R):
    pts, m1, m2, _, _ = align(mu1, mu2)
    rad = np.linalg.norm(pts, axis=1)
    sel = (rad > r * (1 + 1e-12)) & (rad <= R * (1 + 1e-12))
    return zip(pts[sel], m1[sel], m2[sel])


# -- admissibility and the coupling bound -------------------------------------

def test_perturbed_marginal_is_rejected():
    cp = wasserstein_p_ball(A, B, 1.0).coupling
    assert check_admissible(cp)
    bad = Coupling(cp.src, cp.dst, cp.mass + np.where(np.arange(len(cp)) == 0, 1e-6, 0.0),
                   cp.mu1, cp.mu2, cp.r)
    assert not check_admissible(bad)
    with pytest.raises(NotAdmissible):
        gigli_bound_check(bad)


def test_origin_to_origin_leg_is_rejected():
    cp = explicit_coupling(A, B, 1.0)
    extra = Coupling(np.append(cp.src, ORIGIN), np.append(cp.dst, ORIGIN),
                     np.append(cp.mass, 0.3), A, B, 1.0)
    assert not check_admissible(extra)


def test_diagonal_coupling_bound():
    lhs, rhs, ok = gigli_bound_check(explicit_coupling(A, A, 1.0))
    assert lhs == pytest.approx(0.25) and rhs == pytest.approx(1.0) and ok


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_small_instances_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    mu1, mu2 = random_atomic_pair(rng, 3, dim=2)
    assert wasserstein_p_ball(mu1, mu2, 0.9).cost == pytest.approx(
        brute_force_wasserstein(mu1, mu2, 0.9), abs=1e-9)
