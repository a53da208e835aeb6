"""End-to-end acceptance criteria, one test group per criterion.

Run ``pytest tests/test_acceptance.py`` for the PASS/FAIL summary lines.
"""

import math
import time

import numpy as np
import pytest

from levyhj import (DensityFamily, GridFunction, HamiltonianSpec, LevyItoFamily,
                    LocalizationFunction, RotatedQuadrantFamily, SolveConfig, TestFunction,
                    brute_force_wasserstein, check_M1, check_M4, check_M_unified, eval_full,
                    explicit_coupling, gigli_bound_check, infimum_modulus, levy_ito_drift,
                    levy_ito_eval, localization_estimates, parabolic_comparison,
                    pushforward_eval, solve_stationary, tail_mass, tv_second_moment_ball,
                    wasserstein_p_ball)
from levyhj.assumptions import SamplePlan
from levyhj.operators import drift_bound
from levyhj.solver import comparison_experiment

from _builders import random_atomic_pair, smooth_bump

SURFACE = 2.0  # area of the unit sphere in one dimension


# -- 1: closed forms --------------------------------------------------------

@pytest.mark.acceptance(1)
@pytest.mark.parametrize("sigma,lam", [(0.5, 1.0), (1.0, 1.0), (1.5, 2.0)])
def test_closed_forms(sigma, lam):
    start = time.perf_counter()
    fam = DensityFamily.power_law(sigma, lam)
    rep = check_M1(fam, SamplePlan().xi_samples(fam))
    expected = lam * SURFACE * (1 / (2 - sigma) + 1 / sigma)
    assert rep.holds
    assert rep.constants["C_nu"] == pytest.approx(expected, rel=0.01)
    for R in (2.0, 4.0, 8.0):
        assert tail_mass(fam, [0.3], R) == pytest.approx(lam / sigma * SURFACE * R ** -sigma,
                                                         rel=0.01)
    assert time.perf_counter() - start < 10


# -- 2 and 3: domination and the coupling bound ------------------------------

@pytest.fixture(scope="module")
def random_pairs():
    rng = np.random.default_rng(20240229)
    return [random_atomic_pair(rng, 50, dim=int(rng.integers(1, 3))) for _ in range(200)]


@pytest.fixture(scope="module")
def transport_runs(random_pairs):
    start = time.perf_counter()
    runs = []
    for mu1, mu2 in random_pairs:
        runs.append((mu1, mu2, wasserstein_p_ball(mu1, mu2, 1.0), explicit_coupling(mu1, mu2, 1.0)))
    return runs, time.perf_counter() - start


@pytest.mark.acceptance(2)
def test_wasserstein_dominated_by_tv(transport_runs):
    runs, elapsed = transport_runs
    for mu1, mu2, opt, _ in runs:
        assert opt.status == "optimal"
        assert opt.cost <= tv_second_moment_ball(mu1, mu2, 1.0) + 1e-9
    assert elapsed < 60


@pytest.mark.acceptance(2)
def test_explicit_coupling_cost_is_tv(transport_runs):
    runs, _ = transport_runs
    for mu1, mu2, _, cp in runs:
        assert cp.cost(2.0) == pytest.approx(tv_second_moment_ball(mu1, mu2, 1.0), abs=1e-12)


@pytest.mark.acceptance(3)
def test_every_coupling_passes_the_moment_bound(transport_runs):
    runs, _ = transport_runs
    for _, _, opt, cp in runs:
        for coupling in (opt.coupling, cp):
            lhs, rhs, ok = gigli_bound_check(coupling)
            assert ok, (lhs, rhs)


# -- 4: exact OT against vertex enumeration ----------------------------------

@pytest.mark.acceptance(4)
def test_matches_vertex_enumeration():
    rng = np.random.default_rng(4)
    for _ in range(100):
        mu1, mu2 = random_atomic_pair(rng, 4, dim=int(rng.integers(1, 3)))
        r = float(rng.uniform(0.3, 1.0))
        p = float(rng.choice([1.0, 2.0]))
        exact = brute_force_wasserstein(mu1, mu2, r, p)
        assert wasserstein_p_ball(mu1, mu2, r, p).cost == pytest.approx(exact, abs=1e-9)


# -- 5: rotated quadrant ------------------------------------------------------

@pytest.fixture(scope="module")
def quadrant_reports():
    start = time.perf_counter()
    fam = RotatedQuadrantFamily(sigma=1.0)
    pairs = SamplePlan().pairs(fam)
    m4 = check_M4(fam, pairs)
    m = check_M_unified(fam, pairs)
    return m4, m, time.perf_counter() - start


@pytest.mark.acceptance(5)
def test_quadrant_wasserstein_is_half_holder(quadrant_reports):
    m4, _, elapsed = quadrant_reports
    assert m4.holds
    for alpha in m4.constants["alpha"]:
        assert alpha == pytest.approx(0.5, abs=0.07)
    assert m4.constants["r_exponent"] == pytest.approx((2 - 1.0) / 2, abs=0.1)
    assert elapsed < 300


@pytest.mark.acceptance(5)
def test_quadrant_unified_condition_fails(quadrant_reports):
    _, m, _ = quadrant_reports
    assert m.verdict == "fails"
    assert m.violation is not None
    for alpha in m.constants["alpha"]:
        assert alpha == pytest.approx(0.5, abs=0.07)
    assert m.sub_reports["M3"].holds and m.sub_reports["M4"].holds


# -- 6: Levy-Ito equivalence ------------------------------------------------

@pytest.mark.acceptance(6)
def test_levy_ito_equals_pushforward_plus_drift():
    base = DensityFamily.power_law(0.5)
    fam = LevyItoFamily(base, lambda xi, z: (1 + 0.1 * np.sin(np.linalg.norm(xi))) * z, 0.9, 1.1)
    phi = TestFunction.gaussian(1, scale=1.3)
    rng = np.random.default_rng(6)
    for _ in range(20):
        xi, x = rng.uniform(-4, 4, 1), rng.uniform(-2, 2, 1)
        direct = levy_ito_eval(fam, x, phi, xi=xi)
        drift = levy_ito_drift(fam, xi)
        split = pushforward_eval(fam, x, phi, xi=xi) + drift @ phi.grad(x)
        assert split == pytest.approx(direct, rel=1e-3)
        assert np.linalg.norm(drift) <= drift_bound(fam, xi)


# -- 7: localization -------------------------------------------------------

@pytest.mark.acceptance(7)
@pytest.mark.parametrize("beta", [0.2, 0.1, 0.05])
def test_localization_bounds(beta):
    fam = DensityFamily.power_law(1.0)
    loc = LocalizationFunction(c=1.0, beta=beta)
    rng = np.random.default_rng(7)
    # points on the plateau, in the transition annulus and beyond it
    for x in rng.uniform(0, 3 / beta, 12):
        est = localization_estimates(loc, fam, [x], delta=0.5,
                                     xi_samples=rng.uniform(-5, 5, (3, 1)))
        assert all(e.holds for e in est)


@pytest.mark.acceptance(7)
def test_infimum_modulus_closed_form():
    assert infimum_modulus(lambda R: 1 / R, 0.01) == pytest.approx(0.2, abs=1e-4)


# -- 8: solver exactness and comparison --------------------------------------

@pytest.mark.acceptance(8)
@pytest.mark.parametrize("start", [0.0, 10.0])
def test_constant_solution_recovered(start):
    t0 = time.perf_counter()
    cfg = SolveConfig(lam=1.0, L=6.0, n=64, tol=1e-10)
    H = HamiltonianSpec.model(1.0, 1.0, m=2)
    u = solve_stationary(DensityFamily.power_law(1.0), H, cfg, cfg.grid(const=start))
    assert np.max(np.abs(u.flat - 1.0)) <= 1e-8
    assert time.perf_counter() - t0 < 120


@pytest.mark.acceptance(8)
def test_sub_and_super_runs_agree():
    t0 = time.perf_counter()
    lam = 1.0
    cfg = SolveConfig(lam=lam, L=6.0, n=64, tol=1e-9)
    H = HamiltonianSpec.model(1.0, lambda x: 1.25 + 0.75 * np.sin(x[:, 0]), m=2)
    fam = DensityFamily.power_law(1.0)
    rep = comparison_experiment(fam, H, cfg, cfg.grid(const=0.5 / lam), cfg.grid(const=2.0 / lam))
    u = rep.solution.flat
    assert rep.agreement <= 2 * cfg.tol / lam
    assert np.all(0.5 / lam - cfg.tol <= u) and np.all(u <= 2.0 / lam + cfg.tol)
    assert rep.holds
    assert time.perf_counter() - t0 < 120


# -- 9: manufactured solution ----------------------------------------------

@pytest.mark.acceptance(9)
def test_manufactured_convergence():
    fam = DensityFamily.power_law(1.0)
    w = TestFunction.gaussian(1)
    lam = 1.0

    def f(X):
        return np.array([lam * w(x[None])[0] - eval_full(fam, x, w, delta=0.1)
                         + float(w.grad(x) @ w.grad(x)) for x in np.atleast_2d(X)])

    H = HamiltonianSpec.model(1.0, f, m=2)
    errors = []
    for n in (61, 121, 241):
        cfg = SolveConfig(lam=lam, L=6.0, n=n, far_rule="constant", far_const=0.0, tol=1e-8)
        u = solve_stationary(fam, H, cfg, cfg.grid(const=0.0))
        errors.append(float(np.max(np.abs(u.flat - w(u.nodes)))))
    ratios = [errors[0] / errors[1], errors[1] / errors[2]]
    assert min(ratios) >= 1.6, (errors, ratios)


# -- 10: parabolic comparison -------------------------------------------------

@pytest.mark.acceptance(10)
def test_parabolic_ordering_preserved():
    rng = np.random.default_rng(10)
    cfg = SolveConfig(L=6.0, n=48, T=1.0)
    fam = DensityFamily.power_law(1.0)
    H = HamiltonianSpec.model(lambda x: 1.0 + 0.5 * np.cos(x[:, 0]),
                              lambda x: 1.0 + 0.5 * np.sin(x[:, 0]), m=2)
    for _ in range(20):
        u0 = cfg.grid(fn=smooth_bump(rng))
        gap = GridFunction.from_function(smooth_bump(rng), cfg.L, cfg.n)
        v0 = u0.with_values(u0.values + np.abs(gap.values) * rng.uniform(0, 1))
        res = parabolic_comparison(fam, H, cfg, u0, v0, T=1.0)
        assert res.steps >= 1 and math.isclose(res.steps * res.dt, 1.0, rel_tol=1e-9)
        assert res.violations == 0, res.to_dict()


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
