"""Sampling-based checks of the structural assumptions on measures and Hamiltonians.

Every check returns an :class:`AssumptionReport` with a verdict in
``{"holds", "fails", "inconclusive"}``. Continuity conditions are tested by
fitting ``value ~ C s^alpha`` on a log-log scale over separations
``s = |x - y|`` and comparing ``alpha`` with the required exponent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (JumpOutOfBounds, QuadratureDivergence, TooManyAtoms, UnsupportedVariant)
from .hamiltonian import HamiltonianSpec
from .measures import (DensityFamily, FiniteAtomicFamily, LevyFamily, LevyItoFamily, PolarGrid,
                       QuadConfig, RotatedQuadrantFamily, VariableOrderFamily, discretize,
                       levy_constant, sphere_area, tail_mass, transport_discretize)
from .operators import drift_bound, levy_ito_drift
from .transport import tv_annulus, wasserstein_p_ball, weighted_tv

ALPHA_TOL = 0.1
RMS_MAX = 0.15
MIN_SAMPLES = 8
MIN_DECADES = 2.0
ZERO_TOL = 1e-14

HOLDS, FAILS, INCONCLUSIVE = "holds", "fails", "inconclusive"


# ---------------------------------------------------------------------------
# Samples and fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairSample:
    anchor: int
    s: float
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class SamplePlan:
    """Seeded sampling of base points and pairs.

    Separations are log-spaced in ``[s_min, s_max]``; each anchor contributes
    one pair per separation, along one random direction.
    """

    seed: int = 0
    n_separations: int = 8
    s_min: float = 1e-3
    s_max: float = 1e-1
    n_anchors: int = 1
    n_xi: int = 8

    def separations(self) -> np.ndarray:
        return np.geomspace(self.s_min, self.s_max, self.n_separations)

    def pairs(self, family: LevyFamily) -> list[PairSample]:
        rng = np.random.default_rng([self.seed, 1])
        out = []
        seps = self.separations()
        for a in range(self.n_anchors):
            for (x, y), s in zip(family.sample_pairs(rng, seps, 1), seps):
                out.append(PairSample(a, float(s), np.asarray(x, float), np.asarray(y, float)))
        return out

    def xi_samples(self, family: LevyFamily) -> np.ndarray:
        return family.sample_points(np.random.default_rng([self.seed, 2]), self.n_xi)


class InsufficientSamples(ValueError):
    """Too few samples, or too narrow a range, for a power-law fit."""


@dataclass
class ModulusEstimate:
    """Samples ``(s, value)`` and the fit ``value ~ C s^alpha``.

    A modulus that is identically zero on the samples has ``C = 0`` and
    ``alpha = inf``.
    """

    s: np.ndarray
    values: np.ndarray
    C: float
    alpha: float
    rms: float
    anchors: np.ndarray | None = None

    @property
    def is_zero(self) -> bool:
        return self.C == 0.0

    def predict(self, s) -> np.ndarray:
        if self.is_zero:
            return np.zeros_like(np.asarray(s, dtype=float))
        return self.C * np.asarray(s, dtype=float) ** self.alpha

    def to_dict(self) -> dict:
        return {"C": self.C, "alpha": None if math.isinf(self.alpha) else self.alpha,
                "rms": self.rms, "s": [float(v) for v in self.s],
                "values": [float(v) for v in self.values]}


def fit_power_law(s, values, min_samples: int = MIN_SAMPLES,
                  min_decades: float = MIN_DECADES) -> ModulusEstimate:
    """Least-squares fit of ``log value = log C + alpha log s``.

    Needs ``min_samples`` points spanning ``min_decades`` decades of ``s``.
    """
    s = np.asarray(s, dtype=float)
    v = np.asarray(values, dtype=float)
    if np.any(v < 0) or np.any(s <= 0):
        raise ValueError("samples must be non-negative with positive abscissae")
    if len(s) < min_samples or math.log10(s.max() / s.min()) < min_decades - 1e-9:
        raise InsufficientSamples(f"need >= {min_samples} samples over >= {min_decades} decades")
    if v.max() <= ZERO_TOL:
        return ModulusEstimate(s, v, 0.0, math.inf, 0.0)
    pos = v > 0
    if pos.sum() < min_samples:
        raise InsufficientSamples("too many zero values for a log-log fit")
    ls, lv = np.log(s[pos]), np.log(v[pos])
    alpha, logc = np.polyfit(ls, lv, 1)
    rms = float(np.sqrt(np.mean((lv - (logc + alpha * ls)) ** 2)))
    return ModulusEstimate(s, v, float(math.exp(logc)), float(alpha), rms)


def fit_by_anchor(samples: Sequence[PairSample], values) -> ModulusEstimate:
    """Fit per anchor and keep the worst case (lowest alpha, largest C and rms)."""
    values = np.asarray(values, dtype=float)
    anchors = np.array([p.anchor for p in samples])
    s = np.array([p.s for p in samples])
    fits = [fit_power_law(s[anchors == a], values[anchors == a]) for a in np.unique(anchors)]
    nonzero = [f for f in fits if not f.is_zero]
    if not nonzero:
        return ModulusEstimate(s, values, 0.0, math.inf, 0.0, anchors)
    return ModulusEstimate(s, values, max(f.C for f in nonzero), min(f.alpha for f in nonzero),
                           max(f.rms for f in nonzero), anchors)


def _simple_fit(x, y) -> tuple[float, float]:
    """Exponent and prefactor of ``y ~ C x^a`` without sample-count rules."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    pos = y > 0
    if pos.sum() < 2:
        return math.nan, 0.0
    a, logc = np.polyfit(np.log(x[pos]), np.log(y[pos]), 1)
    return float(a), float(math.exp(logc))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    """Verdict, constants and fitted moduli of one assumption check."""

    assumption: str
    verdict: str
    constants: dict = field(default_factory=dict)
    moduli: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    violation: dict | None = None
    notes: list = field(default_factory=list)
    sub_reports: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in (HOLDS, FAILS, INCONCLUSIVE):
            raise ValueError(f"bad verdict {self.verdict!r}")
        if self.verdict == FAILS and self.violation is None:
            raise ValueError("a failing report must record a violating sample")

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    def to_dict(self) -> dict:
        return {"assumption": self.assumption, "verdict": self.verdict,
                "constants": _jsonable(self.constants),
                "moduli": {k: m.to_dict() for k, m in self.moduli.items()},
                "reference": _jsonable(self.reference), "violation": _jsonable(self.violation),
                "notes": list(self.notes),
                "sub_reports": {k: r.to_dict() for k, r in self.sub_reports.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and (math.isinf(obj) or math.isnan(obj)):
        return str(obj)
    return obj


def _pair_violation(samples, values, target):
    """Sample with the largest ``value / s^target``."""
    ratios = [v / p.s ** target if p.s > 0 else math.inf for p, v in zip(samples, values)]
    k = int(np.argmax(ratios))
    p = samples[k]
    return {"x": p.x.tolist(), "y": p.y.tolist(), "s": p.s, "value": float(values[k]),
            "ratio": float(ratios[k])}


def _exponent_report(name, samples, values, target, constants=None, reference=None,
                     strict_positive=False) -> AssumptionReport:
    """Turn per-pair values into a verdict on ``alpha >= target - tol``."""
    try:
        fit = fit_by_anchor(samples, values)
    except InsufficientSamples as exc:
        return AssumptionReport(name, INCONCLUSIVE, constants or {}, reference=reference or {},
                                notes=[str(exc)])
    consts = dict(constants or {})
    consts.update(C=fit.C, alpha=fit.alpha, rms=fit.rms)
    if fit.is_zero:
        return AssumptionReport(name, HOLDS, consts, {"omega": fit}, reference or {},
                                notes=["all sampled values vanish"])
    if fit.rms > RMS_MAX:
        return AssumptionReport(name, INCONCLUSIVE, consts, {"omega": fit}, reference or {},
                                notes=[f"fit residual {fit.rms:.3f} exceeds {RMS_MAX}"])
    ok = fit.alpha > 0 if strict_positive else fit.alpha >= target - ALPHA_TOL
    if ok:
        return AssumptionReport(name, HOLDS, consts, {"omega": fit}, reference or {})
    return AssumptionReport(name, FAILS, consts, {"omega": fit}, reference or {},
                            violation=_pair_violation(samples, values, target),
                            notes=[f"fitted exponent {fit.alpha:.3f} below {target}"])


def _grid_for(family: LevyFamily, grid: PolarGrid | None) -> PolarGrid:
    return grid if grid is not None else PolarGrid.geometric(dim=family.dim)


def _power_law_params(family):
    """``(lam, c_k, sigma)`` when the family is a plain power-law example."""
    if isinstance(family, DensityFamily):
        return family.lam, family.c_k, family.sigma
    if isinstance(family, RotatedQuadrantFamily):
        return family.lam / 4.0, None, family.sigma
    return None


# ---------------------------------------------------------------------------
# Measure assumptions
# ---------------------------------------------------------------------------

def check_M1(family: LevyFamily, xi_samples, q: QuadConfig | None = None) -> AssumptionReport:
    """Uniform Lévy condition: ``sup_xi int min(1, |z|^2) nu_xi`` is finite.

    The constant is recomputed on a refined quadrature; it must agree within
    ``1e-3`` (relative) for the verdict to hold.
    """
    xi_samples = np.atleast_2d(xi_samples)
    if len(xi_samples) < MIN_SAMPLES:
        raise InsufficientSamples(f"check_M1 needs at least {MIN_SAMPLES} base points")
    q = q or QuadConfig()
    try:
        vals = np.array([levy_constant(family, xi, q) for xi in xi_samples])
        if isinstance(family, FiniteAtomicFamily):
            fine = vals
        else:
            fine = np.array([levy_constant(family, xi, q.refined()) for xi in xi_samples])
    except QuadratureDivergence as exc:
        return AssumptionReport("M1", FAILS, violation={"reason": str(exc)}, notes=[str(exc)])
    c_nu = float(vals.max())
    drift = float(np.max(np.abs(fine - vals) / np.maximum(np.abs(fine), 1e-300)))
    reference = {}
    params = _power_law_params(family)
    if params is not None:
        lam, _, sig = params
        reference["C_nu"] = lam * sphere_area(family.dim) * (1 / (2 - sig) + 1 / sig)
    if isinstance(family, VariableOrderFamily):
        reference["C_nu_upper"] = family.m1_bound()
    consts = {"C_nu": c_nu, "refinement_change": drift,
              "argmax_xi": xi_samples[int(np.argmax(vals))].tolist()}
    if not np.isfinite(c_nu):
        return AssumptionReport("M1", FAILS, consts, reference=reference,
                                violation={"xi": xi_samples[int(np.argmax(vals))].tolist()})
    verdict = HOLDS if drift <= 1e-3 else INCONCLUSIVE
    return AssumptionReport("M1", verdict, consts, reference=reference)


def check_M2(family: LevyFamily, xi_samples, R_list=None,
             q: QuadConfig | None = None) -> AssumptionReport:
    """Uniform decay: ``sup_xi nu_xi(B_R^c)`` decreases to 0 along ``R_list``."""
    R_list = np.geomspace(1.0, 100.0, 9) if R_list is None else np.asarray(R_list, float)
    xi_samples = np.atleast_2d(xi_samples)
    tails = np.array([max(tail_mass(family, xi, R, q) for xi in xi_samples) for R in R_list])
    consts = {"R": R_list.tolist(), "sup_tail": tails.tolist()}
    reference = {}
    params = _power_law_params(family)
    if params is not None:
        lam, _, sig = params
        reference["tail"] = (lam / sig * sphere_area(family.dim) * R_list ** (-sig)).tolist()
    if tails[-1] == 0.0:
        zero_from = float(R_list[np.argmax(tails == 0.0)])
        consts["R0"] = zero_from
        return AssumptionReport("M2", HOLDS, consts, reference=reference,
                                notes=[f"tail vanishes for R >= {zero_from}"])
    try:
        fit = fit_power_law(R_list, tails)
    except InsufficientSamples as exc:
        return AssumptionReport("M2", INCONCLUSIVE, consts, reference=reference, notes=[str(exc)])
    consts.update(decay_exponent=fit.alpha, C=fit.C, rms=fit.rms)
    if fit.alpha < 0 and fit.rms <= RMS_MAX:
        return AssumptionReport("M2", HOLDS, consts, {"tail": fit}, reference)
    if fit.rms > RMS_MAX:
        return AssumptionReport("M2", INCONCLUSIVE, consts, {"tail": fit}, reference,
                                notes=["tail is not close to a power law"])
    return AssumptionReport("M2", FAILS, consts, {"tail": fit}, reference,
                            violation={"R": float(R_list[-1]), "tail": float(tails[-1])})


def check_M3(family: LevyFamily, pairs: Sequence[PairSample], r: float = 0.25, R: float = 4.0,
             grid: PolarGrid | None = None) -> AssumptionReport:
    """Total variation on the annulus ``r < |z| <= R`` vanishes as ``|x - y| -> 0``."""
    grid = _grid_for(family, grid)
    vals = [tv_annulus(discretize(family, p.x, grid), discretize(family, p.y, grid), r, R)
            for p in pairs]
    reference = {}
    params = _power_law_params(family)
    if isinstance(family, DensityFamily) and family.c_k > 0:
        lam, ck, sig = params
        slope = ck / sig * sphere_area(family.dim) * (r ** (-sig) - R ** (-sig))
        reference["lipschitz_bound"] = slope
        reference["bound_ok"] = bool(all(v <= slope * p.s * (1 + 1e-3) for p, v in zip(pairs, vals)))
    rep = _exponent_report("M3", pairs, vals, 1.0, {"r": r, "R": R}, reference,
                           strict_positive=True)
    return rep


def check_M4(family: LevyFamily, pairs: Sequence[PairSample], r_list=None,
             grid: PolarGrid | None = None, p: float = 2.0) -> AssumptionReport:
    """Wasserstein continuity on small balls: ``W_2(B_r) <= C(r) |x - y|^{1/2}``, ``C(r) -> 0``."""
    grid = _grid_for(family, grid)
    r_list = [1 / 16, 1 / 8, 1 / 4, 1 / 2] if r_list is None else list(r_list)
    disc = {}

    def measure(x):
        key = tuple(np.round(x, 15))
        if key not in disc:
            disc[key] = transport_discretize(family, x, grid)
        return disc[key]

    per_r, moduli, alphas, consts = {}, {}, [], {"r_list": r_list}
    try:
        for r in r_list:
            vals = [wasserstein_p_ball(measure(s.x), measure(s.y), r, p).distance for s in pairs]
            per_r[r] = vals
    except TooManyAtoms as exc:
        return AssumptionReport("M4", INCONCLUSIVE, consts,
                                notes=[f"{exc}; coarsen the polar grid or raise r_inner"])
    C_r = []
    for r in r_list:
        try:
            fit = fit_by_anchor(pairs, per_r[r])
        except InsufficientSamples as exc:
            return AssumptionReport("M4", INCONCLUSIVE, consts, notes=[str(exc)])
        moduli[f"r={r:g}"] = fit
        alphas.append(fit.alpha)
        C_r.append(fit.C)
    consts.update(alpha=[float(a) for a in alphas], C_r=C_r)
    reference = {}
    params = _power_law_params(family)
    if isinstance(family, DensityFamily) and family.c_k > 0:
        lam, ck, sig = params
        reference["C_r_bound"] = [math.sqrt(ck / (2 - sig) * sphere_area(family.dim))
                                  * r ** ((2 - sig) / 2) for r in r_list]
    if all(m.is_zero for m in moduli.values()):
        return AssumptionReport("M4", HOLDS, consts, moduli, reference,
                                notes=["W_2 vanishes on all samples"])
    r_expo, _ = _simple_fit(r_list, C_r)
    consts["r_exponent"] = r_expo
    worst_rms = max(m.rms for m in moduli.values())
    if worst_rms > RMS_MAX:
        return AssumptionReport("M4", INCONCLUSIVE, consts, moduli, reference,
                                notes=[f"fit residual {worst_rms:.3f} exceeds {RMS_MAX}"])
    alpha_min = min(alphas)
    if alpha_min >= 0.5 - ALPHA_TOL and r_expo > 0:
        return AssumptionReport("M4", HOLDS, consts, moduli, reference)
    k = int(np.argmin(alphas))
    return AssumptionReport("M4", FAILS, consts, moduli, reference,
                            violation={"r": r_list[k],
                                       **_pair_violation(pairs, per_r[r_list[k]], 0.5)},
                            notes=[f"min alpha {alpha_min:.3f}, C(r) exponent {r_expo:.3f}"])


def _weighted_tv_report(name, family, pairs, r_list, weight, grid):
    grid = _grid_for(family, grid)
    disc = {}

    def measure(x):
        key = tuple(np.round(x, 15))
        if key not in disc:
            disc[key] = discretize(family, x, grid)
        return disc[key]

    reports = {}
    for r in r_list:
        vals = [weighted_tv(measure(s.x), measure(s.y), r, weight) for s in pairs]
        reports[r] = _exponent_report(name, pairs, vals, 1.0, {"r": r})
    verdicts = [rep.verdict for rep in reports.values()]
    consts = {"r_list": list(r_list),
              "alpha": [rep.constants.get("alpha") for rep in reports.values()],
              "C": [rep.constants.get("C") for rep in reports.values()]}
    moduli = {f"r={r:g}": rep.moduli["omega"] for r, rep in reports.items() if rep.moduli}
    if FAILS in verdicts:
        bad = next(rep for rep in reports.values() if rep.verdict == FAILS)
        return AssumptionReport(name, FAILS, consts, moduli, violation=bad.violation,
                                notes=bad.notes)
    verdict = HOLDS if all(v == HOLDS for v in verdicts) else INCONCLUSIVE
    return AssumptionReport(name, verdict, consts, moduli)


def check_M_unified(family: LevyFamily, pairs: Sequence[PairSample], r_list=None,
                    grid: PolarGrid | None = None) -> AssumptionReport:
    """``int_{B_r} min(1, |z|^2) |nu_x - nu_y| <= o_r(1) |x - y|`` for every ``r``.

    (M3) and (M4) are re-derived on the same samples; when (M) holds both
    must hold, and the report records whether that is the case.
    """
    r_list = [0.25, 0.5, 1.0, 2.0, 4.0] if r_list is None else list(r_list)
    rep = _weighted_tv_report("M", family, pairs, r_list, lambda t: np.minimum(1.0, t * t), grid)
    m3 = check_M3(family, pairs, grid=grid)
    m4 = check_M4(family, pairs, grid=grid)
    rep.sub_reports = {"M3": m3, "M4": m4}
    consistent = not rep.holds or (m3.holds and m4.holds)
    rep.constants["implication_consistent"] = consistent
    if not consistent:
        rep.notes.append("(M) holds but (M3)/(M4) do not on the same samples")
    return rep


def check_M4_prime(family: LevyFamily, pairs: Sequence[PairSample], r_list=None,
                   grid: PolarGrid | None = None, r0: float = 1.0) -> AssumptionReport:
    """``int_{B_r} |z|^2 |nu_x - nu_y| <= o_r(1) |x - y|`` for ``r < r0``."""
    r_list = [1 / 16, 1 / 8, 1 / 4, 1 / 2] if r_list is None else list(r_list)
    if any(r >= r0 for r in r_list):
        raise ValueError("all radii must be below r0")
    rep = _weighted_tv_report("M4'", family, pairs, r_list, lambda t: t * t, grid)
    rep.notes.append("(M4)' implies (M4) through W_2^2 <= second moment of |nu_x - nu_y|")
    return rep


def check_M4_doubleprime(family: LevyFamily, pairs: Sequence[PairSample], p: float = 1.0,
                         grid: PolarGrid | None = None) -> AssumptionReport:
    """``W_p(nu_x, nu_y)(B) <= C_p |x - y|`` on the unit ball."""
    grid = _grid_for(family, grid)
    disc = {}

    def measure(x):
        key = tuple(np.round(x, 15))
        if key not in disc:
            disc[key] = transport_discretize(family, x, grid)
        return disc[key]

    try:
        vals = [wasserstein_p_ball(measure(s.x), measure(s.y), 1.0, p).distance for s in pairs]
    except TooManyAtoms as exc:
        return AssumptionReport("M4''", INCONCLUSIVE, {"p": p}, notes=[str(exc)])
    rep = _exponent_report("M4''", pairs, vals, 1.0, {"p": p})
    rep.constants["C_p"] = rep.constants.get("C", 0.0)
    return rep


# ---------------------------------------------------------------------------
# Hamiltonian assumptions
# ---------------------------------------------------------------------------

def _envelope_fit(s, vals):
    """Power-law fit of a modulus, rescaled so that it dominates every sample."""
    fit = fit_power_law(s, vals)
    if fit.is_zero:
        return fit
    ratio = np.max(vals / (fit.C * s ** fit.alpha))
    return ModulusEstimate(fit.s, fit.values, fit.C * max(1.0, float(ratio)), fit.alpha, fit.rms)


def check_H(spec: HamiltonianSpec, x_samples, p_samples, mu_samples=None, t_samples=None,
            seed: int = 0) -> AssumptionReport:
    """(H0) boundedness at ``p = 0``, (H1) two moduli and (H2) coercivity.

    (H1) fits ``omega_1`` from ``H(y, p) - H(x, p)`` normalised by
    ``1 + |p|^m`` and ``omega_2`` from ``H(x, p + q) - H(x, p)`` normalised
    by ``1 + |p|^(m-1)`` (``|q| <= 1``), then checks the combined inequality on
    mixed samples. (H2) checks
    ``mu H(x, p/mu) - H(x, p) >= (1 - mu)(b_m |p|^m - b_0)`` for ``|p| >= r_0``
    and reports the largest ``C`` with ``H(x, p) >= C |p|^m - |p| / C``.
    """
    x = np.atleast_2d(np.asarray(x_samples, dtype=float))
    P = np.atleast_2d(np.asarray(p_samples, dtype=float))
    mus = np.linspace(spec.mu_0, 1.0, 6) if mu_samples is None else np.asarray(mu_samples, float)
    ts = ([0.0] if not spec.time_dependent else list(np.linspace(0, 1, 5))) \
        if t_samples is None else list(t_samples)
    rng = np.random.default_rng([seed, 3])
    dim, m = x.shape[1], spec.m
    name = "H-t" if spec.time_dependent else "H"
    consts, moduli, notes = {}, {}, []

    # (H0)
    h0 = max(float(np.max(np.abs(spec(x, np.zeros_like(x), t)))) for t in ts)
    consts["H0"] = h0
    if not np.isfinite(h0):
        return AssumptionReport(name, FAILS, consts, violation={"H(x,0)": "not finite"})

    # (H1): omega_1 in |x - y|, omega_2 in |q|
    seps = np.geomspace(1e-3, 1e-1, 8)
    qs = np.geomspace(1e-3, 1.0, 8)
    w1, w2 = [], []
    for s in seps:
        e = rng.normal(size=(len(x), dim))
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        y = x + s * e
        best = 0.0
        for p in P:
            pp = np.broadcast_to(p, x.shape)
            norm = 1 + np.linalg.norm(p) ** m
            for t in ts:
                best = max(best, float(np.max(np.abs(spec(y, pp, t) - spec(x, pp, t)))) / norm)
        w1.append(best)
    for qn in qs:
        best = 0.0
        for p in P:
            e = rng.normal(size=(len(x), dim))
            e /= np.linalg.norm(e, axis=1, keepdims=True)
            pp = np.broadcast_to(p, x.shape)
            norm = 1 + np.linalg.norm(p) ** (m - 1)
            for t in ts:
                best = max(best, float(np.max(np.abs(spec(x, pp + qn * e, t) - spec(x, pp, t)))) / norm)
        w2.append(best)
    om1 = _envelope_fit(seps, np.array(w1))
    om2 = _envelope_fit(qs, np.array(w2))
    moduli.update(omega_1=om1, omega_2=om2)
    consts.update(omega_1_alpha=om1.alpha, omega_2_alpha=om2.alpha)
    # mixed samples: combined inequality with the fitted moduli
    worst, worst_sample = 0.0, None
    for _ in range(64):
        xi = x[rng.integers(len(x))]
        p = P[rng.integers(len(P))]
        s, qn = rng.choice(seps), rng.choice(qs)
        e1, e2 = rng.normal(size=dim), rng.normal(size=dim)
        y = xi + s * e1 / np.linalg.norm(e1)
        q = qn * e2 / np.linalg.norm(e2)
        for t in ts:
            lhs = float(spec(y[None], (p + q)[None], t)[0] - spec(xi[None], p[None], t)[0])
            rhs = (float(om1.predict(s)) * (1 + np.linalg.norm(p) ** m)
                   + float(om2.predict(qn)) * (1 + np.linalg.norm(p) ** (m - 1)))
            if lhs - rhs > worst:
                worst, worst_sample = lhs - rhs, {"x": xi.tolist(), "y": y.tolist(),
                                                  "p": p.tolist(), "q": q.tolist(), "t": t}
    if worst > 0:
        notes.append(f"combined (H1) inequality exceeded by {worst:.2e} on mixed samples; "
                     "moduli rescaled")
        consts["h1_rescale"] = worst
    h1_ok = (om1.is_zero or om1.alpha > 0) and (om2.is_zero or om2.alpha > 0)

    # (H2) coercivity on |p| >= r_0
    big = P[np.linalg.norm(P, axis=1) >= spec.r_0]
    min_res, res_sample = math.inf, None
    for t in ts:
        for mu in mus:
            for p in big:
                pp = np.broadcast_to(p, x.shape)
                lhs = mu * spec(x, pp / mu, t) - spec(x, pp, t)
                rhs = (1 - mu) * (spec.b_m * np.linalg.norm(p) ** m - spec.b_0)
                res = lhs - rhs
                k = int(np.argmin(res))
                if res[k] < min_res:
                    min_res = float(res[k])
                    res_sample = {"x": x[k].tolist(), "p": p.tolist(), "mu": float(mu), "t": t,
                                  "residual": float(res[k])}
    consts["H2_min_residual"] = min_res
    h2_ok = min_res >= -1e-10 * max(1.0, h0)

    # consequence: H(x,p) >= C|p|^m - |p|/C
    if len(big):
        vals = np.concatenate([spec(x[:, None, :].repeat(len(big), 1).reshape(-1, dim),
                                    np.tile(big, (len(x), 1)), t) for t in ts])
        norms = np.tile(np.linalg.norm(big, axis=1), len(x) * len(ts))

        def gap(logc):
            c = math.exp(logc)
            return float(np.max(c * norms ** m - norms / c - vals))

        lo, hi = -40.0, 40.0
        if gap(lo) > 0:
            consts["coercivity_C"] = None
        else:
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if gap(mid) <= 0 else (lo, mid)
            consts["coercivity_C"] = math.exp(lo)

    if not h1_ok:
        k = int(np.argmax(w1))
        return AssumptionReport(name, FAILS, consts, moduli, notes=notes,
                                violation={"modulus": "omega_1 or omega_2 does not vanish at 0",
                                           "s": float(seps[k]), "value": float(w1[k])})
    if not h2_ok:
        return AssumptionReport(name, FAILS, consts, moduli, violation=res_sample, notes=notes)
    return AssumptionReport(name, HOLDS, consts, moduli, notes=notes)


# ---------------------------------------------------------------------------
# Lévy-Itô assumptions
# ---------------------------------------------------------------------------

def check_J(family: LevyItoFamily, pairs: Sequence[PairSample], r_list=None,
            grid: PolarGrid | None = None, q: QuadConfig | None = None) -> AssumptionReport:
    """(J1)-(J4) for a jump function plus the drift bound.

    (J3) takes the supremum over grid atoms with ``r <= |z| <= r_outer``
    because linearly growing jumps have no finite supremum on all of
    ``B_r^c``. (J4) integrates ``|j(x, z) - j(y, z)|^2`` against the base
    measure on ``B_r``.
    """
    if not isinstance(family, LevyItoFamily):
        raise UnsupportedVariant("check_J needs a Lévy-Itô family")
    grid = _grid_for(family, grid)
    q = q or grid.quad_config()
    r_list = [1 / 16, 1 / 8, 1 / 4, 1 / 2] if r_list is None else list(r_list)
    base_atoms = discretize(family.base, pairs[0].x, grid)
    pts = base_atoms.points
    consts, moduli, notes = {"c0": family.c0, "c1": family.c1}, {}, []
    xis = {tuple(np.round(v, 15)): v for p in pairs for v in (p.x, p.y)}

    # (J1) injectivity on atoms, (J2) growth bounds
    tree = cKDTree(pts)
    d0, _ = tree.query(pts, k=2)
    tol = 0.5 * float(d0[:, 1].min()) if len(pts) > 1 else 0.0
    min_sep = math.inf
    for key, xi in xis.items():
        try:
            mapped = family.apply(xi, pts)
        except JumpOutOfBounds as exc:
            return AssumptionReport("J", FAILS, consts, violation={"J2": str(exc), "xi": list(key)})
        if len(mapped) > 1:
            d, _ = cKDTree(mapped).query(mapped, k=2)
            min_sep = min(min_sep, float(d[:, 1].min()))
    consts.update(J1_min_separation=min_sep, J1_tolerance=tol)
    if min_sep <= tol:
        return AssumptionReport("J", FAILS, consts, violation={"J1": "atoms collide",
                                                               "min_separation": min_sep})

    # (J3) annulus modulus, (J4) weighted squared difference
    rad = np.linalg.norm(pts, axis=1)
    j4_vals = {}
    for r in r_list:
        sel = rad >= r
        vals3 = [float(np.max(np.linalg.norm(family.apply(p.x, pts[sel])
                                             - family.apply(p.y, pts[sel]), axis=1)))
                 for p in pairs]
        rep3 = _exponent_report("J3", pairs, vals3, 1.0, strict_positive=True)
        if rep3.moduli:
            moduli[f"J3 r={r:g}"] = rep3.moduli["omega"]
        if rep3.verdict == FAILS:
            return AssumptionReport("J", FAILS, consts, moduli, violation=rep3.violation)
        vals4 = [_j4_integral(family, p.x, p.y, r, q) for p in pairs]
        j4_vals[r] = vals4
        rep4 = _exponent_report("J4", pairs, vals4, 1.0)
        if rep4.moduli:
            moduli[f"J4 r={r:g}"] = rep4.moduli["omega"]
        if rep4.verdict == FAILS:
            return AssumptionReport("J", FAILS, consts, moduli, violation=rep4.violation)
    j4_alpha = [moduli[f"J4 r={r:g}"].alpha for r in r_list if f"J4 r={r:g}" in moduli]
    j4_C = [moduli[f"J4 r={r:g}"].C for r in r_list if f"J4 r={r:g}" in moduli]
    consts["J4_alpha"] = j4_alpha
    if j4_C and all(c > 0 for c in j4_C):
        consts["J4_r_exponent"] = _simple_fit(r_list, j4_C)[0]

    # drift bound
    drifts = {key: levy_ito_drift(family, xi, q) for key, xi in xis.items()}
    bounds = {key: drift_bound(family, xi, q) for key, xi in xis.items()}
    worst = max(xis, key=lambda k: np.linalg.norm(drifts[k]) - bounds[k])
    consts.update(drift_max=max(float(np.linalg.norm(v)) for v in drifts.values()),
                  drift_bound=max(bounds.values()))
    if np.linalg.norm(drifts[worst]) > bounds[worst] * (1 + 1e-9) + 1e-12:
        return AssumptionReport("J", FAILS, consts, moduli,
                                violation={"xi": list(worst), "drift": drifts[worst].tolist(),
                                           "bound": bounds[worst]})
    return AssumptionReport("J", HOLDS, consts, moduli, notes=notes)


def _j4_integral(family: LevyItoFamily, x, y, r: float, q: QuadConfig) -> float:
    """``int_{B_r} |j(x, z) - j(y, z)|^2 nu(dz)`` over the base measure."""
    base = family.base
    if isinstance(base, FiniteAtomicFamily):
        mu = base.measure(x)
        sel = mu.radii() < r
        d = family.apply(x, mu.points[sel]) - family.apply(y, mu.points[sel])
        return float(np.sum(mu.masses[sel] * np.sum(d * d, axis=1)))
    eps = min(q.r_inner, r)
    dirs, amp, sig = base.amplitudes(x, eps, q)
    d = (family.apply(x, eps * dirs) - family.apply(y, eps * dirs)) / eps
    total = float(np.sum(amp * np.sum(d * d, axis=1))) * eps ** (2 - sig) / (2 - sig)
    rule = base.rule(x, eps, r, q)
    d = family.apply(x, rule.points) - family.apply(y, rule.points)
    return total + float(np.sum(rule.weights * np.sum(d * d, axis=1)))


__all__ = ["PairSample", "SamplePlan", "ModulusEstimate", "AssumptionReport", "InsufficientSamples",
           "fit_power_law", "fit_by_anchor", "check_M1", "check_M2", "check_M3", "check_M4",
           "check_M_unified", "check_M4_prime", "check_M4_doubleprime", "check_H", "check_J",
           "HOLDS", "FAILS", "INCONCLUSIVE"]
