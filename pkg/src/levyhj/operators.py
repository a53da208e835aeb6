"""Nonlocal operators split into inner ball, crown and exterior.

For a family ``nu_xi`` and a function ``u`` we evaluate pieces of

    I_xi u(x) = int (u(x+z) - u(x) - 1_B(z) p . z) nu_xi(dz)

with ``B`` the unit ball. The inner ball ``B_delta`` uses the exact gradient
of a test function, the crown ``B \\ B_delta`` uses a supplied slope ``p`` and
the exterior has no compensator. By default ``xi = x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize

from .errors import MissingFarField, UnsupportedVariant
from .measures import (DiscretizedMeasure, FiniteAtomicFamily, LevyFamily, LevyItoFamily,
                       QuadConfig, _as_xi, _check_decay, angular_rule, levy_constant,
                       moment2_ball, tail_mass)


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """A bounded ``C^2`` function with its derivatives.

    ``value`` maps ``(M, N)`` to ``(M,)``; ``grad`` and ``hess`` act on a
    single point. ``far_field`` is the limit at infinity, if there is one.
    """

    __test__ = False

    value: Callable
    grad: Callable
    hess: Callable
    sup_norm: float = math.inf
    far_field: float | None = None
    name: str = "phi"

    def __call__(self, X) -> np.ndarray:
        return np.asarray(self.value(np.atleast_2d(X)), dtype=float)

    def far_value(self, x, dirs) -> np.ndarray | None:
        if self.far_field is None:
            return None
        return np.full(len(dirs), float(self.far_field))

    def check_consistency(self, points, h: float = 1e-4, rtol: float = 1e-4) -> bool:
        """Compare ``grad``/``hess`` with central differences at ``points``."""
        points = np.atleast_2d(points)
        n = points.shape[1]
        for x in points:
            g, H = np.asarray(self.grad(x)), np.asarray(self.hess(x))
            eye = np.eye(n) * h
            fd_g = np.array([(self(x + e)[0] - self(x - e)[0]) / (2 * h) for e in eye])
            fd_h = np.array([(np.asarray(self.grad(x + e)) - np.asarray(self.grad(x - e))) / (2 * h)
                             for e in eye])
            scale_g = max(1.0, np.abs(g).max())
            scale_h = max(1.0, np.abs(H).max())
            if np.abs(fd_g - g).max() > rtol * scale_g or np.abs(fd_h - H).max() > rtol * scale_h:
                return False
        return True

    # -- common examples -------------------------------------------------
    @classmethod
    def quadratic(cls, dim: int, center=None) -> "TestFunction":
        """``|x - c|^2``; unbounded, so only suitable for local pieces."""
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        return cls(lambda X: np.sum((X - c) ** 2, axis=1), lambda x: 2 * (np.asarray(x) - c),
                   lambda x: 2 * np.eye(dim), name="quadratic")

    @classmethod
    def affine(cls, a, c: float = 0.0) -> "TestFunction":
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return cls(lambda X: X @ a + c, lambda x: a.copy(), lambda x: np.zeros((len(a), len(a))),
                   name="affine")

    @classmethod
    def cosine(cls, e, phase: float = 0.0) -> "TestFunction":
        """``cos(x . e + phase)``."""
        e = np.atleast_1d(np.asarray(e, dtype=float))
        return cls(lambda X: np.cos(X @ e + phase),
                   lambda x: -np.sin(np.dot(x, e) + phase) * e,
                   lambda x: -np.cos(np.dot(x, e) + phase) * np.outer(e, e),
                   sup_norm=1.0, name="cosine")

    @classmethod
    def gaussian(cls, dim: int, scale: float = 1.0, center=None) -> "TestFunction":
        """``exp(-|x - c|^2 / scale^2)``, vanishing at infinity."""
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        s2 = scale ** 2

        def value(X):
            return np.exp(-np.sum((X - c) ** 2, axis=1) / s2)

        def grad(x):
            d = np.asarray(x) - c
            return -2 * d / s2 * math.exp(-d @ d / s2)

        def hess(x):
            d = np.asarray(x) - c
            v = math.exp(-d @ d / s2)
            return v * (4 * np.outer(d, d) / s2 ** 2 - 2 * np.eye(dim) / s2)

        return cls(value, grad, hess, sup_norm=1.0, far_field=0.0, name="gaussian")


# ---------------------------------------------------------------------------
# Localization profile
# ---------------------------------------------------------------------------

def _ramp(t):
    return t ** 3 * (10 - 15 * t + 6 * t * t)


def _ramp1(t):
    return 30 * t * t * (1 - t) ** 2


def _ramp2(t):
    return 60 * t * (1 - t) * (1 - 2 * t)


@dataclass(frozen=True)
class LocalizationFunction:
    """``psi_beta(x) = c S(beta |x| - 1)`` with the quintic ramp ``S``.

    ``S(t) = 10 t^3 - 15 t^4 + 6 t^5`` on ``[0, 1]``, clamped to 0 below and
    1 above, so ``psi_beta`` vanishes on ``|x| <= 1/beta``, equals ``c`` on
    ``|x| >= 2/beta`` and is ``C^2``.
    """

    c: float = 1.0
    beta: float = 0.1

    def __post_init__(self):
        if self.c <= 0 or not (0 < self.beta < 1):
            raise ValueError("need c > 0 and beta in (0, 1)")

    @property
    def C0(self) -> float:
        """Common bound of ``psi``, ``|D psi|`` and ``|D^2 psi|`` at scale 1."""
        t = np.linspace(0.0, 1.0, 20001)
        hess = np.maximum(np.abs(_ramp2(t)), _ramp1(t) / (1 + t))
        return float(self.c * max(1.0, _ramp1(t).max(), hess.max()))

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        rho = float(np.linalg.norm(x))
        t = min(max(self.beta * rho - 1.0, 0.0), 1.0)
        return x, rho, t

    def value(self, X):
        rho = np.linalg.norm(np.atleast_2d(X), axis=1)
        return self.c * _ramp(np.clip(self.beta * rho - 1.0, 0.0, 1.0))

    def grad(self, x):
        x, rho, t = self._parts(x)
        if t <= 0 or t >= 1:
            return np.zeros_like(x)
        return self.c * self.beta * _ramp1(t) * x / rho

    def hess(self, x):
        x, rho, t = self._parts(x)
        n = len(x)
        if t <= 0 or t >= 1:
            return np.zeros((n, n))
        w = x / rho
        radial = self.c * self.beta ** 2 * _ramp2(t)
        tangential = self.c * self.beta * _ramp1(t) / rho
        return radial * np.outer(w, w) + tangential * (np.eye(n) - np.outer(w, w))

    def as_test_function(self) -> TestFunction:
        return TestFunction(self.value, self.grad, self.hess, sup_norm=self.c,
                            far_field=self.c, name=f"psi_beta={self.beta}")


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------

def atomic_measure(family: LevyFamily, xi) -> DiscretizedMeasure | None:
    """The measure ``nu_xi`` as atoms if the family is purely atomic."""
    if isinstance(family, FiniteAtomicFamily):
        return family.measure(xi)
    if isinstance(family, LevyItoFamily) and isinstance(family.base, FiniteAtomicFamily):
        base = family.base.measure(xi)
        return DiscretizedMeasure(family.apply(xi, base.points), base.masses, xi=xi)
    return None


def _values(u, X) -> np.ndarray:
    if hasattr(u, "value") and callable(u.value):
        return np.asarray(u.value(X), dtype=float)
    raise MissingFarField("u must be a TestFunction or GridFunction")


def _prepare(family, x, xi, q):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = x if xi is None else _as_xi(xi, family.dim)
    return x, xi, q or QuadConfig()


def eval_inner(family: LevyFamily, x, phi: TestFunction, delta: float,
               q: QuadConfig | None = None, xi=None) -> float:
    """``int_{|z| < delta} (phi(x+z) - phi(x) - D phi(x) . z) nu_xi(dz)``, ``delta <= 1``."""
    if delta > 1:
        raise ValueError("eval_inner needs delta <= 1")
    x, xi, q = _prepare(family, x, xi, q)
    g = np.asarray(phi.grad(x), dtype=float)
    f0 = float(phi(x[None, :])[0])
    atoms = atomic_measure(family, xi)
    if atoms is not None:
        sel = atoms.radii() < delta
        z = atoms.points[sel]
        return float(np.sum(atoms.masses[sel] * (phi(x + z) - f0 - z @ g)))
    eps = min(q.r_inner, delta)
    _check_decay(family, xi, q, eps)
    H = np.asarray(phi.hess(x), dtype=float)
    dirs, amp, sig = family.amplitudes(xi, eps, q)
    quad_form = np.einsum("ki,ij,kj->k", dirs, H, dirs)
    total = 0.5 * float(np.sum(amp * quad_form)) * eps ** (2 - sig) / (2 - sig)
    if delta > eps:
        rule = family.rule(xi, eps, delta, q)
        z = rule.points
        total += float(np.sum(rule.weights * (phi(x + z) - f0 - z @ g)))
    return total


def outer_parts(family: LevyFamily, x, p, u, delta: float, q: QuadConfig | None = None,
                xi=None) -> dict:
    """Crown, exterior and tail pieces of ``I_xi[B_delta^c](x, p, u)``.

    The tail beyond ``q.r_outer`` is completed analytically from the local
    power law with the far-field values of ``u``. Without a far field the
    tail is dropped and ``truncation_bound = 2 ||u|| nu(|z| >= r_outer)`` is
    reported instead.
    """
    x, xi, q = _prepare(family, x, xi, q)
    if not hasattr(u, "value"):
        raise MissingFarField("u needs a declared far-field extension")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    u0 = float(_values(u, x[None, :])[0])
    out = {"crown": 0.0, "exterior": 0.0, "tail": 0.0, "truncation_bound": 0.0}
    atoms = atomic_measure(family, xi)
    if atoms is not None:
        rad = atoms.radii()
        z, m = atoms.points, atoms.masses
        diff = _values(u, x + z) - u0
        crown = (rad >= delta) & (rad < 1)
        out["crown"] = float(np.sum(m[crown] * (diff[crown] - z[crown] @ p)))
        ext = (rad >= max(delta, 1.0))
        out["exterior"] = float(np.sum(m[ext] * diff[ext]))
        return out
    R = q.r_outer
    if delta < 1:
        rule = family.rule(xi, delta, 1.0, q)
        z = rule.points
        out["crown"] = float(np.sum(rule.weights * (_values(u, x + z) - u0 - z @ p)))
    lo = max(delta, 1.0)
    if lo < R:
        rule = family.rule(xi, lo, R, q)
        out["exterior"] = float(np.sum(rule.weights * (_values(u, x + rule.points) - u0)))
    dirs, amp, sig = family.amplitudes(xi, max(R, lo), q)
    mass = amp * max(R, lo) ** (-sig) / sig
    far = u.far_value(x, dirs) if hasattr(u, "far_value") else None
    if far is None:
        bound = getattr(u, "sup_norm", math.inf)
        out["truncation_bound"] = 2.0 * bound * float(mass.sum())
    else:
        out["tail"] = float(np.sum(mass * (np.asarray(far) - u0)))
    return out


def eval_outer(family: LevyFamily, x, p, u, delta: float, q: QuadConfig | None = None,
               xi=None) -> float:
    """``int_{|z| >= delta} (u(x+z) - u(x) - 1_B(z) p . z) nu_xi(dz)``."""
    parts = outer_parts(family, x, p, u, delta, q, xi)
    return parts["crown"] + parts["exterior"] + parts["tail"]


def eval_full(family: LevyFamily, x, phi: TestFunction, delta: float = 0.1,
              q: QuadConfig | None = None, xi=None) -> float:
    """``I_xi phi(x)`` as inner plus outer with the exact gradient."""
    g = phi.grad(np.atleast_1d(np.asarray(x, dtype=float)))
    return (eval_inner(family, x, phi, min(delta, 1.0), q, xi)
            + eval_outer(family, x, g, phi, min(delta, 1.0), q, xi))


def operator_trace(family: LevyFamily, xs, phi: TestFunction, delta: float,
                   q: QuadConfig | None = None) -> list[tuple]:
    """Rows ``(x..., inner, crown, outer)`` for plotting."""
    rows = []
    for x in np.atleast_2d(xs):
        inner = eval_inner(family, x, phi, delta, q)
        parts = outer_parts(family, x, phi.grad(x), phi, delta, q)
        rows.append((*map(float, x), inner, parts["crown"],
                     parts["crown"] + parts["exterior"] + parts["tail"]))
    return rows


# ---------------------------------------------------------------------------
# Lévy-Itô form
# ---------------------------------------------------------------------------

def _require_ito(family):
    if not isinstance(family, LevyItoFamily):
        raise UnsupportedVariant("operation requires a Lévy-Itô family")


def levy_ito_eval(family: LevyItoFamily, x, phi: TestFunction, delta: float = 1.0,
                  q: QuadConfig | None = None, xi=None) -> float:
    """``J_xi phi(x) = int (phi(x + j) - phi(x) - 1_B(z) D phi(x) . j) nu(dz)``.

    Integrates over the base measure directly, with ``j = j(xi, z)``. The
    split radius ``delta`` only changes how the quadrature is organised.
    """
    _require_ito(family)
    x, xi, q = _prepare(family, x, xi, q)
    g = np.asarray(phi.grad(x), dtype=float)
    f0 = float(phi(x[None, :])[0])
    base = family.base
    if isinstance(base, FiniteAtomicFamily):
        mu = base.measure(xi)
        jz = family.apply(xi, mu.points)
        comp = (mu.radii() < 1)[:, None] * jz
        return float(np.sum(mu.masses * (phi(x + jz) - f0 - comp @ g)))
    eps = min(q.r_inner, delta, 1.0)
    _check_decay(base, xi, q, eps)
    H = np.asarray(phi.hess(x), dtype=float)
    dirs, amp, sig = base.amplitudes(xi, eps, q)
    jd = family.apply(xi, eps * dirs) / eps
    total = 0.5 * float(np.sum(amp * np.einsum("ki,ij,kj->k", jd, H, jd))) \
        * eps ** (2 - sig) / (2 - sig)
    cuts = sorted({eps, min(max(delta, eps), 1.0), 1.0, q.r_outer})
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        rule = base.rule(xi, a, b, q)
        jz = family.apply(xi, rule.points)
        comp = jz @ g if b <= 1.0 else 0.0
        total += float(np.sum(rule.weights * (phi(x + jz) - f0 - comp)))
    dirs, amp, sig = base.amplitudes(xi, q.r_outer, q)
    far = phi.far_value(x, dirs)
    if far is not None:
        total += float(np.sum(amp * q.r_outer ** (-sig) / sig * (far - f0)))
    return total


def pushforward_eval(family: LevyItoFamily, x, phi: TestFunction, delta: float = 1.0,
                     q: QuadConfig | None = None, xi=None) -> float:
    """``I_xi phi(x)`` for the push-forward measure ``(j_xi)_# nu`` (Lévy form)."""
    _require_ito(family)
    x, xi, q = _prepare(family, x, xi, q)
    d = min(delta, 1.0)
    return eval_inner(family, x, phi, d, q, xi) + eval_outer(family, x, phi.grad(x), phi, d, q, xi)


def _ray_cut(family, xi, w) -> float:
    """Radius ``rho`` with ``|j(xi, rho w)| = 1`` (bracketed by the growth bounds)."""
    def f(rho):
        return float(np.linalg.norm(family.jump(xi, (rho * w)[None, :]))) - 1.0
    lo, hi = 1.0 / family.c1, 1.0 / family.c0
    flo, fhi = f(lo), f(hi)
    if abs(flo) < 1e-15:
        return lo
    if abs(fhi) < 1e-15:
        return hi
    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-15)


def levy_ito_drift(family: LevyItoFamily, xi, q: QuadConfig | None = None,
                   n_nodes: int = 24) -> np.ndarray:
    """``b^j(xi) = int (1_{j^-1(B)}(z) - 1_B(z)) j(xi, z) nu(dz)``.

    Along each direction ``w`` of the angular rule the symmetric difference
    ``B Δ j^-1(B)`` is the radial interval between 1 and the cut radius where
    ``|j(rho w)| = 1``; it is integrated with Gauss-Legendre nodes. This
    assumes ``rho -> |j(xi, rho w)|`` crosses 1 once.
    """
    _require_ito(family)
    q = q or QuadConfig()
    xi = _as_xi(xi, family.dim)
    base = family.base
    if isinstance(base, FiniteAtomicFamily):
        mu = base.measure(xi)
        jz = family.apply(xi, mu.points)
        ind = (np.linalg.norm(jz, axis=1) < 1).astype(float) - (mu.radii() < 1)
        return (mu.masses * ind) @ jz
    dirs, wdir, _ = angular_rule(base.dim, q.n_angular, q.n_sub, base.angular_breaks(xi))
    t, wt = leggauss(n_nodes)
    out = np.zeros(base.dim)
    for w, ww in zip(dirs, wdir):
        cut = _ray_cut(family, xi, w)
        if abs(cut - 1.0) < 1e-15:
            continue
        lo, hi = min(cut, 1.0), max(cut, 1.0)
        sign = 1.0 if cut > 1.0 else -1.0
        rho = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t
        pts = rho[:, None] * w[None, :]
        dens = base.density(xi, pts)
        jz = family.apply(xi, pts)
        weight = 0.5 * (hi - lo) * wt * rho ** (base.dim - 1) * dens * ww
        out += sign * (weight @ jz)
    return out


def drift_bound(family: LevyItoFamily, xi, q: QuadConfig | None = None) -> float:
    """``c1 max(1, 1/c0) nu(B_max(1/c0, 1) minus B_min(1/c1, 1))``."""
    _require_ito(family)
    lo, hi = min(1 / family.c1, 1.0), max(1 / family.c0, 1.0)
    base = family.base
    if hi <= lo:
        return 0.0
    if isinstance(base, FiniteAtomicFamily):
        mu = base.measure(xi)
        r = mu.radii()
        mass = float(mu.masses[(r >= lo) & (r < hi)].sum())
    else:
        mass = float(base.rule(xi, lo, hi, q).weights.sum())
    return family.c1 * max(1.0, 1 / family.c0) * mass


# ---------------------------------------------------------------------------
# Localization estimates
# ---------------------------------------------------------------------------

def infimum_modulus(g: Callable[[float], float], beta: float, r_hi: float | None = None,
                    n_sweep: int = 200) -> float:
    """``inf_{R >= 1} g(R) + R beta`` by a log sweep refined with golden section."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    r_hi = r_hi or max(1e3, 1e3 / beta)
    R = np.geomspace(1.0, r_hi, n_sweep)
    f = np.array([g(r) + r * beta for r in R])
    k = int(np.argmin(f))
    if k == 0 or k == len(R) - 1:
        return float(f[k])
    res = optimize.minimize_scalar(lambda r: g(r) + r * beta, bracket=(R[k - 1], R[k], R[k + 1]),
                                   method="golden", tol=1e-12)
    return float(min(res.fun, f[k]))


@dataclass
class LocalizationEstimate:
    """Measured localization terms against their analytic upper bounds."""

    beta: float
    xi: np.ndarray
    inner: float
    outer: float
    bound_inner: float
    bound_outer: float
    c_nu: float
    C0: float

    @property
    def holds(self) -> bool:
        return (abs(self.inner) <= self.bound_inner * (1 + 1e-9) + 1e-14
                and abs(self.outer) <= self.bound_outer * (1 + 1e-9) + 1e-14)


def localization_estimates(loc: LocalizationFunction, family: LevyFamily, x, delta: float,
                           q: QuadConfig | None = None, xi_samples=None) -> list[LocalizationEstimate]:
    """Inner and outer pieces of ``I_xi psi_beta(x)`` with their bounds.

    Inner bound: ``1/2 C0 beta^2 min(C_nu, int_{B_delta}|z|^2 nu_xi)``.
    Outer bound: ``1/2 C0 beta^2 C_nu + C0 inf_R (2 nu_xi(B_R^c) + R beta C_nu)``,
    which tends to 0 with ``beta``. Raises ``AssertionError`` if a measured
    value exceeds its bound.
    """
    q = q or QuadConfig()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    psi = loc.as_test_function()
    C0 = loc.C0
    xis = [x] if xi_samples is None else [np.asarray(v, dtype=float) for v in xi_samples]
    out = []
    for xi in xis:
        inner = eval_inner(family, x, psi, delta, q, xi)
        outer = eval_outer(family, x, psi.grad(x), psi, delta, q, xi)
        c_nu = levy_constant(family, xi, q)
        m2 = moment2_ball(family, xi, delta, q)
        b_in = 0.5 * C0 * loc.beta ** 2 * min(c_nu, m2)
        tail = infimum_modulus(lambda R: 2.0 * tail_mass(family, xi, R, q), loc.beta * c_nu,
                               n_sweep=60)
        b_out = 0.5 * C0 * loc.beta ** 2 * c_nu + C0 * tail
        est = LocalizationEstimate(loc.beta, xi, inner, outer, b_in, b_out, c_nu, C0)
        if not est.holds:
            raise AssertionError(f"localization bound violated at xi={xi}: {est}")
        out.append(est)
    return out


__all__ = ["TestFunction", "LocalizationFunction", "LocalizationEstimate", "atomic_measure",
           "eval_inner", "eval_outer", "outer_parts", "eval_full", "operator_trace",
           "levy_ito_eval", "pushforward_eval", "levy_ito_drift", "drift_bound",
           "infimum_modulus", "localization_estimates"]
