"""Monotone finite-difference scheme for ``lam u - I u + H(x, Du) = 0``.

The nonlocal operator is split at radius ``delta`` (default two grid
spacings). Inside ``B_delta`` it is replaced by ``1/2 M_delta : D^2 u`` with
``M_delta`` the second-moment matrix of the measure on ``B_delta``; outside it
is a quadrature over the measure with multilinear interpolation of ``u``.
The compensator drift ``b = int_{delta <= |z| < 1} z nu`` enters the
Hamiltonian as ``H(x, p) + b . p`` so that it is upwinded together with it.

Every piece is written as ``sum_j w_j (u(y_j) - u(x))`` with ``w_j >= 0``, so
the residual is non-increasing in every neighbour value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import (CertificationFailed, CFLViolation, GridTooCoarse, NotConverged,
                     OrderingViolation, UnsupportedVariant)
from .hamiltonian import HamiltonianSpec
from .measures import DEFAULT_RATIO, FiniteAtomicFamily, LevyFamily, QuadConfig
from .operators import atomic_measure

FAR_RULES = ("boundary", "constant", "periodic")


# ---------------------------------------------------------------------------
# Grid functions
# ---------------------------------------------------------------------------

@dataclass
class GridFunction:
    """Node values on the box ``[-L, L]^N`` (``N <= 2``) with a far-field rule.

    ``boundary`` extends ``u`` by clamping points into the box, ``constant``
    uses ``far_const`` outside the box and ``periodic`` wraps with period
    ``2L`` (the node at ``+L`` is then omitted).
    """

    values: np.ndarray
    L: float
    far_rule: str = "boundary"
    far_const: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim not in (1, 2) or len(set(self.values.shape)) != 1:
            raise ValueError("values must be an (n,) or (n, n) array")
        if self.far_rule not in FAR_RULES:
            raise ValueError(f"far_rule must be one of {FAR_RULES}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        if self.L <= 0 or self.n < 3:
            raise ValueError("need L > 0 and at least 3 nodes per axis")

    # -- geometry --------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return grid_spacing(self.L, self.n, self.far_rule)

    @property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(n^N, N)`` in C order."""
        return grid_nodes(self.L, self.n, self.dim, self.far_rule)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def with_values(self, values, **meta) -> "GridFunction":
        return GridFunction(np.asarray(values, float).reshape(self.values.shape), self.L,
                            self.far_rule, self.far_const, dict(meta))

    @classmethod
    def constant(cls, c: float, L: float, n: int, dim: int = 1, **kw) -> "GridFunction":
        return cls(np.full((n,) * dim, float(c)), L, **kw)

    @classmethod
    def from_function(cls, fn, L: float, n: int, dim: int = 1, **kw) -> "GridFunction":
        """Sample ``fn`` (``(M, N) -> (M,)``) at the nodes."""
        rule = kw.get("far_rule", "boundary")
        vals = np.asarray(fn(grid_nodes(L, n, dim, rule)), dtype=float)
        return cls(vals.reshape((n,) * dim), L, **kw)

    # -- evaluation off the grid ------------------------------------------
    def value(self, X) -> np.ndarray:
        """Multilinear interpolation with the far-field rule applied."""
        S, c = sample_matrix(self.L, self.n, self.dim, self.far_rule, self.far_const,
                             np.atleast_2d(X))
        return S @ self.flat + c

    def __call__(self, X) -> np.ndarray:
        return self.value(X)

    def far_value(self, x, dirs) -> np.ndarray:
        """Limit of ``u(x + R w)`` as ``R -> inf`` along each direction ``w``."""
        dirs = np.atleast_2d(dirs)
        if self.far_rule == "constant":
            return np.full(len(dirs), self.far_const)
        far = np.asarray(x, float)[None, :] + 4.0 * self.L * math.sqrt(self.dim) * dirs
        if self.far_rule == "periodic":
            return np.full(len(dirs), float(self.values.mean()))
        return self.value(far)

    def to_rows(self):
        return [(*x, v) for x, v in zip(self.nodes.tolist(), self.flat.tolist())]


def grid_spacing(L: float, n: int, far_rule: str = "boundary") -> float:
    return 2.0 * L / n if far_rule == "periodic" else 2.0 * L / (n - 1)


def grid_nodes(L: float, n: int, dim: int, far_rule: str = "boundary") -> np.ndarray:
    ax = -L + grid_spacing(L, n, far_rule) * np.arange(n)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def sample_matrix(L: float, n: int, dim: int, far_rule: str, far_const: float, Y):
    """Sparse ``S`` and vector ``c`` with ``u(Y) = S u + c`` (multilinear)."""
    Y = np.asarray(Y, dtype=float).reshape(-1, dim)
    h = grid_spacing(L, n, far_rule)
    m = len(Y)
    t = (Y + L) / h
    outside = np.zeros(m, dtype=bool)
    lo = np.empty((m, dim), dtype=np.int64)
    hi = np.empty((m, dim), dtype=np.int64)
    frac = np.empty((m, dim))
    for k in range(dim):
        tk = t[:, k]
        if far_rule == "periodic":
            tk = np.mod(tk, n)
            i0 = np.floor(tk).astype(np.int64) % n
            lo[:, k], hi[:, k], frac[:, k] = i0, (i0 + 1) % n, tk - np.floor(tk)
            continue
        if far_rule == "constant":
            outside |= (tk < -1e-12) | (tk > n - 1 + 1e-12)
        tk = np.clip(tk, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(tk).astype(np.int64), n - 2)
        lo[:, k], hi[:, k], frac[:, k] = i0, i0 + 1, tk - i0
    rows, cols, vals = [], [], []
    strides = n ** np.arange(dim - 1, -1, -1)
    inside = ~outside
    for corner in range(2 ** dim):
        bits = [(corner >> k) & 1 for k in range(dim)]
        idx = np.zeros(m, dtype=np.int64)
        w = np.ones(m)
        for k, bit in enumerate(bits):
            idx += strides[k] * (hi[:, k] if bit else lo[:, k])
            w *= frac[:, k] if bit else 1.0 - frac[:, k]
        keep = inside & (w != 0.0)
        rows.append(np.nonzero(keep)[0])
        cols.append(idx[keep])
        vals.append(w[keep])
    S = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(m, n ** dim))
    c = np.where(outside, float(far_const), 0.0)
    return S, c


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolveConfig:
    """Grid, scheme and iteration settings.

    ``delta=None`` means two grid spacings. ``n_radial`` and ``n_angular``
    set the quadrature of the nonlocal term (``n_radial=None``: 4 nodes per
    shell in 1-D, 1 in 2-D). ``clamp_factor`` scales the a-priori gradient
    bound; ``discount`` adds ``lam u`` to the parabolic equation.
    """

    lam: float = 1.0
    L: float = 6.0
    n: int = 64
    dim: int = 1
    far_rule: str = "boundary"
    far_const: float = 0.0
    delta: float | None = None
    tol: float = 1e-9
    max_iter: int = 200_000
    damping: float = 0.9
    n_radial: int | None = None
    n_angular: int = 16
    ratio: float = DEFAULT_RATIO
    r_outer: float = 32.0
    clamp_factor: float = 4.0
    dt: float | None = None
    T: float = 1.0
    discount: float = 0.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.dim not in (1, 2):
            raise UnsupportedVariant("the solver supports N = 1 or N = 2")
        if not (0 < self.damping <= 1):
            raise ValueError("damping must lie in (0, 1]")
        if self.tol <= 0 or self.max_iter < 1 or self.n < 3 or self.L <= 0:
            raise ValueError("need tol > 0, max_iter >= 1, n >= 3 and L > 0")
        if self.far_rule not in FAR_RULES:
            raise ValueError(f"far_rule must be one of {FAR_RULES}")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.T <= 0 or self.discount < 0:
            raise ValueError("need T > 0 and discount >= 0")

    @property
    def h(self) -> float:
        return grid_spacing(self.L, self.n, self.far_rule)

    @property
    def split_radius(self) -> float:
        return 2.0 * self.h if self.delta is None else float(self.delta)

    def quad(self) -> QuadConfig:
        n_rad = self.n_radial or (4 if self.dim == 1 else 1)
        return QuadConfig(ratio=self.ratio, n_radial=n_rad, n_angular=self.n_angular,
                          n_sub=1 if self.dim == 2 else 4, r_outer=self.r_outer)

    def grid(self, values=None, fn=None, const: float | None = None) -> GridFunction:
        """A grid function on this configuration's box."""
        kw = dict(far_rule=self.far_rule, far_const=self.far_const)
        if fn is not None:
            return GridFunction.from_function(fn, self.L, self.n, self.dim, **kw)
        if const is not None:
            return GridFunction.constant(const, self.L, self.n, self.dim, **kw)
        return GridFunction(np.asarray(values, float).reshape((self.n,) * self.dim), self.L, **kw)

    def key(self) -> tuple:
        return (self.L, self.n, self.dim, self.far_rule, self.far_const, self.split_radius,
                self.n_radial, self.n_angular, self.ratio, self.r_outer)


# ---------------------------------------------------------------------------
# Nonlocal operator assembly
# ---------------------------------------------------------------------------

def _node_measure(family: LevyFamily, x, delta: float, q: QuadConfig):
    """Points, weights, inner matrix ``M_delta`` and drift at one node."""
    dim = family.dim
    atoms = atomic_measure(family, x)
    if atoms is not None:
        rad = atoms.radii()
        inner = rad < delta
        z_in, m_in = atoms.points[inner], atoms.masses[inner]
        M = (m_in[:, None, None] * z_in[:, :, None] * z_in[:, None, :]).sum(axis=0)
        z, w = atoms.points[~inner], atoms.masses[~inner]
        crown = np.linalg.norm(z, axis=1) < 1.0
        drift = (w[crown, None] * z[crown]).sum(axis=0)
        return z, w, M, drift
    eps = min(q.r_inner, delta)
    dirs, amp, sig = family.amplitudes(x, eps, q)
    M = np.einsum("k,ki,kj->ij", amp, dirs, dirs) * eps ** (2 - sig) / (2 - sig)
    if delta > eps:
        r = family.rule(x, eps, delta, q)
        M += np.einsum("k,ki,kj->ij", r.weights, r.points, r.points)
    pts, wts = [], []
    drift = np.zeros(dim)
    if delta < 1.0:
        r = family.rule(x, delta, 1.0, q)
        pts.append(r.points)
        wts.append(r.weights)
        drift = (r.weights[:, None] * r.points).sum(axis=0)
    lo = max(delta, 1.0)
    R = max(q.r_outer, lo)
    if lo < R:
        r = family.rule(x, lo, R, q)
        pts.append(r.points)
        wts.append(r.weights)
    dirs, amp, sig = family.amplitudes(x, R, q)
    pts.append(R * dirs)
    wts.append(amp * R ** (-sig) / sig)
    return np.concatenate(pts), np.concatenate(wts), M, drift


def _inner_stencil(M: np.ndarray, h: float):
    """Offsets and non-negative weights of ``1/2 M : D^2`` (diagonally dominant)."""
    dim = len(M)
    offs, wts = [], []
    if dim == 1:
        a = 0.5 * M[0, 0] / h ** 2
        return np.array([[h], [-h]]), np.array([a, a]), False
    a, b, c = M[0, 0], M[1, 1], M[0, 1]
    clipped = abs(c) > min(a, b)
    c = math.copysign(min(abs(c), a, b), c)
    s = 1.0 if c >= 0 else -1.0
    for off, w in (((h, 0), a - abs(c)), ((-h, 0), a - abs(c)), ((0, h), b - abs(c)),
                   ((0, -h), b - abs(c)), ((h, s * h), abs(c)), ((-h, -s * h), abs(c))):
        offs.append(off)
        wts.append(0.5 * w / h ** 2)
    return np.array(offs, dtype=float), np.array(wts), clipped


@dataclass
class NonlocalOperator:
    """``I u = A u + s`` on the nodes plus the compensator drift per node."""

    A: sparse.csr_matrix
    s: np.ndarray
    drift: np.ndarray
    diag: np.ndarray
    levy_mass: float
    notes: list

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.A @ u + self.s


def assemble_operator(family: LevyFamily, cfg: SolveConfig) -> NonlocalOperator:
    """Sparse nonlocal operator for ``family`` on ``cfg``'s grid."""
    if family.dim != cfg.dim:
        raise ValueError("family and grid dimensions differ")
    h, delta = cfg.h, cfg.split_radius
    if not h < delta:
        raise GridTooCoarse(f"grid spacing {h:.3g} does not resolve delta = {delta:.3g}")
    q = cfg.quad()
    nodes = grid_nodes(cfg.L, cfg.n, cfg.dim, cfg.far_rule)
    shared = getattr(family, "xi_independent", False) or (
        isinstance(family, FiniteAtomicFamily) and not callable(family._atoms))
    cache = _node_measure(family, nodes[0], delta, q) if shared else None
    rows, targets, weights = [], [], []
    drift = np.zeros_like(nodes)
    notes, clipped_any, levy_mass = [], False, 0.0
    for i, x in enumerate(nodes):
        z, w, M, b = cache if shared else _node_measure(family, x, delta, q)
        offs, ws, clipped = _inner_stencil(M, h)
        clipped_any |= clipped
        pts = np.concatenate([z, offs])
        wts = np.concatenate([w, ws])
        keep = wts > 0
        rows.append(np.full(keep.sum(), i))
        targets.append(x + pts[keep])
        weights.append(wts[keep])
        drift[i] = b
        levy_mass = max(levy_mass, float(np.trace(M) + np.sum(w * np.minimum(1.0, np.sum(z * z, 1)))))
    rows = np.concatenate(rows)
    weights = np.concatenate(weights)
    S, c = sample_matrix(cfg.L, cfg.n, cfg.dim, cfg.far_rule, cfg.far_const,
                         np.concatenate(targets))
    W = sparse.csr_matrix((weights, (rows, np.arange(len(rows)))), shape=(len(nodes), len(rows)))
    P = (W @ S).tocsr()
    total = np.asarray(W.sum(axis=1)).ravel()
    A = (P - sparse.diags(total)).tocsr()
    s = W @ c
    diag = total - P.diagonal()
    if clipped_any:
        notes.append("inner second-moment matrix not diagonally dominant; mixed term clipped")
    return NonlocalOperator(A, s, drift, diag, levy_mass, notes)


# ---------------------------------------------------------------------------
# Numerical Hamiltonians
# ---------------------------------------------------------------------------

class _Scheme:
    """Residual of the discrete equation on one grid for one family and H."""

    def __init__(self, family: LevyFamily, H: HamiltonianSpec, cfg: SolveConfig):
        self.family, self.H, self.cfg = family, H, cfg
        self.op = assemble_operator(family, cfg)
        self.nodes = grid_nodes(cfg.L, cfg.n, cfg.dim, cfg.far_rule)
        self.h = cfg.h
        dim = cfg.dim
        self.grad_minus, self.grad_plus = [], []
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = self.h
            Sm, cm = sample_matrix(cfg.L, cfg.n, dim, cfg.far_rule, cfg.far_const, self.nodes - e)
            Sp, cp = sample_matrix(cfg.L, cfg.n, dim, cfg.far_rule, cfg.far_const, self.nodes + e)
            self.grad_minus.append((Sm, cm))
            self.grad_plus.append((Sp, cp))
        scale = max(1.0, float(np.max(np.abs(self.op.diag))) * self.h)
        self.has_drift = bool(np.max(np.abs(self.op.drift)) > 1e-13 * scale)
        self.eik = H.eikonal
        if self.eik is not None:
            self.b = np.asarray(self.eik.b(self.nodes), dtype=float)
            if np.any(self.b <= 0):
                raise ValueError("b(x) must be positive at every node")
        if self.eik is not None and dim == 1:
            self.kind = "godunov"
        elif self.eik is not None and not self.has_drift:
            self.kind = "rouy-tourin"
        else:
            self.kind = "llf"
        self._h0 = {}
        self.p_clamp = math.inf
        self.alpha = None

    # -- data ---------------------------------------------------------------
    def h_at_zero(self, t: float = 0.0) -> np.ndarray:
        if self.H.time_dependent:
            return self.H(self.nodes, np.zeros_like(self.nodes), t)
        if 0.0 not in self._h0:
            self._h0[0.0] = self.H(self.nodes, np.zeros_like(self.nodes), 0.0)
        return self._h0[0.0]

    def f_at(self, t: float) -> np.ndarray:
        return -self.h_at_zero(t)

    def clamp_for(self, U: float, lip: float = 0.0, lam: float | None = None) -> float:
        """A-priori gradient bound for solutions of size ``U``, scaled to the data."""
        lam = self.cfg.lam if lam is None else lam
        h0 = float(np.max(np.abs(self.h_at_zero(0.0))))
        b_min = float(np.min(self.b)) if self.eik is not None else self.H.b_m
        base = (h0 + (lam + 2.0 * self.op.levy_mass) * U) / b_min
        P = self.cfg.clamp_factor * max(base, 1e-12) ** (1.0 / self.H.m)
        return max(P, self.cfg.clamp_factor * lip)

    def use_clamp(self, P: float) -> None:
        """Fix the gradient clamp and, for Lax-Friedrichs, the viscosity."""
        if P != self.p_clamp:
            self.p_clamp = float(P)
            if self.kind == "llf":
                self.alpha = self.slope(self.p_clamp)

    def slope(self, P: float) -> float:
        """Bound on ``|d H~ / d p_k|`` for ``|p| <= P`` (H plus drift)."""
        drift = float(np.max(np.abs(self.op.drift))) if self.has_drift else 0.0
        P_vec = P * math.sqrt(self.cfg.dim)
        if self.eik is not None:
            return float(np.max(self.b)) * self.H.m * P_vec ** (self.H.m - 1) + drift
        idx = np.linspace(0, len(self.nodes) - 1, min(16, len(self.nodes))).astype(int)
        return self.H.slope_bound(self.nodes[idx], P_vec) + drift

    # -- gradients --------------------------------------------------------
    def one_sided(self, u: np.ndarray):
        pm = np.column_stack([(u - (S @ u + c)) / self.h for S, c in self.grad_minus])
        pp = np.column_stack([((S @ u + c) - u) / self.h for S, c in self.grad_plus])
        return pm, pp

    # -- numerical Hamiltonian -------------------------------------------------
    def hamiltonian(self, pm: np.ndarray, pp: np.ndarray, t: float = 0.0):
        P = self.p_clamp
        active = bool(np.any(np.abs(pm) > P) or np.any(np.abs(pp) > P))
        pm, pp = np.clip(pm, -P, P), np.clip(pp, -P, P)
        beta = self.op.drift if self.has_drift else None
        if self.kind == "godunov":
            out = self._godunov_1d(pm[:, 0], pp[:, 0], None if beta is None else beta[:, 0], t)
        elif self.kind == "rouy-tourin":
            g = np.maximum(np.maximum(pm, -pp), 0.0)
            out = self.b * np.linalg.norm(g, axis=1) ** self.H.m + self.h_at_zero(t)
        else:
            pbar = 0.5 * (pm + pp)
            out = self.H(self.nodes, pbar, t) - 0.5 * self.alpha * np.sum(pp - pm, axis=1)
            if beta is not None:
                out = out + np.sum(beta * pbar, axis=1)
        return out, active

    def _godunov_1d(self, pm, pp, beta, t):
        m, b = self.H.m, self.b
        f0 = self.h_at_zero(t)

        def g(p):
            v = b * np.abs(p) ** m + f0
            return v if beta is None else v + beta * p

        if beta is None:
            pstar = np.zeros_like(pm)
        else:
            pstar = -np.sign(beta) * (np.abs(beta) / (b * m)) ** (1.0 / (m - 1))
        lo_case = pm <= pp
        inner_min = g(np.clip(pstar, pm, pp))
        outer_max = np.maximum(g(pm), g(pp))
        return np.where(lo_case, inner_min, outer_max)

    # -- residual and step bounds --------------------------------------------
    def residual(self, u: np.ndarray, t: float = 0.0, lam: float | None = None):
        lam = self.cfg.lam if lam is None else lam
        pm, pp = self.one_sided(u)
        ham, active = self.hamiltonian(pm, pp, t)
        grad_max = float(max(np.max(np.abs(pm)), np.max(np.abs(pp))))
        return lam * u - self.op.apply(u) + ham, active, grad_max

    def step_bound(self, P: float, lam: float) -> float:
        """Largest step keeping the explicit update monotone for ``|p| <= P``."""
        L_H = self.alpha if self.kind == "llf" else self.slope(P)
        return 1.0 / (lam + 2 * self.cfg.dim * L_H / self.h + float(np.max(self.op.diag)))


_CACHE: dict = {}


def _scheme(family, H, cfg) -> _Scheme:
    key = (id(family), id(H), cfg.key())
    sch = _CACHE.get(key)
    if sch is None or sch.family is not family or sch.H is not H:
        if len(_CACHE) > 16:
            _CACHE.clear()
        sch = _CACHE[key] = _Scheme(family, H, cfg)
    return sch


def _check_grid(u: GridFunction, cfg: SolveConfig):
    if (u.dim, u.n, u.far_rule) != (cfg.dim, cfg.n, cfg.far_rule) or abs(u.L - cfg.L) > 1e-12:
        raise ValueError("grid function does not match the solver configuration")


def _lipschitz(u: GridFunction) -> float:
    return float(max(np.max(np.abs(np.diff(u.values, axis=k))) for k in range(u.dim)) / u.h)


def gradient_clamp(family: LevyFamily, H: HamiltonianSpec, cfg: SolveConfig, *grids,
                   horizon: float = 0.0, lam: float | None = None) -> float:
    """Gradient clamp shared by runs started from ``grids``.

    ``U`` bounds the solution size: the larger of ``sup|H(x, 0)| / lam`` and
    ``sup|u| + horizon sup|H(x, 0)|`` over the given grids. The clamp is never
    below ``clamp_factor`` times the Lipschitz constant of the grids.
    """
    sch = _scheme(family, H, cfg)
    lam = cfg.lam if lam is None else lam
    h0 = float(np.max(np.abs(sch.h_at_zero(0.0))))
    U = max([h0 / lam] + [g.sup_norm + horizon * h0 for g in grids])
    lip = max([0.0] + [_lipschitz(g) for g in grids])
    return sch.clamp_for(U, lip, lam)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def residual(u: GridFunction, family: LevyFamily, H: HamiltonianSpec,
             cfg: SolveConfig, t: float = 0.0, p_clamp: float | None = None) -> GridFunction:
    """Nodewise ``lam u - I u + H^(x, D^- u, D^+ u)``.

    The gradient clamp is ``p_clamp``, else the one recorded in ``u.meta``
    by a solve, else the a-priori bound computed from ``u``.
    """
    _check_grid(u, cfg)
    sch = _scheme(family, H, cfg)
    P = p_clamp or u.meta.get("p_clamp") or gradient_clamp(family, H, cfg, u)
    sch.use_clamp(P)
    r, active, gmax = sch.residual(u.flat, t)
    return u.with_values(r, clamp_active=active, p_clamp=sch.p_clamp, scheme=sch.kind)


def solve_stationary(family: LevyFamily, H: HamiltonianSpec, cfg: SolveConfig,
                     init: GridFunction, history_every: int = 1,
                     p_clamp: float | None = None) -> GridFunction:
    """Damped pseudo-time iteration ``u <- u - tau residual(u)``.

    ``tau`` is recomputed every sweep from the current gradient range so the
    update stays monotone. Stops when the sup-norm residual drops below
    ``cfg.tol``; the returned grid function carries ``iterations``,
    ``history``, ``clamp_active`` and ``p_clamp`` in ``meta``.
    """
    _check_grid(init, cfg)
    sch = _scheme(family, H, cfg)
    sch.use_clamp(p_clamp or gradient_clamp(family, H, cfg, init))
    u = init.flat.copy()
    history, clamp_active = [], False
    for it in range(1, cfg.max_iter + 1):
        r, active, gmax = sch.residual(u)
        clamp_active |= active
        res = float(np.max(np.abs(r)))
        if it % history_every == 0 or res < cfg.tol:
            history.append(res)
        if res < cfg.tol:
            return init.with_values(u, iterations=it - 1, history=history, residual=res,
                                    clamp_active=clamp_active, p_clamp=sch.p_clamp,
                                    scheme=sch.kind, notes=sch.op.notes)
        tau = cfg.damping * sch.step_bound(min(sch.p_clamp, gmax), cfg.lam)
        u = u - tau * r
    raise NotConverged(f"residual {res:.3e} after {cfg.max_iter} iterations")


@dataclass
class ParabolicRun:
    """Snapshots ``(t_k, u_k)`` of an explicit time integration."""

    times: list
    snapshots: list
    dt: float
    dt_bound: float
    clamp_active: bool
    p_clamp: float

    def __iter__(self):
        return iter(self.snapshots)

    def __len__(self):
        return len(self.snapshots)

    @property
    def final(self) -> GridFunction:
        return self.snapshots[-1]


def solve_parabolic(family: LevyFamily, H: HamiltonianSpec, cfg: SolveConfig,
                    u0: GridFunction, T: float | None = None, n_snapshots: int | None = None,
                    p_clamp: float | None = None, observer=None) -> ParabolicRun:
    """Explicit Euler for ``u_t + discount u - I u + H(x, t, Du) = 0`` up to ``T``.

    The step bound uses the clamped gradient range, so nodewise ordering is
    preserved at every step. A configured ``dt`` above the bound raises
    :class:`CFLViolation`. Without ``n_snapshots`` every step is kept.
    ``observer(k, t, u)`` is called after every step.
    """
    _check_grid(u0, cfg)
    T = cfg.T if T is None else float(T)
    sch = _scheme(family, H, cfg)
    lam = cfg.discount
    sch.use_clamp(p_clamp or gradient_clamp(family, H, cfg, u0, horizon=T, lam=max(lam, 1.0 / T)))
    bound = sch.step_bound(sch.p_clamp, lam)
    if cfg.dt is not None:
        if cfg.dt > bound * (1 + 1e-12):
            raise CFLViolation(f"dt = {cfg.dt:.3e} exceeds the monotonicity bound {bound:.3e}")
        n_steps = int(math.ceil(T / cfg.dt - 1e-9))
    else:
        n_steps = int(math.ceil(T / (cfg.damping * bound)))
    dt = T / n_steps
    keep = set(range(n_steps + 1)) if n_snapshots is None else set(
        np.linspace(0, n_steps, max(2, n_snapshots)).round().astype(int).tolist())
    u = u0.flat.copy()
    times, snaps, active_any = [0.0], [u0.with_values(u, t=0.0)], False
    for k in range(n_steps):
        t = k * dt
        r, active, _ = sch.residual(u, t, lam)
        active_any |= active
        u = u - dt * r
        if observer is not None:
            observer(k + 1, t + dt, u)
        if k + 1 in keep:
            times.append(t + dt)
            snaps.append(u0.with_values(u, t=t + dt))
    return ParabolicRun(times, snaps, dt, bound, active_any, sch.p_clamp)


def certify_subsolution(u: GridFunction, family: LevyFamily, H: HamiltonianSpec,
                        cfg: SolveConfig, tol: float | None = None,
                        p_clamp: float | None = None):
    """``(ok, worst_node, worst_value)`` with ``ok`` iff residual <= tol everywhere."""
    tol = cfg.tol if tol is None else tol
    r = residual(u, family, H, cfg, p_clamp=p_clamp).flat
    k = int(np.argmax(r))
    return bool(r[k] <= tol), u.nodes[k], float(r[k])


def certify_supersolution(u: GridFunction, family: LevyFamily, H: HamiltonianSpec,
                          cfg: SolveConfig, tol: float | None = None,
                          p_clamp: float | None = None):
    """``(ok, worst_node, worst_value)`` with ``ok`` iff residual >= -tol everywhere."""
    tol = cfg.tol if tol is None else tol
    r = residual(u, family, H, cfg, p_clamp=p_clamp).flat
    k = int(np.argmin(r))
    return bool(r[k] >= -tol), u.nodes[k], float(r[k])


@dataclass
class ComparisonReport:
    ordered: bool
    sandwich: bool
    agreement: float
    agreement_tol: float
    iterations: tuple
    clamp_active: bool
    solution: GridFunction
    details: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.ordered and self.sandwich and self.agreement <= self.agreement_tol

    def to_dict(self) -> dict:
        return {"ordered": self.ordered, "sandwich": self.sandwich, "agreement": self.agreement,
                "agreement_tol": self.agreement_tol, "iterations": list(self.iterations),
                "clamp_active": self.clamp_active, "holds": self.holds, **self.details}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def comparison_experiment(family: LevyFamily, H: HamiltonianSpec, cfg: SolveConfig,
                          sub: GridFunction, sup: GridFunction) -> ComparisonReport:
    """Certify ``sub``/``sup``, solve from both and check ``sub <= u <= sup``.

    Both solves share one gradient clamp so that they iterate the same scheme.
    """
    P = gradient_clamp(family, H, cfg, sub, sup)
    ok, node, val = certify_subsolution(sub, family, H, cfg, p_clamp=P)
    if not ok:
        raise CertificationFailed(f"subsolution residual {val:.3e} > tol at {node.tolist()}")
    ok, node, val = certify_supersolution(sup, family, H, cfg, p_clamp=P)
    if not ok:
        raise CertificationFailed(f"supersolution residual {val:.3e} < -tol at {node.tolist()}")
    gap = sup.flat - sub.flat
    if np.any(gap < 0):
        k = int(np.argmin(gap))
        raise OrderingViolation(f"sub exceeds super by {-gap[k]:.3e} at {sub.nodes[k].tolist()}")
    u1 = solve_stationary(family, H, cfg, sub, p_clamp=P)
    u2 = solve_stationary(family, H, cfg, sup, p_clamp=P)
    slack = cfg.tol / cfg.lam
    sandwich = all(bool(np.all(sub.flat - slack <= u.flat) and np.all(u.flat <= sup.flat + slack))
                   for u in (u1, u2))
    agreement = float(np.max(np.abs(u1.flat - u2.flat)))
    return ComparisonReport(True, sandwich, agreement, 2 * slack,
                            (u1.meta["iterations"], u2.meta["iterations"]),
                            u1.meta["clamp_active"] or u2.meta["clamp_active"], u1,
                            {"scheme": u1.meta["scheme"], "p_clamp": u1.meta["p_clamp"],
                             "sup_norm": u1.sup_norm})


@dataclass
class ParabolicComparison:
    """Result of time-stepping an ordered pair ``u0 <= v0`` in lockstep."""

    steps: int
    dt: float
    violations: int
    worst_gap: float
    worst_step: int | None
    clamp_active: bool

    @property
    def holds(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {"steps": self.steps, "dt": self.dt, "violations": self.violations,
                "worst_gap": self.worst_gap, "worst_step": self.worst_step,
                "clamp_active": self.clamp_active, "holds": self.holds}


def parabolic_comparison(family: LevyFamily, H: HamiltonianSpec, cfg: SolveConfig,
                         u0: GridFunction, v0: GridFunction,
                         T: float | None = None) -> ParabolicComparison:
    """Step ``u0 <= v0`` with one shared step and clamp; count ordering violations.

    ``worst_gap`` is ``min(v - u)`` over all nodes and steps.
    """
    if np.any(u0.flat > v0.flat):
        raise OrderingViolation("initial data are not ordered")
    T = cfg.T if T is None else float(T)
    P = gradient_clamp(family, H, cfg, u0, v0, horizon=T, lam=max(cfg.discount, 1.0 / T))
    us = []
    ru = solve_parabolic(family, H, cfg, u0, T, n_snapshots=2, p_clamp=P,
                         observer=lambda k, t, u: us.append(u.copy()))
    state = {"viol": 0, "gap": float(np.min(v0.flat - u0.flat)), "step": None}

    def check(k, t, v):
        gap = v - us[k - 1]
        g = float(np.min(gap))
        if g < 0:
            state["viol"] += 1
        if g < state["gap"]:
            state["gap"], state["step"] = g, k

    rv = solve_parabolic(family, H, cfg, v0, T, n_snapshots=2, p_clamp=P, observer=check)
    return ParabolicComparison(len(us), ru.dt, state["viol"], state["gap"], state["step"],
                               ru.clamp_active or rv.clamp_active)


__all__ = ["GridFunction", "SolveConfig", "NonlocalOperator", "ParabolicRun", "ComparisonReport",
           "ParabolicComparison", "assemble_operator", "sample_matrix", "grid_nodes",
           "grid_spacing", "gradient_clamp", "residual", "solve_stationary", "solve_parabolic",
           "certify_subsolution", "certify_supersolution", "comparison_experiment",
           "parabolic_comparison"]
