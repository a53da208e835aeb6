"""Restricted Wasserstein distances with the origin as a mass reservoir.

For atomic measures ``mu1, mu2`` and a radius ``r`` we compare the
restrictions to the closed ball ``|z| <= r``. Mass may be created or
destroyed at the origin: an atom at ``z`` sent to (or drawn from) the origin
costs ``|z|^p``. The problem is solved exactly as a balanced transport
problem with two extra nodes, ``O1`` on the source side (supply
``sum mu2``) and ``O2`` on the target side (demand ``sum mu1``); the leg
``O1 -> O2`` costs nothing and absorbs the slack.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, NotAdmissible, TooManyAtoms
from .measures import DiscretizedMeasure

for _key in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_key}", "1")

import ot  # noqa: E402

ORIGIN = -1
MAX_ATOMS = 2000
MASS_TOL = 1e-12


@dataclass
class Coupling:
    """Transport plan as triples ``(source atom, target atom, mass)``.

    Atom indices refer to ``mu1.points`` and ``mu2.points``; ``ORIGIN``
    (``-1``) stands for the reservoir at ``z = 0``.
    """

    src: np.ndarray
    dst: np.ndarray
    mass: np.ndarray
    mu1: DiscretizedMeasure
    mu2: DiscretizedMeasure
    r: float

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=int)
        self.dst = np.asarray(self.dst, dtype=int)
        self.mass = np.asarray(self.mass, dtype=float)

    def __len__(self):
        return len(self.mass)

    def src_points(self) -> np.ndarray:
        return _lookup(self.mu1.points, self.src)

    def dst_points(self) -> np.ndarray:
        return _lookup(self.mu2.points, self.dst)

    def cost(self, p: float = 2.0) -> float:
        d = np.linalg.norm(self.src_points() - self.dst_points(), axis=1)
        return float(np.sum(self.mass * d ** p))

    def to_rows(self):
        """Rows ``(src coords..., src_is_origin, dst coords..., dst_is_origin, mass)``."""
        a, b = self.src_points(), self.dst_points()
        return [list(a[i]) + [int(self.src[i] == ORIGIN)] + list(b[i])
                + [int(self.dst[i] == ORIGIN), float(self.mass[i])] for i in range(len(self))]

    def csv_header(self) -> list[str]:
        n = self.mu1.dim
        return ([f"src_z{k}" for k in range(n)] + ["src_is_origin"]
                + [f"dst_z{k}" for k in range(n)] + ["dst_is_origin", "mass"])


def _lookup(points, idx):
    out = np.zeros((len(idx), points.shape[1]))
    real = idx != ORIGIN
    out[real] = points[idx[real]]
    return out


@dataclass
class TransportResult:
    """Outcome of an exact restricted transport solve."""

    cost: float
    distance: float
    coupling: Coupling
    p: float
    r: float
    status: str
    n_atoms: tuple[int, int]
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"cost": self.cost, "distance": self.distance, "p": self.p,
                           "r": self.r, "status": self.status,
                           "n_atoms": list(self.n_atoms), **self.meta}, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Alignment and closed-form quantities
# ---------------------------------------------------------------------------

def _check_grids(mu1, mu2):
    if mu1.dim != mu2.dim:
        raise GridMismatch("measures live in different dimensions")
    if mu1.grid is not None and mu2.grid is not None and mu1.grid != mu2.grid:
        raise GridMismatch("measures were discretized on different polar grids")


def align(mu1: DiscretizedMeasure, mu2: DiscretizedMeasure):
    """Union of atom locations with the mass of each measure there.

    Returns ``points, m1, m2, i1, i2`` where ``i1``/``i2`` index the original
    atoms (``-1`` where the measure has no atom at that location).
    """
    _check_grids(mu1, mu2)
    allpts = np.vstack([mu1.points, mu2.points])
    keys, inv = np.unique(np.round(allpts, 12), axis=0, return_inverse=True)
    inv = inv.ravel()
    n = len(keys)
    pts = np.zeros((n, mu1.dim))
    m1, m2 = np.zeros(n), np.zeros(n)
    i1, i2 = np.full(n, -1), np.full(n, -1)
    n1 = len(mu1)
    for k, u in enumerate(inv):
        if k < n1:
            pts[u] = mu1.points[k]
            m1[u] += mu1.masses[k]
            i1[u] = k
        else:
            pts[u] = mu2.points[k - n1]
            m2[u] += mu2.masses[k - n1]
            i2[u] = k - n1
    return pts, m1, m2, i1, i2


def tv_annulus(mu1: DiscretizedMeasure, mu2: DiscretizedMeasure, r: float, R: float) -> float:
    """Total variation of ``mu1 - mu2`` on ``r < |z| <= R``."""
    if not (0 <= r < R):
        raise ValueError("need 0 <= r < R")
    pts, m1, m2, _, _ = align(mu1, mu2)
    rad = np.linalg.norm(pts, axis=1)
    sel = (rad > r * (1 + 1e-12)) & (rad <= R * (1 + 1e-12))
    return float(np.sum(np.abs(m1[sel] - m2[sel])))


def tv_second_moment_ball(mu1: DiscretizedMeasure, mu2: DiscretizedMeasure, r: float) -> float:
    """``int_{|z| <= r} |z|^2 d|mu1 - mu2|`` for ``r <= 1``."""
    if not (0 < r <= 1):
        raise ValueError("tv_second_moment_ball needs 0 < r <= 1")
    pts, m1, m2, _, _ = align(mu1, mu2)
    rad = np.linalg.norm(pts, axis=1)
    sel = rad <= r * (1 + 1e-12)
    return float(np.sum(rad[sel] ** 2 * np.abs(m1[sel] - m2[sel])))


def weighted_tv(mu1: DiscretizedMeasure, mu2: DiscretizedMeasure, r: float, weight) -> float:
    """``int_{|z| <= r} weight(|z|) d|mu1 - mu2|`` for an arbitrary radial weight."""
    pts, m1, m2, _, _ = align(mu1, mu2)
    rad = np.linalg.norm(pts, axis=1)
    sel = rad <= r * (1 + 1e-12)
    return float(np.sum(weight(rad[sel]) * np.abs(m1[sel] - m2[sel])))


def explicit_coupling(mu1: DiscretizedMeasure, mu2: DiscretizedMeasure, r: float) -> Coupling:
    """Keep the common mass in place, send excess to the origin, draw deficit from it.

    Its quadratic cost equals ``tv_second_moment_ball(mu1, mu2, r)``.
    """
    pts, m1, m2, i1, i2 = align(mu1, mu2)
    rad = np.linalg.norm(pts, axis=1)
    src, dst, mass = [], [], []
    for k in np.flatnonzero(rad <= r * (1 + 1e-12)):
        common = min(m1[k], m2[k])
        if common > 0:
            src.append(i1[k]), dst.append(i2[k]), mass.append(common)
        if m1[k] > m2[k]:
            src.append(i1[k]), dst.append(ORIGIN), mass.append(m1[k] - m2[k])
        elif m2[k] > m1[k]:
            src.append(ORIGIN), dst.append(i2[k]), mass.append(m2[k] - m1[k])
    return Coupling(np.array(src, dtype=int), np.array(dst, dtype=int), np.array(mass),
                    mu1, mu2, r)


# ---------------------------------------------------------------------------
# Exact solver
# ---------------------------------------------------------------------------

def _restricted_indices(mu, r):
    return np.flatnonzero((mu.radii() <= r * (1 + 1e-12)) & (mu.masses > 0))


def _reservoir_cost(a, b, p):
    """Cost matrix of the balanced problem with reservoir row and column."""
    n1, n2 = len(a), len(b)
    c = np.zeros((n1 + 1, n2 + 1))
    if n1 and n2:
        c[:n1, :n2] = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2) ** p
    c[:n1, n2] = np.linalg.norm(a, axis=1) ** p
    c[n1, :n2] = np.linalg.norm(b, axis=1) ** p
    return c


def wasserstein_p_ball(mu1: DiscretizedMeasure, mu2: DiscretizedMeasure, r: float,
                       p: float = 2.0, max_atoms: int = MAX_ATOMS) -> TransportResult:
    """Exact ``W_p`` between the restrictions to ``|z| <= r`` (origin as reservoir).

    The network simplex solution is post-processed so that the reservoir legs
    are the exact marginal residuals of the atom-to-atom part.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if mu1.dim != mu2.dim:
        raise GridMismatch("measures live in different dimensions")
    idx1, idx2 = _restricted_indices(mu1, r), _restricted_indices(mu2, r)
    n1, n2 = len(idx1), len(idx2)
    if max(n1, n2) > max_atoms:
        raise TooManyAtoms(f"{max(n1, n2)} atoms on one side exceeds the cap of {max_atoms}")
    a, b = mu1.points[idx1], mu2.points[idx2]
    ma, mb = mu1.masses[idx1], mu2.masses[idx2]
    status = "optimal"
    if n1 == n2 and np.array_equal(a, b) and np.array_equal(ma, mb):
        # identical restrictions: the identity plan is optimal with zero cost
        inner = np.diag(ma)
    elif n1 and n2:
        supply = np.append(ma, mb.sum())
        demand = np.append(mb, ma.sum())
        cost = _reservoir_cost(a, b, p)
        plan, log = ot.emd(supply, demand, cost, numItermax=10_000_000, log=True)
        if log.get("result_code", 1) != 1:
            status = f"solver:{log.get('warning')}"
        inner = np.where(plan[:n1, :n2] > 0, plan[:n1, :n2], 0.0)
        # Clip rounding so that no atom ships more than it holds.
        over = inner.sum(axis=1) / np.maximum(ma, 1e-300)
        inner[over > 1] /= over[over > 1, None]
        over = inner.sum(axis=0) / np.maximum(mb, 1e-300)
        inner[:, over > 1] /= over[None, over > 1]
    else:
        inner = np.zeros((n1, n2))
    to_origin = np.maximum(ma - inner.sum(axis=1), 0.0)
    from_origin = np.maximum(mb - inner.sum(axis=0), 0.0)
    ii, jj = np.nonzero(inner)
    src = np.concatenate([idx1[ii], idx1[to_origin > 0], np.full((from_origin > 0).sum(), ORIGIN)])
    dst = np.concatenate([idx2[jj], np.full((to_origin > 0).sum(), ORIGIN), idx2[from_origin > 0]])
    mass = np.concatenate([inner[ii, jj], to_origin[to_origin > 0], from_origin[from_origin > 0]])
    coupling = Coupling(src, dst, mass, mu1, mu2, r)
    total = coupling.cost(p)
    return TransportResult(total, total ** (1.0 / p), coupling, p, r, status, (n1, n2))


def brute_force_wasserstein(mu1: DiscretizedMeasure, mu2: DiscretizedMeasure, r: float,
                            p: float = 2.0) -> float:
    """Minimum reservoir transport cost by enumerating all vertices.

    Variables are ``gamma_ij`` (atom to atom), ``u_i`` (atom to origin) and
    ``v_j`` (origin to atom) with ``sum_j gamma_ij + u_i = m1_i`` and
    ``sum_i gamma_ij + v_j = m2_j``. Every basis of ``n1 + n2`` columns is
    tried. Meant for tiny instances (at most about four atoms a side).
    """
    idx1, idx2 = _restricted_indices(mu1, r), _restricted_indices(mu2, r)
    n1, n2 = len(idx1), len(idx2)
    a, b = mu1.points[idx1], mu2.points[idx2]
    m = np.concatenate([mu1.masses[idx1], mu2.masses[idx2]])
    if n1 + n2 == 0:
        return 0.0
    cols, costs = [], []
    for i in range(n1):
        for j in range(n2):
            col = np.zeros(n1 + n2)
            col[i] = col[n1 + j] = 1
            cols.append(col)
            costs.append(np.linalg.norm(a[i] - b[j]) ** p)
    for i in range(n1):
        col = np.zeros(n1 + n2)
        col[i] = 1
        cols.append(col)
        costs.append(np.linalg.norm(a[i]) ** p)
    for j in range(n2):
        col = np.zeros(n1 + n2)
        col[n1 + j] = 1
        cols.append(col)
        costs.append(np.linalg.norm(b[j]) ** p)
    A = np.array(cols).T
    costs = np.array(costs)
    k = n1 + n2
    best = np.inf
    combos = itertools.combinations(range(A.shape[1]), k)
    while True:
        chunk = np.array(list(itertools.islice(combos, 20000)))
        if len(chunk) == 0:
            break
        mats = A[:, chunk].transpose(1, 0, 2)
        ok = np.abs(np.linalg.det(mats)) > 1e-9
        if not np.any(ok):
            continue
        x = np.linalg.solve(mats[ok], np.broadcast_to(m, (ok.sum(), k))[..., None])[..., 0]
        feas = np.all(x >= -1e-12, axis=1)
        if np.any(feas):
            vals = np.sum(np.clip(x[feas], 0, None) * costs[chunk[ok][feas]], axis=1)
            best = min(best, float(vals.min()))
    return best


def check_admissible(coupling: Coupling, tol: float = MASS_TOL) -> bool:
    """Marginals of ``coupling`` match the restricted measures within ``tol``.

    The tolerance is absolute, widened by a few ulps for very heavy atoms.
    """
    mu1, mu2, r = coupling.mu1, coupling.mu2, coupling.r
    if np.any(coupling.mass < 0):
        return False
    if np.any((coupling.src == ORIGIN) & (coupling.dst == ORIGIN) & (coupling.mass > 0)):
        return False
    for mu, idx in ((mu1, coupling.src), (mu2, coupling.dst)):
        sel = mu.radii() <= r * (1 + 1e-12)
        target = np.where(sel, mu.masses, 0.0)
        real = idx != ORIGIN
        if np.any(~sel[idx[real]]):
            return False
        got = np.bincount(idx[real], weights=coupling.mass[real], minlength=len(mu))
        slack = tol + 8 * np.spacing(np.maximum(target, 1.0))
        if np.any(np.abs(got - target) > slack):
            return False
    return True


def gigli_bound_check(coupling: Coupling) -> tuple[float, float, bool]:
    """Source-side second moment of the coupling against ``4 int |z|^2 dmu1``.

    Returns ``(lhs, rhs, holds)``; raises ``NotAdmissible`` for a bad plan.
    """
    if not check_admissible(coupling):
        raise NotAdmissible("coupling marginals do not match")
    real = coupling.src != ORIGIN
    lhs = float(np.sum(coupling.mass[real] * np.sum(coupling.src_points()[real] ** 2, axis=1)))
    mu1 = coupling.mu1.restrict(coupling.r)
    rhs = 4.0 * float(np.sum(mu1.masses * mu1.radii() ** 2))
    return lhs, rhs, lhs <= rhs * (1 + 1e-12) + 1e-15


__all__ = ["ORIGIN", "Coupling", "TransportResult", "align", "tv_annulus",
           "tv_second_moment_ball", "weighted_tv", "explicit_coupling", "wasserstein_p_ball",
           "brute_force_wasserstein", "check_admissible", "gigli_bound_check"]
