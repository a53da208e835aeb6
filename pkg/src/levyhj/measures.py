"""Lévy measure families, truncated moments and polar-grid discretization.

A family assigns to every base point ``xi`` a Lévy measure ``nu_xi`` on
``R^N \\ {0}``. Integrals are computed by Gauss-Legendre quadrature on
geometric radial shells (in log-radius) times an angular rule, with two
analytic completions that rely on the family's power-law order ``sigma``:

* the ball ``B_eps`` below the innermost shell, using the homogeneous
  extrapolation ``K(xi, rho w) ~ a(w) rho^-(N+sigma)``;
* the tail beyond the outermost shell, with the same extrapolation.

Kernels are vectorised: ``kernel(xi, z)`` receives ``xi`` of shape ``(N,)``
and ``z`` of shape ``(M, N)`` and returns ``(M,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import (GridTooCoarse, JumpOutOfBounds, NoDensity, QuadratureDivergence,
                     UnsupportedVariant, ZeroPoint)

Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]

DEFAULT_RATIO = 2.0 ** 0.25
DEFAULT_R_INNER = 1e-4
DEFAULT_R_OUTER = 32.0


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere in ``R^dim`` (dim = 1, 2, 3)."""
    try:
        return {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}[dim]
    except KeyError:
        raise ValueError(f"dimension must be 1, 2 or 3, got {dim}") from None


@lru_cache(maxsize=32)
def _gl(n: int):
    x, w = leggauss(n)
    return x, w


def _as_xi(xi, dim: int) -> np.ndarray:
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape != (dim,):
        raise ValueError(f"xi must have shape ({dim},), got {xi.shape}")
    return xi


# ---------------------------------------------------------------------------
# Quadrature building blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadConfig:
    """Resolution knobs for measure quadrature.

    ``ratio`` is the geometric shell ratio, ``n_radial`` the Gauss nodes per
    shell (in log-radius), ``n_angular`` the number of angular cells in 2-D
    (azimuthal cells in 3-D) and ``n_sub`` the Gauss nodes per angular piece.
    """

    ratio: float = DEFAULT_RATIO
    n_radial: int = 6
    n_angular: int = 32
    n_sub: int = 4
    r_inner: float = DEFAULT_R_INNER
    r_outer: float = DEFAULT_R_OUTER
    tol: float = 1e-6

    def refined(self) -> "QuadConfig":
        """Halve the log shell width and double the angular resolution."""
        return replace(self, ratio=math.sqrt(self.ratio), n_angular=2 * self.n_angular)


def geometric_edges(a: float, b: float, ratio: float) -> np.ndarray:
    """Shell edges from ``a`` to ``b`` with a constant ratio close to ``ratio``."""
    if not (0 < a < b):
        raise ValueError("need 0 < a < b")
    m = max(1, int(math.ceil(math.log(b / a) / math.log(ratio) - 1e-9)))
    edges = a * (b / a) ** (np.arange(m + 1) / m)
    edges[0], edges[-1] = a, b
    return edges


def radial_rule(edges: np.ndarray, n: int):
    """Gauss-Legendre nodes in log-radius for every shell between ``edges``.

    Returns radii, weights for ``d rho`` and the shell index of every node.
    """
    x, w = _gl(n)
    lo, hi = np.log(edges[:-1]), np.log(edges[1:])
    half = 0.5 * (hi - lo)
    t = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    rho = np.exp(t)
    wr = half[:, None] * w[None, :] * rho
    shell = np.repeat(np.arange(len(edges) - 1), n)
    return rho.ravel(), wr.ravel(), shell


def _angle_pieces(lo: float, hi: float, breaks) -> list[tuple[float, float]]:
    cuts = [lo]
    for b in sorted(breaks):
        for shift in (-2 * math.pi, 0.0, 2 * math.pi):
            c = b + shift
            if lo + 1e-14 < c < hi - 1e-14:
                cuts.append(c)
    cuts = sorted(set(cuts)) + [hi]
    return list(zip(cuts[:-1], cuts[1:]))


def angular_rule(dim: int, n_cells: int, n_sub: int, breaks=()):
    """Unit directions, surface weights and cell ids covering the sphere.

    In 1-D the "sphere" is ``{+1, -1}``. In 2-D cell ``j`` spans the angles
    ``[2 pi j / n, 2 pi (j+1) / n)`` and is split at any angular ``breaks`` so
    that piecewise-constant angular factors are integrated exactly. In 3-D
    cells are a product of ``n_cells // 2`` bands in ``cos(theta)`` and
    ``n_cells`` azimuthal sectors.
    """
    if dim == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2), np.array([0, 1])
    x, w = _gl(n_sub)
    if dim == 2:
        dirs, wts, cells = [], [], []
        step = 2 * math.pi / n_cells
        for j in range(n_cells):
            for a, b in _angle_pieces(j * step, (j + 1) * step, breaks):
                th = 0.5 * (a + b) + 0.5 * (b - a) * x
                dirs.append(np.column_stack([np.cos(th), np.sin(th)]))
                wts.append(0.5 * (b - a) * w)
                cells.append(np.full(n_sub, j))
        return np.vstack(dirs), np.concatenate(wts), np.concatenate(cells)
    if dim == 3:
        n_band = max(2, n_cells // 2)
        c_edges = np.linspace(-1.0, 1.0, n_band + 1)
        p_edges = np.linspace(0.0, 2 * math.pi, n_cells + 1)
        dirs, wts, cells = [], [], []
        for i in range(n_band):
            c = 0.5 * (c_edges[i] + c_edges[i + 1]) + 0.5 * (c_edges[i + 1] - c_edges[i]) * x
            wc = 0.5 * (c_edges[i + 1] - c_edges[i]) * w
            for k in range(n_cells):
                ph = 0.5 * (p_edges[k] + p_edges[k + 1]) + 0.5 * (p_edges[k + 1] - p_edges[k]) * x
                wp = 0.5 * (p_edges[k + 1] - p_edges[k]) * w
                C, P = np.meshgrid(c, ph, indexing="ij")
                s = np.sqrt(1 - C ** 2)
                dirs.append(np.column_stack([(s * np.cos(P)).ravel(), (s * np.sin(P)).ravel(),
                                             C.ravel()]))
                wts.append(np.outer(wc, wp).ravel())
                cells.append(np.full(n_sub * n_sub, i * n_cells + k))
        return np.vstack(dirs), np.concatenate(wts), np.concatenate(cells)
    raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")


def cell_directions(dim: int, n_cells: int) -> np.ndarray:
    """Representative direction of every angular cell (cell centres)."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = 2 * math.pi * (np.arange(n_cells) + 0.5) / n_cells
        return np.column_stack([np.cos(th), np.sin(th)])
    n_band = max(2, n_cells // 2)
    c = -1 + (2 * np.arange(n_band) + 1) / n_band
    ph = 2 * math.pi * (np.arange(n_cells) + 0.5) / n_cells
    C, P = np.meshgrid(c, ph, indexing="ij")
    s = np.sqrt(1 - C ** 2)
    return np.column_stack([(s * np.cos(P)).ravel(), (s * np.sin(P)).ravel(), C.ravel()])


@dataclass(frozen=True)
class QuadRule:
    """Points ``z`` and weights ``w`` with ``sum w f(z) ~ integral f d nu``."""

    points: np.ndarray
    weights: np.ndarray
    shell: np.ndarray
    cell: np.ndarray


# ---------------------------------------------------------------------------
# Polar grid and discretized measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolarGrid:
    """Geometric radial shells times angular cells on an annulus.

    Edges are integer powers of ``ratio`` times ``anchor`` so that the anchor
    (1 by default) and its dyadic fractions fall on shell boundaries.
    """

    edges: tuple
    n_angular: int = 32
    dim: int = 1

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or len(e) < 2 or np.any(np.diff(e) <= 0) or e[0] <= 0:
            raise ValueError("edges must be positive and strictly increasing")
        sphere_area(self.dim)

    @classmethod
    def geometric(cls, dim: int = 1, r_inner: float = DEFAULT_R_INNER,
                  r_outer: float = DEFAULT_R_OUTER, ratio: float = DEFAULT_RATIO,
                  n_angular: int = 32, anchor: float = 1.0) -> "PolarGrid":
        lq = math.log(ratio)
        k0 = int(round(math.log(r_inner / anchor) / lq))
        k1 = int(math.ceil(math.log(r_outer / anchor) / lq - 1e-9))
        edges = tuple(float(anchor * ratio ** k) for k in range(k0, k1 + 1))
        return cls(edges=edges, n_angular=n_angular, dim=dim)

    @property
    def r_inner(self) -> float:
        return float(self.edges[0])

    @property
    def r_outer(self) -> float:
        return float(self.edges[-1])

    @property
    def n_shells(self) -> int:
        return len(self.edges) - 1

    @property
    def n_cells(self) -> int:
        return {1: 2, 2: self.n_angular, 3: max(2, self.n_angular // 2) * self.n_angular}[self.dim]

    def atom_radii(self) -> np.ndarray:
        e = np.asarray(self.edges)
        return np.sqrt(e[:-1] * e[1:])

    def atoms(self) -> np.ndarray:
        """Atom locations ordered (shell, cell)."""
        r = self.atom_radii()
        d = cell_directions(self.dim, self.n_angular)
        return (r[:, None, None] * d[None, :, :]).reshape(-1, self.dim)

    def quad_config(self, **kw) -> QuadConfig:
        e = np.asarray(self.edges)
        ratio = float(np.exp(np.mean(np.diff(np.log(e)))))
        return QuadConfig(ratio=ratio, n_angular=self.n_angular, r_inner=self.r_inner,
                          r_outer=self.r_outer, **kw)


@dataclass
class DiscretizedMeasure:
    """A finite atomic measure, optionally tied to the polar grid it came from."""

    points: np.ndarray
    masses: np.ndarray
    shells: np.ndarray | None = None
    grid: PolarGrid | None = None
    xi: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if self.points.size == 0:
            dim = self.grid.dim if self.grid is not None else 1
            self.points = np.zeros((0, dim))
        if len(self.points) != len(self.masses):
            raise ValueError("points and masses must have equal length")
        if np.any(self.masses < 0) or not np.all(np.isfinite(self.masses)):
            raise ValueError("masses must be finite and non-negative")
        if np.any(np.linalg.norm(self.points, axis=1) == 0):
            raise ZeroPoint("a Lévy measure cannot charge the origin")
        if self.shells is None:
            self.shells = np.full(len(self.masses), -1, dtype=int)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def __len__(self):
        return len(self.masses)

    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    def restrict(self, r: float) -> "DiscretizedMeasure":
        """Atoms in the closed ball ``|z| <= r``."""
        keep = self.radii() <= r * (1 + 1e-12)
        return DiscretizedMeasure(self.points[keep], self.masses[keep], self.shells[keep],
                                  self.grid, self.xi)


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------

class LevyFamily:
    """Common interface of the five family variants."""

    variant: str = "abstract"
    dim: int = 1

    # -- hooks overridden by variants ------------------------------------
    def density(self, xi: np.ndarray, z: np.ndarray) -> np.ndarray:
        raise NoDensity(f"{self.variant} family has no density")

    def order(self, xi: np.ndarray) -> float:
        """Power-law order used by the analytic inner and tail completions."""
        raise UnsupportedVariant(f"{self.variant} family has no power-law order")

    def angular_breaks(self, xi: np.ndarray) -> tuple:
        return ()

    @property
    def has_density(self) -> bool:
        return True

    def sample_pairs(self, rng: np.random.Generator, separations, n_anchors: int = 1):
        """Pairs ``(x, y)`` with ``|x - y| = s`` for each separation ``s``.

        Anchors are uniform in ``[-1, 1]^N`` and the direction is uniform.
        """
        pairs = []
        for _ in range(n_anchors):
            x = rng.uniform(-1.0, 1.0, self.dim)
            e = rng.normal(size=self.dim)
            e /= np.linalg.norm(e)
            pairs.extend((x, x + s * e) for s in separations)
        return pairs

    def sample_points(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, (n, self.dim))

    # -- convenience -----------------------------------------------------
    def density_at(self, xi, z) -> np.ndarray:
        """Density at one point (shape ``(N,)``) or many (``(M, N)``)."""
        xi = _as_xi(xi, self.dim)
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        z2 = np.atleast_2d(z).reshape(-1, self.dim)
        if np.any(np.linalg.norm(z2, axis=1) == 0):
            raise ZeroPoint("density is not defined at z = 0")
        out = np.asarray(self.density(xi, z2), dtype=float)
        return float(out[0]) if single else out

    def rule(self, xi, a: float, b: float, q: QuadConfig | None = None,
             refine: int = 1) -> QuadRule:
        """Quadrature for ``nu_xi`` restricted to ``a <= |z| < b`` (``0 < a``)."""
        q = q or QuadConfig()
        xi = _as_xi(xi, self.dim)
        edges = geometric_edges(a, b, q.ratio)
        return self._rule_on_edges(xi, edges, q, refine)

    def _rule_on_edges(self, xi, edges, q: QuadConfig, refine: int = 1) -> QuadRule:
        dirs, wdir, cell = angular_rule(self.dim, q.n_angular, q.n_sub * refine,
                                        self.angular_breaks(xi))
        rho, wr, shell = radial_rule(np.asarray(edges), q.n_radial * refine)
        n_r, n_d = len(rho), len(wdir)
        pts = (rho[:, None, None] * dirs[None, :, :]).reshape(-1, self.dim)
        base = (wr * rho ** (self.dim - 1))[:, None] * wdir[None, :]
        dens = np.asarray(self.density(xi, pts), dtype=float).reshape(n_r, n_d)
        return QuadRule(pts, (base * dens).ravel(), np.repeat(shell, n_d), np.tile(cell, n_r))

    def amplitudes(self, xi, radius: float, q: QuadConfig | None = None):
        """Angular directions and weights ``w a(w)`` of the local power law.

        ``a(w) = K(xi, radius w) radius^(N + sigma)``; the returned weights
        already include the angular quadrature weight.
        """
        q = q or QuadConfig()
        xi = _as_xi(xi, self.dim)
        dirs, wdir, _ = angular_rule(self.dim, q.n_angular, q.n_sub, self.angular_breaks(xi))
        sig = self.order(xi)
        k = np.asarray(self.density(xi, radius * dirs), dtype=float)
        return dirs, wdir * k * radius ** (self.dim + sig), sig


class DensityFamily(LevyFamily):
    """``nu_xi(dz) = K(xi, z) dz`` with ``0 <= K <= lam |z|^-(N+sigma)``.

    ``c_k`` is the Lipschitz constant of ``xi -> K(xi, z) |z|^(N+sigma)``.
    """

    variant = "density"

    def __init__(self, kernel: Kernel, sigma: float, lam: float, c_k: float = 0.0,
                 dim: int = 1, xi_independent: bool = False, name: str = "density"):
        if not (0.0 < sigma < 2.0):
            raise ValueError("sigma must lie in (0, 2)")
        if lam <= 0 or c_k < 0:
            raise ValueError("lam must be positive and c_k non-negative")
        sphere_area(dim)
        self.kernel = kernel
        self.sigma = float(sigma)
        self.lam = float(lam)
        self.c_k = float(c_k)
        self.dim = int(dim)
        self.xi_independent = xi_independent
        self.name = name

    @classmethod
    def power_law(cls, sigma: float, lam: float = 1.0, dim: int = 1,
                  weight: Callable[[np.ndarray], float] | None = None, c_k: float = 0.0,
                  normalization: float = 1.0) -> "DensityFamily":
        """``K = normalization * weight(xi) |z|^-(N+sigma)``.

        ``weight`` must take values in ``[0, 1]`` so that ``lam`` (times the
        normalization) bounds the kernel; it defaults to ``lam`` everywhere.
        """
        n = dim + sigma
        amp = float(lam) * float(normalization)
        if weight is None:
            def kernel(xi, z):
                return amp * np.linalg.norm(z, axis=-1) ** (-n)
        else:
            def kernel(xi, z):
                return amp * weight(xi) * np.linalg.norm(z, axis=-1) ** (-n)
        return cls(kernel, sigma, amp, c_k * normalization, dim,
                   xi_independent=weight is None, name="power_law")

    def density(self, xi, z):
        return self.kernel(xi, z)

    def order(self, xi):
        return self.sigma

    def validate(self, rng: np.random.Generator | None = None, n: int = 64) -> None:
        """Check ``0 <= K <= lam |z|^-(N+sigma)`` on random samples."""
        rng = rng or np.random.default_rng(0)
        for xi in self.sample_points(rng, 8):
            z = rng.normal(size=(n, self.dim)) * np.exp(rng.uniform(-6, 3, (n, 1)))
            k = self.density(xi, z)
            bound = self.lam * np.linalg.norm(z, axis=1) ** (-(self.dim + self.sigma))
            if np.any(k < 0) or np.any(k > bound * (1 + 1e-9)):
                raise ValueError("kernel violates 0 <= K <= lam |z|^-(N+sigma)")


class VariableOrderFamily(LevyFamily):
    """``K(xi, z) = |z|^-(N + sigma(xi))`` with ``sigma`` in ``[s1, s2]``."""

    variant = "variable_order"

    def __init__(self, order_fn: Callable[[np.ndarray], float], sigma_lo: float,
                 sigma_hi: float, c_sigma: float = 0.0, dim: int = 1):
        if not (0.0 < sigma_lo <= sigma_hi < 2.0):
            raise ValueError("need 0 < sigma_lo <= sigma_hi < 2")
        sphere_area(dim)
        self.order_fn = order_fn
        self.sigma_lo, self.sigma_hi = float(sigma_lo), float(sigma_hi)
        self.c_sigma = float(c_sigma)
        self.dim = int(dim)

    def order(self, xi):
        s = float(self.order_fn(xi))
        if not (self.sigma_lo - 1e-12 <= s <= self.sigma_hi + 1e-12):
            raise ValueError(f"sigma(xi) = {s} outside [{self.sigma_lo}, {self.sigma_hi}]")
        return s

    def density(self, xi, z):
        return np.linalg.norm(z, axis=-1) ** (-(self.dim + self.order(xi)))

    def m1_bound(self) -> float:
        """``vol(S) (1/(2 - sigma_hi) + 1/sigma_lo)`` bounds the (M1) constant."""
        return sphere_area(self.dim) * (1 / (2 - self.sigma_hi) + 1 / self.sigma_lo)


class RotatedQuadrantFamily(LevyFamily):
    """2-D quadrant measure rotated by ``sqrt(|theta_xi|)``.

    ``nu_x = 1_{Q_x}(z) |z|^-(2+sigma) dz`` where ``Q`` is the open first
    quadrant and ``Q_x`` its rotation by ``sqrt(|theta_x|)``, ``theta_x`` the
    argument of ``x`` in ``(-pi, pi]``. The map ``x -> nu_x`` is only
    Hölder-1/2 at ``theta = 0``.
    """

    variant = "rotated_quadrant"

    def __init__(self, sigma: float = 1.0, lam: float = 1.0):
        if not (0.0 < sigma < 2.0):
            raise ValueError("sigma must lie in (0, 2)")
        self.sigma = float(sigma)
        self.lam = float(lam)
        self.dim = 2

    @staticmethod
    def theta(xi) -> float:
        xi = np.asarray(xi, dtype=float)
        th = math.atan2(xi[1], xi[0])
        return math.pi if th == -math.pi else th

    def rotation(self, xi) -> float:
        return math.sqrt(abs(self.theta(xi)))

    def order(self, xi):
        return self.sigma

    def angular_breaks(self, xi):
        a = self.rotation(xi)
        return (a % (2 * math.pi), (a + math.pi / 2) % (2 * math.pi))

    def density(self, xi, z):
        a = self.rotation(xi)
        ang = np.mod(np.arctan2(z[:, 1], z[:, 0]) - a, 2 * math.pi)
        inside = (ang > 0) & (ang < math.pi / 2)
        r = np.linalg.norm(z, axis=-1)
        return np.where(inside, self.lam * r ** (-(2 + self.sigma)), 0.0)

    def sample_pairs(self, rng, separations, n_anchors: int = 1):
        """Pairs straddling the non-smooth point: ``x = (1, 0)``, ``y = e^{i t}``.

        ``t = 2 arcsin(s / 2)`` so that ``|x - y| = s``; the sign of ``t`` is
        random. With several anchors the pairs are simply repeated with fresh
        signs, since ``theta = 0`` is the only point of interest.
        """
        pairs = []
        x = np.array([1.0, 0.0])
        for _ in range(n_anchors):
            for s in separations:
                t = 2 * math.asin(s / 2) * (1 if rng.random() < 0.5 else -1)
                pairs.append((x, np.array([math.cos(t), math.sin(t)])))
        return pairs

    def sample_points(self, rng, n):
        t = rng.uniform(-math.pi, math.pi, n)
        return np.column_stack([np.cos(t), np.sin(t)])


class LevyItoFamily(LevyFamily):
    """Push-forward family ``nu_xi = (j_xi)_# nu`` of a fixed base measure.

    ``jump(xi, z)`` maps ``(M, N)`` to ``(M, N)`` and must satisfy
    ``c0 |z| <= |j(xi, z)| <= c1 |z|``. The density of the push-forward is
    obtained by numerically inverting ``j_xi`` (Newton with a finite
    difference Jacobian); it is exact for maps linear in ``z``.
    """

    variant = "levy_ito"

    def __init__(self, base: LevyFamily, jump: Callable[[np.ndarray, np.ndarray], np.ndarray],
                 c0: float, c1: float):
        if not (0 < c0 <= c1):
            raise ValueError("need 0 < c0 <= c1")
        self.base = base
        self.jump = jump
        self.c0, self.c1 = float(c0), float(c1)
        self.dim = base.dim

    @property
    def has_density(self) -> bool:
        return self.base.has_density

    def order(self, xi):
        return self.base.order(xi)

    def apply(self, xi, z) -> np.ndarray:
        """``j(xi, z)`` with the growth bounds enforced."""
        xi = _as_xi(xi, self.dim)
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.asarray(self.jump(xi, z), dtype=float).reshape(z.shape)
        rz, rj = np.linalg.norm(z, axis=1), np.linalg.norm(out, axis=1)
        if np.any(rj < self.c0 * rz * (1 - 1e-12)) or np.any(rj > self.c1 * rz * (1 + 1e-12)):
            raise JumpOutOfBounds("jump violates c0|z| <= |j(xi,z)| <= c1|z|")
        return out

    def _jacobian(self, xi, w):
        n = self.dim
        h = 1e-6 * np.maximum(np.linalg.norm(w, axis=1), 1e-300)
        jac = np.empty((len(w), n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            step = h[:, None] * e[None, :]
            jac[:, :, k] = (self.jump(xi, w + step) - self.jump(xi, w - step)) / (2 * h[:, None])
        return jac

    def invert(self, xi, z):
        """Solve ``j(xi, w) = z`` for ``w``; returns ``w`` and the Jacobian there."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        w = z / (0.5 * (self.c0 + self.c1))
        scale = np.linalg.norm(z, axis=1)
        for _ in range(60):
            jac = self._jacobian(xi, w)
            resid = np.asarray(self.jump(xi, w), dtype=float) - z
            w = w - np.linalg.solve(jac, resid[..., None])[..., 0]
            if np.all(np.linalg.norm(resid, axis=1) <= 1e-13 * scale):
                break
        return w, self._jacobian(xi, w)

    def density(self, xi, z):
        w, jac = self.invert(xi, z)
        return self.base.density(xi, w) / np.abs(np.linalg.det(jac))

    def angular_breaks(self, xi):
        return self.base.angular_breaks(xi)


class FiniteAtomicFamily(LevyFamily):
    """Finitely many atoms away from the origin; masses may depend on ``xi``.

    ``atoms`` is either a fixed ``(points, masses)`` pair or a callable
    ``xi -> (points, masses)``.
    """

    variant = "finite_atomic"

    def __init__(self, atoms, dim: int | None = None):
        self._atoms = atoms
        if callable(atoms):
            if dim is None:
                raise ValueError("dim is required with callable atoms")
            self.dim = int(dim)
        else:
            pts = np.atleast_2d(np.asarray(atoms[0], dtype=float))
            self.dim = int(dim or pts.shape[1])
            self._fixed = DiscretizedMeasure(pts.reshape(-1, self.dim), atoms[1])

    @property
    def has_density(self) -> bool:
        return False

    def measure(self, xi) -> DiscretizedMeasure:
        if callable(self._atoms):
            xi = _as_xi(xi, self.dim)
            pts, m = self._atoms(xi)
            pts = np.atleast_2d(np.asarray(pts, dtype=float)).reshape(-1, self.dim)
            return DiscretizedMeasure(pts, m, xi=xi)
        return DiscretizedMeasure(self._fixed.points.copy(), self._fixed.masses.copy(),
                                  xi=_as_xi(xi, self.dim))

    def rule(self, xi, a, b, q=None, refine=1):
        mu = self.measure(xi)
        r = mu.radii()
        keep = (r >= a) & (r < b)
        return QuadRule(mu.points[keep], mu.masses[keep], np.full(keep.sum(), -1),
                        np.full(keep.sum(), -1))


# ---------------------------------------------------------------------------
# Truncated moments
# ---------------------------------------------------------------------------

def _inner_cutoff(q: QuadConfig, r: float) -> float:
    return min(q.r_inner, r)


def _check_decay(family, xi, q: QuadConfig, eps: float) -> None:
    """Raise if second-moment shell contributions do not shrink towards 0."""
    edges = eps * q.ratio ** np.arange(3)
    rule = family._rule_on_edges(xi, edges, q)
    c = np.bincount(rule.shell, weights=rule.weights * np.sum(rule.points ** 2, axis=1),
                    minlength=2)
    if c[0] <= 0:
        return
    expo = math.log(c[1] / c[0]) / math.log(q.ratio)
    if expo < 0.02:
        raise QuadratureDivergence(
            f"second-moment shells grow like r^{expo:.3f} near 0 (order >= 2)")


def moment2_ball(family: LevyFamily, xi, r: float, q: QuadConfig | None = None) -> float:
    """``int_{|z| <= r} |z|^2 nu_xi(dz)``.

    The ball below ``q.r_inner`` is integrated analytically from the local
    power law; the remaining shells use Gauss-Legendre quadrature.
    """
    q = q or QuadConfig()
    if r <= 0:
        return 0.0
    xi = _as_xi(xi, family.dim)
    if isinstance(family, FiniteAtomicFamily):
        mu = family.measure(xi).restrict(r)
        return float(np.sum(mu.masses * mu.radii() ** 2))
    eps = _inner_cutoff(q, r)
    _check_decay(family, xi, q, eps)
    dirs, amp, sig = family.amplitudes(xi, eps, q)
    total = float(amp.sum()) * eps ** (2 - sig) / (2 - sig)
    if r > eps:
        rule = family.rule(xi, eps, r, q)
        total += float(np.sum(rule.weights * np.sum(rule.points ** 2, axis=1)))
    return total


def tail_mass(family: LevyFamily, xi, R: float, q: QuadConfig | None = None) -> float:
    """``nu_xi(|z| >= R)`` for ``R >= 1``, with an analytic tail beyond ``r_outer``."""
    if R < 1:
        raise ValueError("tail_mass requires R >= 1")
    q = q or QuadConfig()
    xi = _as_xi(xi, family.dim)
    if isinstance(family, FiniteAtomicFamily):
        mu = family.measure(xi)
        return float(mu.masses[mu.radii() >= R].sum())
    r_far = max(q.r_outer, R)
    dirs, amp, sig = family.amplitudes(xi, r_far, q)
    total = float(amp.sum()) * r_far ** (-sig) / sig
    if R < r_far:
        total += float(family.rule(xi, R, r_far, q).weights.sum())
    return total


def annulus_mass(family: LevyFamily, xi, a: float, b: float, q: QuadConfig | None = None) -> float:
    """``nu_xi(a <= |z| < b)`` for ``0 < a < b``."""
    return float(family.rule(xi, a, b, q).weights.sum())


def levy_constant(family: LevyFamily, xi, q: QuadConfig | None = None) -> float:
    """``int min(1, |z|^2) nu_xi(dz)`` at one base point."""
    return moment2_ball(family, xi, 1.0, q) + tail_mass(family, xi, 1.0, q)


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------

def _merge(points, masses):
    keys, inv = np.unique(np.round(points, 12), axis=0, return_inverse=True)
    inv = inv.ravel()
    if len(keys) == len(points):
        return points, masses
    m = np.bincount(inv, weights=masses, minlength=len(keys))
    first = np.full(len(keys), -1)
    for i, k in enumerate(inv):
        if first[k] < 0:
            first[k] = i
    return points[first], m


def discretize(family: LevyFamily, xi, grid: PolarGrid, tol: float = 1e-6) -> DiscretizedMeasure:
    """Atomic approximation of ``nu_xi`` on ``r_inner < |z| <= r_outer``.

    Each (shell, angular cell) becomes one atom at the geometric-mean radius
    and centre direction of the cell, carrying the cell-integrated mass.
    Cells with zero mass are dropped. A cell whose mass changes by more
    than ``tol`` (relative) under doubled quadrature raises ``GridTooCoarse``.
    Finite atomic families are returned unchanged.
    """
    xi = _as_xi(xi, family.dim)
    if grid.dim != family.dim:
        raise ValueError("grid and family dimensions differ")
    if isinstance(family, FiniteAtomicFamily):
        mu = family.measure(xi)
        shells = np.searchsorted(np.asarray(grid.edges), mu.radii(), side="left") - 1
        shells[(shells < 0) | (shells >= grid.n_shells)] = -1
        return DiscretizedMeasure(mu.points, mu.masses, shells, None, xi)
    if isinstance(family, LevyItoFamily):
        return pushforward_discretize(family, xi, grid, tol)
    q = grid.quad_config()
    n_cells = grid.n_cells
    masses = []
    for refine in (1, 2):
        rule = family._rule_on_edges(xi, np.asarray(grid.edges), q, refine)
        idx = rule.shell * n_cells + rule.cell
        masses.append(np.bincount(idx, weights=rule.weights, minlength=grid.n_shells * n_cells))
    coarse, fine = masses
    err = np.abs(coarse - fine)
    bad = err > tol * np.abs(fine) + 1e-300
    if np.any(bad):
        k = int(np.argmax(np.where(bad, err / np.maximum(np.abs(fine), 1e-300), 0)))
        raise GridTooCoarse(f"cell {k}: relative mass error {err[k] / abs(fine[k]):.2e} > {tol}")
    pts = grid.atoms()
    keep = fine > 0
    shells = np.repeat(np.arange(grid.n_shells), n_cells)
    return DiscretizedMeasure(pts[keep], fine[keep], shells[keep], grid, xi)


def pushforward_discretize(family: LevyItoFamily, xi, grid: PolarGrid,
                           tol: float = 1e-6) -> DiscretizedMeasure:
    """Discretize the base measure, then move every atom by ``j(xi, .)``.

    The result is not aligned to the polar grid (``grid`` is ``None``).
    """
    if not isinstance(family, LevyItoFamily):
        raise UnsupportedVariant("pushforward_discretize needs a Lévy-Itô family")
    xi = _as_xi(xi, family.dim)
    base = discretize(family.base, xi, grid, tol)
    pts = family.apply(xi, base.points)
    return DiscretizedMeasure(pts, base.masses.copy(), base.shells.copy(), None, xi)


def transport_discretize(family: LevyFamily, xi, grid: PolarGrid,
                         tol: float = 1e-6) -> DiscretizedMeasure:
    """Discretization used for Wasserstein-type comparisons.

    Push-forward families (Lévy-Itô, rotated quadrant) move atoms of a fixed
    base discretization, so that nearby base points give nearby atoms. All
    other families use the aligned polar grid.
    """
    if isinstance(family, LevyItoFamily):
        return pushforward_discretize(family, xi, grid, tol)
    if isinstance(family, RotatedQuadrantFamily):
        xi = _as_xi(xi, 2)
        base = discretize(family, np.array([1.0, 0.0]), grid, tol)
        a = family.rotation(xi)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        return DiscretizedMeasure(base.points @ rot.T, base.masses.copy(), base.shells.copy(),
                                  None, xi)
    return discretize(family, xi, grid, tol)


__all__ = [
    "QuadConfig", "QuadRule", "PolarGrid", "DiscretizedMeasure", "LevyFamily",
    "DensityFamily", "VariableOrderFamily", "RotatedQuadrantFamily", "LevyItoFamily",
    "FiniteAtomicFamily", "sphere_area", "geometric_edges", "radial_rule", "angular_rule",
    "moment2_ball", "tail_mass", "annulus_mass", "levy_constant", "discretize",
    "pushforward_discretize", "transport_discretize",
]
