"""Hamiltonians ``H(x, t, p)`` and the model ``b(x)|p|^m - f(x)``."""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from typing import Callable

import numpy as np


def _arity(fn) -> int:
    try:
        return len(inspect.signature(fn).parameters)
    except (TypeError, ValueError):
        return 1


def _constant(c: float):
    def const(x):
        return np.full(len(x), c)
    return const


@dataclass(frozen=True)
class Eikonal:
    """Structure ``b(x)|p|^m - f(x[, t])`` with vectorised ``b`` and ``f``.

    ``b`` and ``f`` take ``x`` of shape ``(M, N)`` (``f`` optionally ``t``)
    and return ``(M,)``.
    """

    b: Callable
    f: Callable
    m: float

    def f_at(self, x, t=0.0):
        return self.f(x, t) if _arity(self.f) >= 2 else self.f(x)


@dataclass(frozen=True)
class HamiltonianSpec:
    """A Hamiltonian with the constants of the growth and coercivity checks.

    ``func(x, t, p)`` is vectorised: ``x`` and ``p`` have shape ``(M, N)``.
    ``b_m, b_0`` are the declared coercivity constants, ``r_0`` the radius
    above which coercivity is tested and ``mu_0`` the smallest scaling.
    """

    func: Callable
    m: float
    b_m: float = 1.0
    b_0: float = 0.0
    r_0: float = 0.1
    mu_0: float = 0.5
    eikonal: Eikonal | None = None
    time_dependent: bool = False

    def __post_init__(self):
        if self.m <= 1:
            raise ValueError("growth exponent m must exceed 1")
        if self.b_m <= 0 or self.b_0 < 0 or self.r_0 <= 0 or not (0 < self.mu_0 < 1):
            raise ValueError("need b_m > 0, b_0 >= 0, r_0 > 0 and mu_0 in (0, 1)")

    @classmethod
    def model(cls, b: Callable | float, f: Callable | float, m: float = 2.0,
              time_dependent: bool = False, **kw) -> "HamiltonianSpec":
        """``H(x, t, p) = b(x)|p|^m - f(x)`` from callables or constants."""
        bf = b if callable(b) else _constant(float(b))
        ff = f if callable(f) else _constant(float(f))
        eik = Eikonal(bf, ff, float(m))

        def func(x, t, p):
            return eik.b(x) * np.linalg.norm(p, axis=-1) ** eik.m - eik.f_at(x, t)

        kw.setdefault("b_m", 1.0)
        return cls(func, float(m), eikonal=eik, time_dependent=time_dependent, **kw)

    def __call__(self, x, p, t: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x, p = np.broadcast_arrays(x, p)
        return np.asarray(self.func(x, t, p), dtype=float).reshape(len(x))

    def validate(self, x_samples) -> None:
        """Check ``b(x) > 0`` on samples for the model structure."""
        if self.eikonal is not None:
            b = self.eikonal.b(np.atleast_2d(x_samples))
            if np.any(b <= 0):
                raise ValueError("b(x) must be positive on samples")

    def slope_bound(self, x_samples, p_max: float, t: float = 0.0, n: int = 41) -> float:
        """Estimate ``sup |D_p H|`` over ``|p| <= p_max`` at the given points."""
        x = np.atleast_2d(x_samples)
        dim = x.shape[1]
        if self.eikonal is not None:
            b = np.max(np.abs(self.eikonal.b(x)))
            return float(b * self.m * p_max ** (self.m - 1))
        s = np.linspace(-p_max, p_max, n)
        grids = np.meshgrid(*([s] * dim), indexing="ij")
        pts = np.column_stack([g.ravel() for g in grids])
        best = 0.0
        h = 1e-6 * max(p_max, 1.0)
        for xi in x:
            xx = np.broadcast_to(xi, pts.shape)
            for k in range(dim):
                e = np.zeros(dim)
                e[k] = h
                d = (self(xx, pts + e, t) - self(xx, pts - e, t)) / (2 * h)
                best = max(best, float(np.max(np.abs(d))) * np.sqrt(dim))
        return best
