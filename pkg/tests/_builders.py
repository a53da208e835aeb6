"""Shared generators for randomized test instances."""

import numpy as np

from levyhj import DiscretizedMeasure


def random_atomic_pair(rng: np.random.Generator, max_atoms: int, dim: int = 2, r: float = 1.0,
                       shared: float = 0.5):
    """Two atomic measures in ``B_r``, partly sharing atom locations."""
    n1, n2 = rng.integers(1, max_atoms + 1, size=2)
    pool = rng.uniform(-1, 1, (n1 + n2, dim))
    pool *= (r * rng.uniform(0.05, 1.0, (n1 + n2, 1))) / np.linalg.norm(pool, axis=1, keepdims=True)
    p1 = pool[:n1]
    take = rng.random(n2) < shared
    p2 = np.where(take[:, None], p1[rng.integers(0, n1, n2)], pool[n1:])
    p2 = np.unique(p2, axis=0)
    m1 = rng.exponential(1.0, n1)
    m2 = rng.exponential(1.0, len(p2))
    return DiscretizedMeasure(p1, m1), DiscretizedMeasure(p2, m2)


def smooth_bump(rng: np.random.Generator, dim: int = 1):
    """A random smooth bounded function on ``R^dim``."""
    a, c, s = rng.uniform(0.2, 1.5), rng.uniform(-2, 2, dim), rng.uniform(0.5, 2.0)
    k, ph = rng.uniform(0.3, 2.0), rng.uniform(0, 2 * np.pi)

    def fn(X):
        X = np.atleast_2d(X)
        return a * np.exp(-np.sum((X - c) ** 2, axis=1) / s ** 2) + 0.3 * np.sin(k * X[:, 0] + ph)

    return fn
