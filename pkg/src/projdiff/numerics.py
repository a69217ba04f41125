"""Shared numeric primitives.

Everything downstream (samplers, projections, metrics) funnels through the
helpers here so that stabilization and clamping conventions live in exactly
one place:

* ``softmax``        max-subtracted, safe for large logits
* ``kl_div``         Kullback-Leibler divergence with a 1e-12 floor on q
* ``sliced_wasserstein``  Monte-Carlo sliced 1-D transport distance
* ``SeededRng``      reproducible random streams with derived child streams
"""

from __future__ import annotations

import zlib
from typing import Iterable, Sequence

import numpy as np

# Lower clamp applied to probabilities before logs or ratios.
PROB_FLOOR = 1e-12

# Tolerance used when validating that a vector lies on the simplex.
SIMPLEX_TOL = 1e-9


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``.

    The maximum is subtracted before exponentiation, so arbitrarily large
    logits do not overflow. Output rows are nonnegative and sum to 1.
    """
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def is_simplex(row: np.ndarray, tol: float = SIMPLEX_TOL) -> bool:
    """True when ``row`` is nonnegative and sums to 1 within ``tol``."""
    row = np.asarray(row, dtype=np.float64)
    return bool(np.all(row >= -tol) and abs(float(np.sum(row)) - 1.0) <= tol)


def kl_div(p: np.ndarray, q: np.ndarray) -> float:
    """KL divergence ``sum_i p_i log(p_i / q_i)`` between simplex vectors.

    ``q`` is clamped below at 1e-12 so zero entries yield large finite values
    instead of infinities. Terms with ``p_i = 0`` contribute zero.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    assert p.shape == q.shape, "p and q must have matching shapes"
    assert is_simplex(p), "p must lie on the probability simplex"
    q_safe = np.maximum(q, PROB_FLOOR)
    terms = np.where(p > 0.0, p * (np.log(np.maximum(p, PROB_FLOOR)) - np.log(q_safe)), 0.0)
    return float(np.sum(terms))


def _wasserstein1_sorted(x: np.ndarray, y: np.ndarray) -> float:
    # Exact 1-D W1 between empirical measures of possibly different sizes.
    # Integrates |F_x^{-1}(q) - F_y^{-1}(q)| over the merged quantile grid;
    # the quantile functions are constant between breakpoints i/n and j/m.
    n, m = len(x), len(y)
    if n == m:
        return float(np.mean(np.abs(x - y)))
    edges = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    widths = np.diff(np.concatenate(([0.0], edges)))
    mids = edges - widths / 2.0
    ix = np.minimum((mids * n).astype(np.int64), n - 1)
    iy = np.minimum((mids * m).astype(np.int64), m - 1)
    return float(np.sum(widths * np.abs(x[ix] - y[iy])))


def sliced_wasserstein(
    a: np.ndarray,
    b: np.ndarray,
    n_directions: int = 64,
    rng: "SeededRng | np.random.Generator | None" = None,
    directions: np.ndarray | None = None,
) -> float:
    """Sliced 1-D Wasserstein distance between point sets ``a`` and ``b``.

    Both inputs are ``(n_points, dim)`` arrays. Each random unit direction
    projects the sets to the line, where the exact empirical W1 distance is
    computed on sorted projections; the result is the average over
    ``n_directions`` Monte-Carlo directions. ``directions`` overrides the
    random draw with explicit rows (used by tests and reports that need fixed
    slices).
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    assert a.shape[1] == b.shape[1], "point sets must share a dimension"
    dim = a.shape[1]
    if directions is None:
        gen = _as_generator(rng)
        directions = gen.standard_normal((n_directions, dim))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    assert np.all(norms > 0.0), "directions must be nonzero"
    units = directions / norms

    proj_a = np.sort(a @ units.T, axis=0)
    proj_b = np.sort(b @ units.T, axis=0)
    total = 0.0
    for k in range(units.shape[0]):
        total += _wasserstein1_sorted(proj_a[:, k], proj_b[:, k])
    return total / units.shape[0]


def _as_generator(rng) -> np.random.Generator:
    if rng is None:
        return np.random.default_rng(0)
    if isinstance(rng, SeededRng):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"unsupported rng type: {type(rng)!r}")


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    if isinstance(key, str):
        # Stable, platform-independent mapping for readable stream names.
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"child keys must be int or str, got {type(key)!r}")


class SeededRng:
    """Deterministic random stream with hierarchical child derivation.

    Algorithm: numpy ``Generator`` over the PCG64 bit generator, seeded by
    ``SeedSequence([root_seed, *path])``. A child stream extends the path with
    integer keys (strings are mapped through CRC-32), so
    ``SeededRng(7).child("chain", 3)`` names the same stream in every run and
    is statistically independent of its siblings.
    """

    def __init__(self, seed: int, _path: Sequence[int] = ()):  # path is internal
        self.seed = int(seed)
        self.path: tuple[int, ...] = tuple(int(k) for k in _path)
        self._seq = np.random.SeedSequence([self.seed, *self.path])
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, *keys) -> "SeededRng":
        """Derive an independent stream named by ``keys``."""
        assert keys, "child() requires at least one key"
        return SeededRng(self.seed, self.path + tuple(_key_to_int(k) for k in keys))

    # Thin draws used across the package. Kept explicit so call sites document
    # how much randomness each step consumes.
    def standard_normal(self, shape=None) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None) -> np.ndarray:
        return self.generator.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self.generator.integers(low, high, size=shape)

    def gumbel(self, shape=None) -> np.ndarray:
        # Standard Gumbel(0, 1) via inverse transform of uniform draws.
        u = self.generator.uniform(0.0, 1.0, shape)
        return -np.log(-np.log(np.maximum(u, PROB_FLOOR)))

    def choice_index(self, probs: np.ndarray) -> int:
        """Draw an index from a probability row (inverse CDF on one uniform)."""
        probs = np.asarray(probs, dtype=np.float64)
        assert is_simplex(probs, tol=1e-6), "choice_index needs a simplex row"
        u = float(self.generator.uniform())
        return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, path={self.path})"
