"""Reference implementations of the hot numeric kernels.

These are the fallback backend: plain NumPy, no compilation required. The
compiled extension mirrors these signatures exactly and is preferred at
import time when available. Keep both in lockstep; the parity tests compare
them element by element.

Conventions shared by both backends:
  - positions are float64 arrays shaped (agents, steps, 2)
  - all kernels return (value, grad) with grad matching the input shape
  - hinge gradients at exactly coincident points (zero distance) are zero,
    since the violation direction is undefined there
"""

import numpy as np


def pairwise_clearance(pos: np.ndarray, dmin: np.ndarray):
    """Total pairwise-clearance violation and its position gradient.

    Sums max(0, dmin[i,k] - ||pos[i,j] - pos[k,j]||) over unordered agent
    pairs (i, k) and timesteps j.
    """
    pos = np.asarray(pos, dtype=np.float64)
    dmin = np.asarray(dmin, dtype=np.float64)
    n_agents = pos.shape[0]
    total = 0.0
    grad = np.zeros_like(pos)
    for i in range(n_agents):
        for k in range(i + 1, n_agents):
            diff = pos[i] - pos[k]
            dist = np.hypot(diff[:, 0], diff[:, 1])
            gap = dmin[i, k] - dist
            active = gap > 0.0
            if not np.any(active):
                continue
            total += float(np.sum(gap[active]))
            safe = active & (dist > 0.0)
            unit = np.zeros_like(diff)
            unit[safe] = diff[safe] / dist[safe, None]
            grad[i] -= unit
            grad[k] += unit
    return total, grad


def obstacle_clearance(pos: np.ndarray, centers: np.ndarray, radii: np.ndarray):
    """Total obstacle-penetration violation and its position gradient.

    Sums max(0, radii[k] - ||pos[i,j] - centers[k]||) over agents, steps,
    and obstacles.
    """
    pos = np.asarray(pos, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    total = 0.0
    grad = np.zeros_like(pos)
    for k in range(centers.shape[0]):
        diff = pos - centers[k]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        gap = radii[k] - dist
        active = gap > 0.0
        if not np.any(active):
            continue
        total += float(np.sum(gap[active]))
        safe = active & (dist > 0.0)
        unit = np.zeros_like(diff)
        unit[safe] = diff[safe] / dist[safe, None]
        grad -= unit
    return total, grad


def ngram_score(rows: np.ndarray, grams: np.ndarray, weights: np.ndarray):
    """Weighted soft n-gram score of relaxed rows and its row gradient.

    score = sum_g weights[g] * sum_j prod_k rows[j + k, grams[g, k]], the
    expected match count under positionwise-independent rows. All grams in
    one call share the same length; callers group mixed-length tables.
    """
    rows = np.asarray(rows, dtype=np.float64)
    grams = np.asarray(grams, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    length = rows.shape[0]
    n = grams.shape[1] if grams.size else 0
    total = 0.0
    grad = np.zeros_like(rows)
    if n == 0 or length < n:
        return total, grad
    for g in range(grams.shape[0]):
        w = float(weights[g])
        if w == 0.0:
            continue
        gram = grams[g]
        for j in range(length - n + 1):
            factors = rows[j + np.arange(n), gram]
            prod = float(np.prod(factors))
            total += w * prod
            for k in range(n):
                others = np.prod(np.delete(factors, k))
                grad[j + k, gram[k]] += w * float(others)
    return total, grad
