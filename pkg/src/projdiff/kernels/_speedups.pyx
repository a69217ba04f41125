# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels.

Same signatures, semantics, and conventions as _reference.py; the parity
tests hold the two backends together element by element. Gradients of hinge
terms at zero distance are zero in both.
"""

import numpy as np

from libc.math cimport sqrt


def pairwise_clearance(pos, dmin):
    """Total pairwise-clearance violation and its position gradient."""
    pos_arr = np.ascontiguousarray(pos, dtype=np.float64)
    dmin_arr = np.ascontiguousarray(dmin, dtype=np.float64)
    grad_arr = np.zeros_like(pos_arr)

    cdef const double[:, :, ::1] p = pos_arr
    cdef const double[:, ::1] d = dmin_arr
    cdef double[:, :, ::1] g = grad_arr
    cdef Py_ssize_t n_agents = p.shape[0]
    cdef Py_ssize_t n_steps = p.shape[1]
    cdef Py_ssize_t i, k, j
    cdef double total = 0.0
    cdef double dx, dy, dist, gap, ux, uy

    for i in range(n_agents):
        for k in range(i + 1, n_agents):
            for j in range(n_steps):
                dx = p[i, j, 0] - p[k, j, 0]
                dy = p[i, j, 1] - p[k, j, 1]
                dist = sqrt(dx * dx + dy * dy)
                gap = d[i, k] - dist
                if gap > 0.0:
                    total += gap
                    if dist > 0.0:
                        ux = dx / dist
                        uy = dy / dist
                        g[i, j, 0] -= ux
                        g[i, j, 1] -= uy
                        g[k, j, 0] += ux
                        g[k, j, 1] += uy
    return total, grad_arr


def obstacle_clearance(pos, centers, radii):
    """Total obstacle-penetration violation and its position gradient."""
    pos_arr = np.ascontiguousarray(pos, dtype=np.float64)
    centers_arr = np.ascontiguousarray(centers, dtype=np.float64)
    radii_arr = np.ascontiguousarray(radii, dtype=np.float64)
    grad_arr = np.zeros_like(pos_arr)

    cdef const double[:, :, ::1] p = pos_arr
    cdef const double[:, ::1] c = centers_arr
    cdef const double[::1] r = radii_arr
    cdef double[:, :, ::1] g = grad_arr
    cdef Py_ssize_t n_agents = p.shape[0]
    cdef Py_ssize_t n_steps = p.shape[1]
    cdef Py_ssize_t n_obs = c.shape[0]
    cdef Py_ssize_t a, j, o
    cdef double total = 0.0
    cdef double dx, dy, dist, gap

    for o in range(n_obs):
        for a in range(n_agents):
            for j in range(n_steps):
                dx = p[a, j, 0] - c[o, 0]
                dy = p[a, j, 1] - c[o, 1]
                dist = sqrt(dx * dx + dy * dy)
                gap = r[o] - dist
                if gap > 0.0:
                    total += gap
                    if dist > 0.0:
                        g[a, j, 0] -= dx / dist
                        g[a, j, 1] -= dy / dist
    return total, grad_arr


def ngram_score(rows, grams, weights):
    """Weighted soft n-gram score of relaxed rows and its row gradient."""
    rows_arr = np.ascontiguousarray(rows, dtype=np.float64)
    grams_arr = np.ascontiguousarray(grams, dtype=np.int64)
    weights_arr = np.ascontiguousarray(weights, dtype=np.float64)
    grad_arr = np.zeros_like(rows_arr)

    cdef Py_ssize_t length = rows_arr.shape[0]
    cdef Py_ssize_t n = grams_arr.shape[1] if grams_arr.size else 0
    if n == 0 or length < n:
        return 0.0, grad_arr

    cdef const double[:, ::1] rws = rows_arr
    cdef const long long[:, ::1] gr = grams_arr
    cdef const double[::1] ws = weights_arr
    cdef double[:, ::1] g = grad_arr
    cdef Py_ssize_t n_grams = gr.shape[0]
    cdef Py_ssize_t gi, j, k, m
    cdef double total = 0.0
    cdef double w, prod, others

    for gi in range(n_grams):
        w = ws[gi]
        if w == 0.0:
            continue
        for j in range(length - n + 1):
            prod = 1.0
            for k in range(n):
                prod *= rws[j + k, gr[gi, k]]
            total += w * prod
            for k in range(n):
                others = 1.0
                for m in range(n):
                    if m != k:
                        others *= rws[j + m, gr[gi, m]]
                g[j + k, gr[gi, k]] += w * others
    return total, grad_arr
