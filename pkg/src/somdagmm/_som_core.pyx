# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled SOM kernels: the sequential competitive-learning loop and batch
BMU lookup. Semantics match somdagmm._som_py (the fallback twin)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def train_kernel(double[:, ::1] weights,
                 double[:, ::1] data,
                 cnp.int64_t[::1] order,
                 double eta0, double eta_end,
                 double rad0, double rad_end,
                 int grid_w, int grid_h,
                 bint bubble):
    """Run competitive-learning steps, updating ``weights`` (U, d) in place."""
    cdef Py_ssize_t steps = order.shape[0]
    cdef Py_ssize_t units = weights.shape[0]
    cdef Py_ssize_t dim = weights.shape[1]
    cdef Py_ssize_t t, u, j, s, best
    cdef double denom = 1.0 if steps <= 1 else steps - 1.0
    cdef double frac, eta, rad, acc, dv, bestd, h, g2
    cdef Py_ssize_t bi, bj, ci, cj, di, dj, cheb

    for t in range(steps):
        s = order[t]
        best = 0
        bestd = 1.0 / 0.0
        for u in range(units):
            acc = 0.0
            for j in range(dim):
                dv = weights[u, j] - data[s, j]
                acc += dv * dv
                if acc >= bestd:
                    break
            if acc < bestd:
                bestd = acc
                best = u
        frac = t / denom
        eta = eta0 + (eta_end - eta0) * frac
        rad = rad0 + (rad_end - rad0) * frac
        bi = best // grid_h
        bj = best % grid_h
        for u in range(units):
            ci = u // grid_h
            cj = u % grid_h
            di = ci - bi if ci >= bi else bi - ci
            dj = cj - bj if cj >= bj else bj - cj
            if bubble:
                cheb = di if di >= dj else dj
                if cheb <= rad:
                    for j in range(dim):
                        weights[u, j] += eta * (data[s, j] - weights[u, j])
            else:
                g2 = <double> (di * di + dj * dj)
                h = eta * exp(-g2 / (2.0 * rad * rad))
                for j in range(dim):
                    weights[u, j] += h * (data[s, j] - weights[u, j])


def bmu_batch(double[:, ::1] weights, double[:, ::1] x):
    """Flat best-matching-unit index per row of ``x``; ties take the lowest index."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t units = weights.shape[0]
    cdef Py_ssize_t dim = weights.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i, u, j, best
    cdef double acc, dv, bestd

    for i in range(n):
        best = 0
        bestd = 1.0 / 0.0
        for u in range(units):
            acc = 0.0
            for j in range(dim):
                dv = weights[u, j] - x[i, j]
                acc += dv * dv
                if acc >= bestd:
                    break
            if acc < bestd:
                bestd = acc
                best = u
        out[i] = best
    return out
