# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled training kernel.

Mirrors the contract documented in coalfed.kernels.common: same flat
weight layout, same LCG-driven shuffling, same gradient scaling.  Results
are deterministic for a given backend but may differ from the numpy
fallback in the last bits (different accumulation order).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, exp
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t LCG_MULT = 6364136223846793005UL
cdef uint64_t LCG_INC = 1442695040888963407UL

DEF OUTPUT_SOFTMAX = 1


cdef inline uint64_t lcg_next(uint64_t s) nogil:
    return s * LCG_MULT + LCG_INC


cdef uint64_t shuffle(long long[::1] perm, uint64_t state) nogil:
    cdef Py_ssize_t i, j
    cdef long long tmp
    for i in range(perm.shape[0] - 1, 0, -1):
        state = lcg_next(state)
        j = <Py_ssize_t>(state % <uint64_t>(i + 1))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return state


def train_steps(double[:, ::1] X, double[:, ::1] Y, sizes, double[::1] w,
                double lr, long steps, long batch, unsigned long long seed,
                int output_kind):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t L = len(sizes) - 1
    cdef long long[::1] sz = np.asarray(sizes, dtype=np.int64)
    cdef long long[::1] woff = np.zeros(L, dtype=np.int64)
    cdef long long[::1] boff = np.zeros(L, dtype=np.int64)
    cdef Py_ssize_t l, off = 0
    cdef Py_ssize_t max_w = 0
    for l in range(L):
        woff[l] = off
        off += sz[l] * sz[l + 1]
        boff[l] = off
        off += sz[l + 1]
        if sz[l + 1] > max_w:
            max_w = sz[l + 1]
    if sz[0] > max_w:
        max_w = sz[0]

    cdef bint full = batch <= 0 or batch >= n
    cdef Py_ssize_t bsz = n if full else batch
    cdef Py_ssize_t per_epoch = 1 if full else (n + batch - 1) // batch

    cdef long long[::1] perm = np.arange(n, dtype=np.int64)
    cdef uint64_t state = seed if seed != 0 else 1

    # activations per layer for the current batch, and the backprop delta
    acts_np = [np.empty((bsz, sz[l]), dtype=np.float64) for l in range(L + 1)]
    cdef double[:, ::1] delta = np.empty((bsz, max_w), dtype=np.float64)
    cdef double[:, ::1] delta2 = np.empty((bsz, max_w), dtype=np.float64)
    cdef double[:, ::1] a_prev, a_cur
    cdef Py_ssize_t step, k, i, j, p, m, n_in, n_out, row
    cdef double s, mx, tot, scale
    cdef Py_ssize_t start

    # flatten the activation buffers into a list of memoryviews
    cdef list acts = [a for a in acts_np]

    for step in range(steps):
        if full:
            start = 0
            m = n
        else:
            k = step % per_epoch
            if k == 0:
                with nogil:
                    state = shuffle(perm, state)
            start = k * batch
            m = batch if start + batch <= n else n - start

        # load batch into layer-0 activations
        a_cur = acts[0]
        for i in range(m):
            row = perm[start + i] if not full else i
            for j in range(d):
                a_cur[i, j] = X[row, j]

        # forward
        for l in range(L):
            a_prev = acts[l]
            a_cur = acts[l + 1]
            n_in = sz[l]
            n_out = sz[l + 1]
            with nogil:
                for i in range(m):
                    for j in range(n_out):
                        s = w[boff[l] + j]
                        for p in range(n_in):
                            s += a_prev[i, p] * w[woff[l] + p * n_out + j]
                        a_cur[i, j] = tanh(s) if l < L - 1 else s

        # output delta
        a_cur = acts[L]
        n_out = sz[L]
        scale = 1.0 / m
        if output_kind == OUTPUT_SOFTMAX:
            for i in range(m):
                mx = a_cur[i, 0]
                for j in range(1, n_out):
                    if a_cur[i, j] > mx:
                        mx = a_cur[i, j]
                tot = 0.0
                for j in range(n_out):
                    delta[i, j] = exp(a_cur[i, j] - mx)
                    tot += delta[i, j]
                for j in range(n_out):
                    row = perm[start + i] if not full else i
                    delta[i, j] = (delta[i, j] / tot - Y[row, j]) * scale
        else:
            for i in range(m):
                row = perm[start + i] if not full else i
                for j in range(n_out):
                    delta[i, j] = 2.0 * (a_cur[i, j] - Y[row, j]) * scale

        # backward + update
        for l in range(L - 1, -1, -1):
            a_prev = acts[l]
            n_in = sz[l]
            n_out = sz[l + 1]
            with nogil:
                if l > 0:
                    for i in range(m):
                        for p in range(n_in):
                            s = 0.0
                            for j in range(n_out):
                                s += delta[i, j] * w[woff[l] + p * n_out + j]
                            delta2[i, p] = s * (1.0 - a_prev[i, p] * a_prev[i, p])
                for p in range(n_in):
                    for j in range(n_out):
                        s = 0.0
                        for i in range(m):
                            s += a_prev[i, p] * delta[i, j]
                        w[woff[l] + p * n_out + j] -= lr * s
                for j in range(n_out):
                    s = 0.0
                    for i in range(m):
                        s += delta[i, j]
                    w[boff[l] + j] -= lr * s
            if l > 0:
                delta, delta2 = delta2, delta

    return np.asarray(w)
