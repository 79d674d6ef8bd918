# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loop-shaped kernels in ``summit._pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport isnan

cnp.import_array()

KIND_NUMERICAL = 0
KIND_MODE = 1
KIND_LAST = 2


def summarize_rows(cnp.int64_t[::1] win, double[:, ::1] values, signed char[::1] kinds,
                   Py_ssize_t k, Py_ssize_t max_vocab):
    cdef Py_ssize_t m = values.shape[0]
    cdef Py_ssize_t n = values.shape[1]
    cdef Py_ssize_t r, j, w, c, best
    cdef double v
    out_arr = np.full((k, n + 1), np.nan)
    mask_arr = np.zeros((k, n + 1), dtype=np.uint8)
    cdef double[:, ::1] out = out_arr
    cdef cnp.uint8_t[:, ::1] mask = mask_arr
    cdef double[:, ::1] sums = np.zeros((k, n))
    cdef cnp.int64_t[:, ::1] counts = np.zeros((k, n), dtype=np.int64)
    cdef cnp.int64_t[::1] rows = np.zeros(k, dtype=np.int64)
    vsz = max_vocab if max_vocab > 0 else 1
    cdef cnp.int64_t[:, :, ::1] cat_count = np.zeros((k, n, vsz), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] cat_first = np.full((k, n, vsz), -1, dtype=np.int64)

    for r in range(m):
        w = win[r]
        rows[w] += 1
        for j in range(n):
            v = values[r, j]
            if isnan(v):
                continue
            counts[w, j] += 1
            if kinds[j] == KIND_NUMERICAL:
                sums[w, j] += v
            elif kinds[j] == KIND_MODE:
                c = <Py_ssize_t>v
                cat_count[w, j, c] += 1
                if cat_first[w, j, c] < 0:
                    cat_first[w, j, c] = r
            else:
                sums[w, j] = v

    for w in range(k):
        for j in range(n):
            if counts[w, j] == 0:
                continue
            mask[w, j] = 1
            if kinds[j] == KIND_NUMERICAL:
                out[w, j] = sums[w, j] / counts[w, j]
            elif kinds[j] == KIND_MODE:
                best = -1
                for c in range(vsz):
                    if cat_count[w, j, c] == 0:
                        continue
                    if (best < 0 or cat_count[w, j, c] > cat_count[w, j, best]
                            or (cat_count[w, j, c] == cat_count[w, j, best]
                                and cat_first[w, j, c] < cat_first[w, j, best])):
                        best = c
                out[w, j] = best
            else:
                out[w, j] = sums[w, j]
        out[w, n] = rows[w]
        mask[w, n] = 1
    return out_arr, mask_arr


def concordance_counts(double[::1] times, cnp.int64_t[::1] events, cnp.int64_t[::1] ranks,
                       Py_ssize_t n_ranks):
    """Inputs sorted by ascending time. Returns (concordant, tied, comparable)."""
    cdef Py_ssize_t n = times.shape[0]
    cdef cnp.int64_t[::1] tree = np.zeros(n_ranks + 1, dtype=np.int64)
    cdef cnp.int64_t concordant = 0, tied = 0, comparable = 0, total = 0
    cdef cnp.int64_t below, upto
    cdef Py_ssize_t i = n - 1, j, q, pos

    while i >= 0:
        j = i
        while j >= 0 and times[j] == times[i]:
            j -= 1
        for q in range(j + 1, i + 1):
            if events[q] == 0:
                continue
            below = 0
            pos = ranks[q]
            while pos > 0:
                below += tree[pos]
                pos -= pos & (-pos)
            upto = 0
            pos = ranks[q] + 1
            while pos > 0:
                upto += tree[pos]
                pos -= pos & (-pos)
            concordant += below
            tied += upto - below
            comparable += total
        for q in range(j + 1, i + 1):
            pos = ranks[q] + 1
            while pos <= n_ranks:
                tree[pos] += 1
                pos += pos & (-pos)
            total += 1
        i = j
    return concordant, tied, comparable
