# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np

from libc.math cimport sqrt, floor, INFINITY


cdef inline double _quantile(const double* s, Py_ssize_t n, double p) noexcept nogil:
    """Linear interpolation between order statistics of the sorted row ``s``."""
    cdef double h = (n - 1) * p
    cdef Py_ssize_t lo = <Py_ssize_t>floor(h)
    cdef double frac = h - lo
    if lo + 1 >= n:
        return s[lo]
    return s[lo] + frac * (s[lo + 1] - s[lo])


def window_stats(windows):
    cdef double[:, ::1] w = np.ascontiguousarray(windows, dtype=np.float64)
    # numpy's vectorised sort beats any per-row sort or select written here
    cdef double[:, ::1] srt = np.sort(w, axis=1)
    cdef Py_ssize_t rows = w.shape[0], n = w.shape[1]
    out_arr = np.empty((rows, 7))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, j
    cdef double mean, var, dev
    with nogil:
        for r in range(rows):
            mean = 0.0
            for j in range(n):
                mean += w[r, j]
            mean = mean / n
            # rounding can push the running mean outside [min, max]; constant rows must give exact zeros
            if mean < srt[r, 0]:
                mean = srt[r, 0]
            elif mean > srt[r, n - 1]:
                mean = srt[r, n - 1]
            var = 0.0
            for j in range(n):
                dev = w[r, j] - mean
                var += dev * dev
            var = var / n
            out[r, 0] = mean
            out[r, 1] = var
            out[r, 2] = sqrt(var)
            out[r, 3] = _quantile(&srt[r, 0], n, 0.5)
            out[r, 4] = srt[r, n - 1]
            out[r, 5] = srt[r, 0]
            out[r, 6] = _quantile(&srt[r, 0], n, 0.75) - _quantile(&srt[r, 0], n, 0.25)
    return out_arr


def knn(x, Py_ssize_t n_neighbors):
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t size = X.shape[0], dim = X.shape[1]
    idx_arr = np.empty((size, n_neighbors), dtype=np.int64)
    dist_arr = np.empty((size, n_neighbors))
    cdef long long[:, ::1] idx = idx_arr
    cdef double[:, ::1] dist = dist_arr
    cdef Py_ssize_t i, j, d, pos, k = n_neighbors
    cdef double acc, diff
    with nogil:
        for i in range(size):
            for pos in range(k):
                dist[i, pos] = INFINITY
                idx[i, pos] = size
            for j in range(size):
                if j == i:
                    continue
                acc = 0.0
                for d in range(dim):
                    diff = X[j, d] - X[i, d]
                    acc = acc + diff * diff
                # j increases, so equal distances keep the earlier index ahead
                if acc >= dist[i, k - 1]:
                    continue
                pos = k - 1
                while pos > 0 and dist[i, pos - 1] > acc:
                    dist[i, pos] = dist[i, pos - 1]
                    idx[i, pos] = idx[i, pos - 1]
                    pos -= 1
                dist[i, pos] = acc
                idx[i, pos] = j
    return idx_arr, dist_arr


def nearest_centroid(x, centroids):
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] C = np.ascontiguousarray(centroids, dtype=np.float64)
    cdef Py_ssize_t size = X.shape[0], dim = X.shape[1], k = C.shape[0]
    label_arr = np.zeros(size, dtype=np.int64)
    best_arr = np.empty(size)
    cdef long long[:] label = label_arr
    cdef double[:] best = best_arr
    cdef Py_ssize_t i, c, d
    cdef double acc, diff
    with nogil:
        for i in range(size):
            best[i] = INFINITY
            for c in range(k):
                acc = 0.0
                for d in range(dim):
                    diff = X[i, d] - C[c, d]
                    acc = acc + diff * diff
                if acc < best[i]:
                    best[i] = acc
                    label[i] = c
    return label_arr, best_arr
