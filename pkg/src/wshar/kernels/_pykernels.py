"""Numpy implementations of the hot kernels.

These are the reference behaviour for the compiled versions in
``_ckernels.pyx``; both accumulate in the same order so results agree bit
for bit on the distance kernels.
"""
import numpy as np


def window_stats(windows):
    """Per-row statistics of a ``(rows, length)`` float64 array.

    Returns ``(rows, 7)`` with columns mean, var, std, median, max, min, iqr.
    Variance divides by N; quartiles interpolate linearly between order
    statistics.
    """
    windows = np.ascontiguousarray(windows, dtype=np.float64)
    rows, n = windows.shape
    out = np.empty((rows, 7))
    s = np.sort(windows, axis=1)
    # cumsum accumulates left to right like the compiled loop; .sum() is pairwise
    mean = np.cumsum(windows, axis=1)[:, -1] / n
    # rounding can push the running mean outside [min, max]; constant rows must give exact zeros
    mean = np.clip(mean, s[:, 0], s[:, -1])
    dev = windows - mean[:, None]
    var = np.cumsum(dev * dev, axis=1)[:, -1] / n
    out[:, 0] = mean
    out[:, 1] = var
    out[:, 2] = np.sqrt(var)
    out[:, 3] = _quantile_sorted(s, 0.5)
    out[:, 4] = s[:, -1]
    out[:, 5] = s[:, 0]
    out[:, 6] = _quantile_sorted(s, 0.75) - _quantile_sorted(s, 0.25)
    return out


def _quantile_sorted(s, p):
    n = s.shape[1]
    h = (n - 1) * p
    lo = int(np.floor(h))
    frac = h - lo
    if lo + 1 >= n:
        return s[:, lo].copy()
    return s[:, lo] + frac * (s[:, lo + 1] - s[:, lo])


def sq_dist_to_all(x, q):
    # sequential accumulation over dimensions, matching the C loop
    acc = np.zeros(x.shape[0])
    for d in range(x.shape[1]):
        diff = x[:, d] - q[d]
        acc += diff * diff
    return acc


def knn(x, n_neighbors):
    """Exact k nearest neighbours of every row of ``x`` among the other rows.

    Ties are broken by the smaller row index.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    size = x.shape[0]
    idx = np.empty((size, n_neighbors), dtype=np.int64)
    dist = np.empty((size, n_neighbors))
    order_base = np.arange(size)
    for i in range(size):
        d2 = sq_dist_to_all(x, x[i])
        d2[i] = np.inf
        # lexsort: last key is primary
        order = np.lexsort((order_base, d2))[:n_neighbors]
        idx[i] = order
        dist[i] = d2[order]
    return idx, dist


def nearest_centroid(x, centroids):
    """Index of and squared distance to the closest centroid (first wins on ties)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    best = np.full(x.shape[0], np.inf)
    label = np.zeros(x.shape[0], dtype=np.int64)
    for c in range(centroids.shape[0]):
        d2 = sq_dist_to_all(x, centroids[c])
        better = d2 < best
        best[better] = d2[better]
        label[better] = c
    return label, best
