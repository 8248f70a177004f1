"""Temporal and feature-space neighbour sets used by the consistency losses."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import groupby

import numpy as np

from . import kernels
from .errors import ParameterError


@dataclass(frozen=True)
class NeighborIndex:
    temporal: tuple  # per segment, tuple of up to m segment positions
    feature: tuple  # per segment, tuple of exactly n segment positions

    def __len__(self):
        return len(self.temporal)


def _stream_keys(segments):
    """(stream_id, window_index) for Segment objects or manifest rows."""
    keys = []
    for s in segments:
        if isinstance(s, dict):
            keys.append((s["stream_id"], s["window_index"]))
        else:
            keys.append((s.stream_id, s.index))
    return keys


def temporal_neighbors(segments, m):
    """Up to ``m`` closest segments by window ordinal inside the same stream.

    Equal distances before and after favour the earlier segment. Returned
    lists hold positions in ``segments``.
    """
    if m < 1:
        raise ParameterError("m must be at least 1")
    keys = _stream_keys(segments)
    result = [()] * len(keys)
    by_stream = {}
    for pos, (sid, ordinal) in enumerate(keys):
        by_stream.setdefault(sid, []).append((ordinal, pos))
    for members in by_stream.values():
        members.sort()
        # ordinals are distinct within a stream, so the m nearest lie within m slots either side
        for k, (ordinal, pos) in enumerate(members):
            cand = [(abs(o - ordinal), o, p) for o, p in members[max(0, k - m):k] + members[k + 1:k + 1 + m]]
            cand.sort()
            result[pos] = tuple(p for _, _, p in cand[:m])
    return result


def feature_neighbors(features, n):
    """Exact Euclidean kNN (self excluded, ties to the lower index)."""
    x = np.asarray(features, dtype=np.float64)
    if n < 1:
        raise ParameterError("n must be at least 1")
    if n >= x.shape[0]:
        raise ParameterError(f"n={n} must be smaller than the dataset size {x.shape[0]}")
    idx, _ = kernels.knn(x, n)
    return [tuple(int(j) for j in row) for row in idx]


def build_index(segments, features, m=2, n=5):
    return NeighborIndex(tuple(temporal_neighbors(segments, m)), tuple(feature_neighbors(features, n)))


def write_index(index, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "kind", "rank", "j"])
        for kind, lists in (("temporal", index.temporal), ("feature", index.feature)):
            for i, nb in enumerate(lists):
                for rank, j in enumerate(nb):
                    w.writerow([i, kind, rank, j])


def read_index(path, size):
    lists = {"temporal": [[] for _ in range(size)], "feature": [[] for _ in range(size)]}
    with open(path, newline="") as fh:
        rows = sorted(
            ((r["kind"], int(r["i"]), int(r["rank"]), int(r["j"])) for r in csv.DictReader(fh)),
        )
    for (kind, i), grp in groupby(rows, key=lambda r: (r[0], r[1])):
        lists[kind][i] = [r[3] for r in grp]
    return NeighborIndex(tuple(map(tuple, lists["temporal"])), tuple(map(tuple, lists["feature"])))
