"""Per-channel window statistics and z-score normalisation."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, ParameterError, ParseError

STAT_NAMES = ("mean", "var", "std", "median", "max", "min", "iqr")
N_STATS = len(STAT_NAMES)


@dataclass
class FeatureVector:
    values: np.ndarray
    segment_index: int


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def feature_names(channel_names):
    return [f"{ch}_{stat}" for ch in channel_names for stat in STAT_NAMES]


def _check_finite(samples, where):
    bad = ~np.isfinite(samples)
    if bad.any():
        ch = int(np.argwhere(bad.any(axis=-1))[0][-1])
        raise DataError(f"non-finite sample value in {where}, channel {ch}")


def extract_features(segment, segment_index=None):
    """Feature vector of one segment: the seven statistics for each channel in turn."""
    samples = np.asarray(segment.samples, dtype=np.float64)
    idx = segment.index if segment_index is None else segment_index
    if samples.ndim != 2 or samples.shape[1] < 1:
        raise ParameterError("segment needs at least one sample per channel")
    _check_finite(samples, f"segment {idx}")
    return FeatureVector(kernels.window_stats(samples).reshape(-1), idx)


def feature_matrix(segments):
    """Features for a list of equally shaped segments as an ``(S, C*7)`` array."""
    if not segments:
        return np.empty((0, 0))
    stack = np.stack([np.asarray(s.samples, dtype=np.float64) for s in segments])
    bad = ~np.isfinite(stack)
    if bad.any():
        s_idx, ch = np.argwhere(bad)[0][:2]
        raise DataError(f"non-finite sample value in segment {int(s_idx)}, channel {int(ch)}")
    n_seg, n_ch, length = stack.shape
    stats = kernels.window_stats(stack.reshape(n_seg * n_ch, length))
    return stats.reshape(n_seg, n_ch * N_STATS)


def _as_matrix(features):
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features).astype(np.float64, copy=False)
    return np.vstack([f.values if isinstance(f, FeatureVector) else f for f in features]).astype(np.float64)


def fit_normalizer(features):
    x = _as_matrix(features) if len(features) else np.empty((0, 0))
    if x.shape[0] < 2:
        raise ParameterError("fitting a normaliser needs at least two feature vectors")
    return NormStats(x.mean(axis=0), x.std(axis=0))


def apply_normalizer(stats, features):
    """Z-score each dimension; zero-variance dimensions are only centred."""
    if len(features) == 0:
        raise ParameterError("nothing to normalise")
    x = _as_matrix(features)
    if x.shape[1] != stats.mean.shape[0]:
        raise ParameterError(f"feature width {x.shape[1]} != normaliser width {stats.mean.shape[0]}")
    scale = np.where(stats.std > 0, stats.std, 1.0)
    z = (x - stats.mean) / scale
    if isinstance(features, np.ndarray):
        return z
    return [FeatureVector(z[i], getattr(f, "segment_index", i)) for i, f in enumerate(features)]


def write_feature_csv(matrix, path, segment_indices=None):
    matrix = np.asarray(matrix)
    if segment_indices is None:
        segment_indices = range(matrix.shape[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_index"] + [f"f{j}" for j in range(matrix.shape[1])])
        for i, row in zip(segment_indices, matrix):
            w.writerow([int(i)] + [repr(float(v)) for v in row])


def read_feature_csv(path):
    """Returns ``(segment_indices, matrix)``."""
    idx, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "segment_index":
            raise ParseError("feature CSV must start with a segment_index column", line=1, path=path)
        for line, row in enumerate(reader, start=2):
            try:
                idx.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ParseError("malformed feature row", line=line, path=path) from None
    return np.asarray(idx, dtype=np.int64), np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
