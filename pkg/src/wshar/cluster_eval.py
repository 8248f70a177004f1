"""k-means on embeddings and clustering accuracy under the best cluster-to-class mapping."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .errors import ContractError, ParameterError

MAX_ITER = 300


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_trace: tuple = ()


@dataclass
class EvalReport:
    acc: float
    confusion: list  # k x k, rows = clusters, columns = classes (sorted class ids, zero-padded)
    mapping: dict  # cluster id -> class id (None when the cluster is matched to a padding column)
    per_class_recall: dict
    classes: list
    n: int

    def to_dict(self):
        return {
            "acc": self.acc,
            "confusion": self.confusion,
            "mapping": {str(k): v for k, v in self.mapping.items()},
            "per_class_recall": {str(k): v for k, v in self.per_class_recall.items()},
            "classes": self.classes,
            "n": self.n,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _plusplus_init(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    _, d2 = kernels.nearest_centroid(x, centers[:1])
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[c] = x[pick]
        _, d2 = kernels.nearest_centroid(x, centers[: c + 1])
    return centers


def _lloyd(x, centers, max_iter):
    labels, d2 = kernels.nearest_centroid(x, centers)
    trace = [float(d2.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=len(centers))
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        filled = counts > 0
        new_centers[filled] = sums[filled] / counts[filled, None]
        # empty cluster: reseed at the point farthest from its current centroid
        taken = set()
        for c in np.flatnonzero(~filled):
            order = np.argsort(-d2, kind="stable")
            far = next(int(i) for i in order if int(i) not in taken)
            taken.add(far)
            new_centers[c] = x[far]
            d2[far] = 0.0
        new_labels, d2 = kernels.nearest_centroid(x, new_centers)
        centers = new_centers
        trace.append(float(d2.sum()))
        if np.array_equal(new_labels, labels) and filled.all():
            labels = new_labels
            break
        labels = new_labels
    return labels, centers, float(d2.sum()), it, tuple(trace)


def kmeans(embeddings, k, seed=0, restarts=10, max_iter=MAX_ITER):
    """Lloyd's algorithm with k-means++ seeding; the lowest-inertia restart wins."""
    x = np.ascontiguousarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError("embeddings must be a 2-D array")
    if not (2 <= k <= x.shape[0]):
        raise ParameterError(f"k={k} must lie in [2, {x.shape[0]}]")
    if restarts < 1:
        raise ParameterError("restarts must be >= 1")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        centers = _plusplus_init(x, k, rng)
        labels, centers, inertia, n_iter, trace = _lloyd(x, centers, max_iter)
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(labels, centers, inertia, n_iter, trace)
    return best


def confusion_matrix(assignment, true_labels, k=None):
    clusters = np.asarray(getattr(assignment, "labels", assignment), dtype=np.int64)
    y = np.asarray(true_labels)
    if clusters.shape[0] != y.shape[0]:
        raise ContractError(f"{clusters.shape[0]} assignments but {y.shape[0]} labels")
    classes = sorted(set(y.tolist()))
    k = int(clusters.max()) + 1 if k is None else k
    if len(classes) > k:
        raise ParameterError(f"{len(classes)} classes cannot map one-to-one onto {k} clusters")
    col = {c: j for j, c in enumerate(classes)}
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (clusters, np.array([col[v] for v in y.tolist()], dtype=np.int64)), 1)
    return conf, classes


def best_mapping_accuracy(confusion):
    """Optimal one-to-one matching on a square count matrix: ``(correct, rows, cols)``."""
    conf = np.asarray(confusion)
    rows, cols = linear_sum_assignment(conf, maximize=True)
    return int(conf[rows, cols].sum()), rows, cols


def cluster_accuracy(assignment, true_labels, k=None):
    """ACC and its supporting confusion matrix, mapping and per-class recall."""
    clusters = np.asarray(getattr(assignment, "labels", assignment), dtype=np.int64)
    if k is None:
        centroids = getattr(assignment, "centroids", None)
        k = centroids.shape[0] if centroids is not None else int(clusters.max()) + 1
    conf, classes = confusion_matrix(clusters, true_labels, k)
    total = int(conf.sum())
    if total == 0:
        raise ContractError("nothing to evaluate")
    correct, rows, cols = best_mapping_accuracy(conf)
    mapping = {int(r): (classes[c] if c < len(classes) else None) for r, c in zip(rows, cols)}
    col_totals = conf.sum(axis=0)
    recall = {}
    for r, c in zip(rows, cols):
        if c < len(classes):
            recall[classes[c]] = float(conf[r, c] / col_totals[c]) if col_totals[c] else 0.0
    recall = {c: recall[c] for c in classes}
    return EvalReport(
        acc=correct / total,
        confusion=conf.tolist(),
        mapping=mapping,
        per_class_recall=recall,
        classes=list(classes),
        n=total,
    )


def export_embeddings(embeddings, path, labels=None, segment_indices=None):
    """CSV ``segment_index, e0..e{d-1}[, label]`` with round-trip float text."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if segment_indices is None:
        segment_indices = range(emb.shape[0])
    header = ["segment_index"] + [f"e{j}" for j in range(emb.shape[1])]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, (idx, row) in enumerate(zip(segment_indices, emb)):
            out = [int(idx)] + [repr(float(v)) for v in row]
            if labels is not None:
                out.append("" if labels[i] is None else int(labels[i]))
            w.writerow(out)


def read_embeddings(path):
    """Returns ``(segment_indices, embeddings, labels_or_None)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_label = header[-1] == "label"
        idx, rows, labels = [], [], []
        for row in reader:
            idx.append(int(row[0]))
            end = -1 if has_label else len(row)
            rows.append([float(v) for v in row[1:end]])
            if has_label:
                labels.append(int(row[-1]) if row[-1] != "" else None)
    d = len(header) - 1 - int(has_label)
    return np.asarray(idx), np.asarray(rows, dtype=np.float64).reshape(len(rows), d), (labels if has_label else None)
