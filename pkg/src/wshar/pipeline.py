"""End-to-end helpers chaining segmentation, features, training and evaluation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .cluster_eval import cluster_accuracy, kmeans
from .dataset import make_budget_split, make_weak_pairs, segment_streams
from .errors import EmptyInputError
from .features import apply_normalizer, feature_matrix, fit_normalizer
from .model import encode
from .neighbors import build_index
from .training import TrainingData, train_stage1, train_stage2


@dataclass
class Prepared:
    segments: list
    raw: np.ndarray  # (S, D) unnormalised features
    norm: object
    x: np.ndarray  # normalised features
    index: object
    labels: list

    @property
    def n_classes(self):
        return len({v for v in self.labels if v is not None})


def prepare(streams, window_seconds, step_seconds, m=2, n=5):
    segments = segment_streams(streams, window_seconds, step_seconds)
    if not segments:
        raise EmptyInputError("no complete window in any stream")
    raw = feature_matrix(segments)
    norm = fit_normalizer(raw)
    x = apply_normalizer(norm, raw)
    return Prepared(segments, raw, norm, x, build_index(segments, x, m, n), [s.label for s in segments])


def reindex(prepared, m, n):
    return dataclasses.replace(prepared, index=build_index(prepared.segments, prepared.x, m, n))


def evaluate(params, x, labels, k=None, seed=0, restarts=10):
    emb = encode(params, x)
    k = k or len(set(labels))
    assignment = kmeans(emb, k, seed=seed, restarts=restarts)
    return cluster_accuracy(assignment, labels, k), emb


def run_budgets(prepared, config, budgets, seed, restarts=10, stage1_params=None):
    """Stage 1 once, then one stage-2 fine-tune per budget; returns ACC per run name."""
    data = TrainingData(prepared.x, prepared.index)
    results = {}
    if stage1_params is None:
        stage1_params, rep1 = train_stage1(data, None, config)
        start = rep1.end_step
    else:
        start = 0
    results["stage1"] = evaluate(stage1_params, prepared.x, prepared.labels, seed=seed, restarts=restarts)[0].acc
    for b in budgets:
        split = make_budget_split(prepared.labels, b, seed)
        pairs = make_weak_pairs(split, config.pairs_per_epoch, config.positive_ratio, seed)
        p2, _ = train_stage2(stage1_params, data, None, pairs, config, start_step=start)
        results[b] = evaluate(p2, prepared.x, prepared.labels, seed=seed, restarts=restarts)[0].acc
    return results
