"""Reconstruction, consistency and contrastive loss terms and the two joint objectives.

Batch builders return per-row tensors so the trainer can log each term;
the scalar helpers below them are the per-sample forms.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .engine import Tensor, as_tensor, neighbor_sq_error, pair_distance, row_sq_norm
from .errors import ContractError, ParameterError
from .model import decode_graph, encode_graph

TERMS = ("ae", "tc", "fc", "lc")


@dataclass
class LossWeights:
    alpha: float = 0.25
    beta: float = 0.25
    gamma: float = 0.0
    margin: float = 1.0

    def validate(self, stage):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ParameterError(f"loss weights must be non-negative: {self}")
        if not self.margin > 0:
            raise ParameterError(f"margin must be positive, got {self.margin}")
        total = self.alpha + self.beta + (self.gamma if stage == 2 else 0.0)
        if total > 1 + 1e-12:
            raise ParameterError(f"stage-{stage} weights sum to {total} > 1")
        if stage == 1 and self.gamma != 0:
            raise ParameterError("gamma has no role in stage 1")
        return self

    def to_dict(self):
        return asdict(self)


STAGE1_DEFAULTS = LossWeights(alpha=0.25, beta=0.25, gamma=0.0, margin=1.0)
STAGE2_DEFAULTS = LossWeights(alpha=0.15, beta=0.15, gamma=0.5, margin=1.0)


# ------------------------------------------------------------ batch terms

def ae_terms(x, x_rec):
    """``||x - x_rec||^2`` per row."""
    return neighbor_sq_error(x_rec, np.asarray(x.data if isinstance(x, Tensor) else x))


def consistency_terms(x_rec, neighbor_targets, mask):
    """Mean squared distance from each reconstruction to its neighbours' inputs."""
    return neighbor_sq_error(x_rec, neighbor_targets, mask)


def contrastive_terms(e_a, e_b, y, margin):
    """Per-pair ``y * D^2 / 2 + (1 - y) * max(0, margin - D)^2 / 2``."""
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("pair flags must be 0 or 1")
    if not margin > 0:
        raise ParameterError("margin must be positive")
    diff = as_tensor(e_a) - as_tensor(e_b)
    similar = row_sq_norm(diff) * (0.5 * y)
    dist = pair_distance(as_tensor(e_a), as_tensor(e_b))
    hinge = (margin - dist).relu()
    dissimilar = hinge.square() * (0.5 * (1.0 - y))
    return similar + dissimilar


# ------------------------------------------------------- scalar per-sample

def _vec(v):
    return np.atleast_2d(np.asarray(v, dtype=np.float64))


def recon_loss(x, x_rec):
    x, x_rec = _vec(x), _vec(x_rec)
    if x.shape != x_rec.shape:
        raise ContractError(f"input {x.shape} and reconstruction {x_rec.shape} differ")
    return float(ae_terms(x, Tensor(x_rec)).data.sum())


def _neighbor_loss(neighbors, x_rec):
    x_rec = _vec(x_rec)
    nb = [np.asarray(v, dtype=np.float64) for v in neighbors]
    if not nb:
        return 0.0
    targets = np.stack(nb)[None, :, :]
    if targets.shape[2] != x_rec.shape[1]:
        raise ContractError("neighbour and reconstruction widths differ")
    return float(consistency_terms(Tensor(x_rec), targets, np.ones((1, len(nb)))).data[0])


def temporal_consistency_loss(neighbors, x_rec):
    """Mean of ``||x_j - x_rec||^2`` over the temporal neighbours (0 when there are none)."""
    return _neighbor_loss(neighbors, x_rec)


def feature_consistency_loss(neighbors, x_rec):
    return _neighbor_loss(neighbors, x_rec)


def label_consistency_loss(e_a, e_b):
    e_a, e_b = _vec(e_a), _vec(e_b)
    if e_a.shape != e_b.shape:
        raise ContractError("embedding widths differ")
    return float(row_sq_norm(Tensor(e_a - e_b)).data.sum())


def contrastive_loss(e_a, e_b, y, margin=1.0):
    """Summed contrastive loss over one pair or a batch of pairs."""
    e_a, e_b = _vec(e_a), _vec(e_b)
    if e_a.shape != e_b.shape:
        raise ContractError("embedding widths differ")
    y = np.atleast_1d(np.asarray(y))
    return float(contrastive_terms(e_a, e_b, y, margin).data.sum())


def combine_stage1(ae, tc, fc, w):
    return (1.0 - w.alpha - w.beta) * ae + w.alpha * tc + w.beta * fc


def combine_stage2(ae_a, ae_b, tc_a, tc_b, fc_a, fc_b, lc, w):
    rest = 1.0 - w.alpha - w.beta - w.gamma
    return rest * (ae_a + ae_b) + w.alpha * (tc_a + tc_b) + w.beta * (fc_a + fc_b) + w.gamma * lc


def stage1_loss(x, x_rec, temporal_nb, feature_nb, w, reduction="mean"):
    """Stage-1 objective for one sample (neighbour lists of vectors) or a batch.

    For a batch pass ``x``/``x_rec`` as ``(B, D)`` and each neighbour argument
    as ``(targets (B, M, D), mask (B, M))``.
    """
    w.validate(1)
    x, x_rec = _vec(x), _vec(x_rec)
    if x.shape != x_rec.shape:
        raise ContractError("input and reconstruction differ in shape")
    rec = Tensor(x_rec)
    t_targets, t_mask = _as_targets(temporal_nb, x.shape)
    f_targets, f_mask = _as_targets(feature_nb, x.shape)
    total = combine_stage1(
        ae_terms(x, rec), consistency_terms(rec, t_targets, t_mask), consistency_terms(rec, f_targets, f_mask), w
    )
    return _reduce(total.data, reduction)


def stage2_loss(x_a, x_b, rec_a, rec_b, nb_a, nb_b, e_a, e_b, y, w, reduction="mean"):
    """Stage-2 objective for pairs; ``nb_a``/``nb_b`` are ``(temporal, feature)`` neighbour specs."""
    w.validate(2)
    x_a, x_b, rec_a, rec_b = (_vec(v) for v in (x_a, x_b, rec_a, rec_b))
    ra, rb = Tensor(rec_a), Tensor(rec_b)
    ta, tma = _as_targets(nb_a[0], x_a.shape)
    fa, fma = _as_targets(nb_a[1], x_a.shape)
    tb, tmb = _as_targets(nb_b[0], x_b.shape)
    fb, fmb = _as_targets(nb_b[1], x_b.shape)
    total = combine_stage2(
        ae_terms(x_a, ra),
        ae_terms(x_b, rb),
        consistency_terms(ra, ta, tma),
        consistency_terms(rb, tb, tmb),
        consistency_terms(ra, fa, fma),
        consistency_terms(rb, fb, fmb),
        contrastive_terms(_vec(e_a), _vec(e_b), np.atleast_1d(y), w.margin),
        w,
    )
    return _reduce(total.data, reduction)


def _as_targets(spec, shape):
    if isinstance(spec, tuple) and len(spec) == 2 and np.asarray(spec[0]).ndim == 3:
        return np.asarray(spec[0], dtype=np.float64), np.asarray(spec[1], dtype=np.float64)
    nb = [np.asarray(v, dtype=np.float64) for v in spec]
    if shape[0] != 1:
        raise ContractError("batched input needs (targets, mask) neighbour arrays")
    if not nb:
        return np.zeros((1, 1, shape[1])), np.zeros((1, 1))
    return np.stack(nb)[None], np.ones((1, len(nb)))


def _reduce(values, reduction):
    if reduction == "mean":
        return float(values.mean())
    if reduction == "sum":
        return float(values.sum())
    raise ParameterError(f"unknown reduction {reduction!r}")


# ------------------------------------------------------ graph objectives

@dataclass
class Batch:
    """Inputs of one branch: features and padded neighbour targets."""

    x: np.ndarray  # (B, D)
    t_targets: np.ndarray  # (B, m, D)
    t_mask: np.ndarray  # (B, m)
    f_targets: np.ndarray  # (B, n, D)
    f_mask: np.ndarray  # (B, n)


def _branch(params, p, batch):
    emb = encode_graph(params, p, batch.x)
    rec = decode_graph(params, p, emb)
    ae = ae_terms(batch.x, rec)
    tc = consistency_terms(rec, batch.t_targets, batch.t_mask)
    fc = consistency_terms(rec, batch.f_targets, batch.f_mask)
    return emb, ae, tc, fc


def stage1_objective(params, p, batch, w, recon_scale=1.0):
    """Minibatch mean of the stage-1 loss; returns ``(loss_tensor, term_means)``.

    ``recon_scale`` multiplies the reconstruction-type terms (ae, tc, fc);
    ``1 / D`` turns their squared norms into per-dimension means. The
    returned term means are always unscaled.
    """
    _, ae, tc, fc = _branch(params, p, batch)
    total = (combine_stage1(ae, tc, fc, w) * recon_scale).mean()
    parts = {"ae": float(ae.data.mean()), "tc": float(tc.data.mean()), "fc": float(fc.data.mean()), "lc": 0.0}
    return total, parts


def stage2_objective(params, p, batch_a, batch_b, y, w, recon_scale=1.0):
    """Minibatch mean of the stage-2 loss over pairs; both branches share ``p``.

    ``recon_scale`` applies to the reconstruction-type terms only, never to
    the contrastive term.
    """
    e_a, ae_a, tc_a, fc_a = _branch(params, p, batch_a)
    e_b, ae_b, tc_b, fc_b = _branch(params, p, batch_b)
    lc = contrastive_terms(e_a, e_b, y, w.margin)
    recon = combine_stage2(ae_a, ae_b, tc_a, tc_b, fc_a, fc_b, 0.0, w)
    total = (recon * recon_scale + lc * w.gamma).mean()
    parts = {
        "ae": float((ae_a.data + ae_b.data).mean()),
        "tc": float((tc_a.data + tc_b.data).mean()),
        "fc": float((fc_a.data + fc_b.data).mean()),
        "lc": float(lc.data.mean()),
    }
    return total, parts
