"""Two-stage training: self-supervised stage 1, weak-pair fine-tuning in stage 2."""
from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import backward, lr_schedule, sgd_step
from .errors import ConstraintError, ContractError, NumericError, ParameterError
from .losses import STAGE1_DEFAULTS, STAGE2_DEFAULTS, Batch, LossWeights, stage1_objective, stage2_objective
from .model import DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN, ModelParams, checkpoint_dict, init_params, params_from_dict


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    validation_fraction: float = 0.1
    m: int = 2
    n: int = 5
    stage1: LossWeights = field(default_factory=lambda: dataclasses.replace(STAGE1_DEFAULTS))
    stage2: LossWeights = field(default_factory=lambda: dataclasses.replace(STAGE2_DEFAULTS))
    hidden: tuple = DEFAULT_HIDDEN
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    activation: str = "relu"
    base_lr: float = 0.05
    decay_rate: float = 0.95
    decay_steps: int = 10000
    pairs_per_epoch: int = 1024
    positive_ratio: float = 0.5
    stage2_max_epochs: Optional[int] = None  # falls back to max_epochs
    # weight on the reconstruction-type terms in the optimised objective; None means 1 / feature width
    recon_scale: Optional[float] = None
    init_gain: float = 1.0
    # global gradient-norm ceiling per step; None disables clipping
    grad_clip: Optional[float] = 5.0

    def validate(self):
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.patience < 1:
            raise ParameterError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ParameterError("max_epochs must be >= 1")
        if not (0 < self.validation_fraction < 1):
            raise ParameterError("validation_fraction must lie in (0, 1)")
        if self.m < 1 or self.n < 1:
            raise ParameterError("neighbour counts m and n must be >= 1")
        if self.embedding_dim < 1 or any(h < 1 for h in self.hidden):
            raise ParameterError("layer widths must be positive")
        if self.recon_scale is not None and not self.recon_scale > 0:
            raise ParameterError("recon_scale must be positive")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ParameterError("grad_clip must be positive")
        self.stage1.validate(1)
        self.stage2.validate(2)
        return self

    def widths(self, input_dim):
        return [int(input_dim), *(int(h) for h in self.hidden), int(self.embedding_dim)]

    def scale_for(self, input_dim):
        return 1.0 / input_dim if self.recon_scale is None else self.recon_scale

    def lr(self, step):
        return lr_schedule(step, self.base_lr, self.decay_rate, self.decay_steps)

    # flat key/value form: nested loss weights use dotted keys, e.g. ``stage2.gamma``
    def to_flat(self):
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, LossWeights):
                for k, x in v.to_dict().items():
                    out[f"{f.name}.{k}"] = x
            elif isinstance(v, tuple):
                out[f.name] = list(v)
            else:
                out[f.name] = v
        return out

    @classmethod
    def from_flat(cls, flat):
        cfg = cls()
        return cfg.updated(flat)

    def updated(self, flat):
        cfg = dataclasses.replace(
            self, stage1=dataclasses.replace(self.stage1), stage2=dataclasses.replace(self.stage2)
        )
        names = {f.name: f for f in dataclasses.fields(TrainConfig)}
        for key, value in flat.items():
            if "." in key:
                stage, attr = key.split(".", 1)
                if stage not in ("stage1", "stage2") or attr not in LossWeights.__dataclass_fields__:
                    raise ParameterError(f"unknown config key {key!r}")
                setattr(getattr(cfg, stage), attr, float(value))
            elif key in names:
                current = getattr(cfg, key)
                if key == "hidden":
                    value = tuple(int(h) for h in value)
                elif key == "stage2_max_epochs":
                    value = None if value is None else int(value)
                elif key in ("recon_scale", "grad_clip"):
                    value = None if value is None else float(value)
                elif isinstance(current, bool):
                    value = bool(value)
                elif isinstance(current, int):
                    if float(value) != int(float(value)):
                        raise ParameterError(f"{key} must be an integer, got {value!r}")
                    value = int(float(value))
                elif isinstance(current, float):
                    value = float(value)
                setattr(cfg, key, value)
            else:
                raise ParameterError(f"unknown config key {key!r}")
        return cfg


def load_config(path, overrides=None):
    """Read a flat JSON object of config keys and apply ``overrides`` on top."""
    with open(path) as fh:
        flat = json.load(fh)
    if not isinstance(flat, dict):
        raise ParameterError("config file must hold a flat JSON object")
    cfg = TrainConfig.from_flat(flat)
    if overrides:
        cfg = cfg.updated(overrides)
    return cfg


@dataclass
class TrainReport:
    stage: int
    epochs: list = field(default_factory=list)  # one dict per epoch run
    lr_trace: list = field(default_factory=list)  # (global_step, lr) for every update
    initial_val: Optional[dict] = None
    best_epoch: int = 0
    stopping_epoch: int = 0
    start_step: int = 0
    end_step: int = 0
    wall_time: float = 0.0
    empty_temporal: int = 0
    empty_feature: int = 0
    updated_segments: set = field(default_factory=set, repr=False)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["updated_segments"] = sorted(self.updated_segments)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["updated_segments"] = set(d.get("updated_segments", []))
        d["lr_trace"] = [tuple(x) for x in d.get("lr_trace", [])]
        return cls(**d)


class EarlyStopping:
    """Stop once the validation loss has not decreased for ``patience`` epochs."""

    def __init__(self, patience, best=math.inf, best_epoch=0, since_best=0):
        self.patience = patience
        self.best = best
        self.best_epoch = best_epoch
        self.since_best = since_best

    def update(self, epoch, value):
        """Record ``value`` for ``epoch``; returns (improved, should_stop)."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.since_best = 0
            return True, False
        self.since_best += 1
        return False, self.since_best >= self.patience


# ---------------------------------------------------------------- data prep

class TrainingData:
    """Normalised features plus padded neighbour lookups, shared by both stages."""

    def __init__(self, features, index):
        self.x = np.ascontiguousarray(features, dtype=np.float64)
        size = self.x.shape[0]
        if len(index) != size:
            raise ContractError(f"neighbour index covers {len(index)} segments, features {size}")
        self.t_idx, self.t_mask = _pad(index.temporal)
        self.f_idx, self.f_mask = _pad(index.feature)
        self.empty_temporal = int((self.t_mask.sum(axis=1) == 0).sum())
        self.empty_feature = int((self.f_mask.sum(axis=1) == 0).sum())

    def __len__(self):
        return self.x.shape[0]

    def batch(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return Batch(
            x=self.x[rows],
            t_targets=self.x[self.t_idx[rows]],
            t_mask=self.t_mask[rows],
            f_targets=self.x[self.f_idx[rows]],
            f_mask=self.f_mask[rows],
        )


def _pad(lists):
    width = max([len(v) for v in lists] + [1])
    idx = np.zeros((len(lists), width), dtype=np.int64)
    mask = np.zeros((len(lists), width))
    for i, nb in enumerate(lists):
        idx[i, : len(nb)] = nb
        mask[i, : len(nb)] = 1.0
    return idx, mask


def validation_split(size, fraction, seed):
    """``(train_rows, val_rows)``; at least one row lands on each side."""
    n_val = min(max(int(round(fraction * size)), 1), size - 1)
    perm = np.random.default_rng([seed, 0x5EED]).permutation(size)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def epoch_order(rows, seed, stage, epoch):
    return np.random.default_rng([seed, stage, epoch]).permutation(rows)


def sample_batch(pairs, batch_size, seed, epoch):
    """Split ``pairs`` into shuffled minibatches, spreading positives evenly.

    Deterministic in ``(seed, epoch)``; every pair appears exactly once.
    """
    if not pairs:
        raise ParameterError("no pairs to batch")
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    rng = np.random.default_rng([seed, 2, epoch])
    pos = [p for p in pairs if p.y == 1]
    neg = [p for p in pairs if p.y == 0]
    pos = [pos[i] for i in rng.permutation(len(pos))]
    neg = [neg[i] for i in rng.permutation(len(neg))]
    n_batches = -(-len(pairs) // batch_size)
    batches = []
    for j in range(n_batches):
        chunk = pos[j * len(pos) // n_batches:(j + 1) * len(pos) // n_batches]
        chunk += neg[j * len(neg) // n_batches:(j + 1) * len(neg) // n_batches]
        batches.append([chunk[i] for i in rng.permutation(len(chunk))])
    return batches


# ------------------------------------------------------------------ trainer

@dataclass
class TrainState:
    """Everything needed to continue a stage after an interruption."""

    stage: int
    epoch: int
    global_step: int
    params: ModelParams
    best_params: ModelParams
    stopper: EarlyStopping
    report: TrainReport
    done: bool = False

    def to_dict(self):
        return {
            "stage": self.stage,
            "epoch": self.epoch,
            "global_step": self.global_step,
            "params": checkpoint_dict(self.params),
            "best_params": checkpoint_dict(self.best_params),
            "stopper": {
                "patience": self.stopper.patience,
                "best": self.stopper.best if math.isfinite(self.stopper.best) else None,
                "best_epoch": self.stopper.best_epoch,
                "since_best": self.stopper.since_best,
            },
            "report": self.report.to_dict(),
            "done": self.done,
        }

    @classmethod
    def from_dict(cls, d):
        s = d["stopper"]
        return cls(
            stage=d["stage"],
            epoch=d["epoch"],
            global_step=d["global_step"],
            params=params_from_dict(d["params"]),
            best_params=params_from_dict(d["best_params"]),
            stopper=EarlyStopping(
                s["patience"], math.inf if s["best"] is None else s["best"], s["best_epoch"], s["since_best"]
            ),
            report=TrainReport.from_dict(d["report"]),
            done=d["done"],
        )


def _check_finite(total, parts, step):
    for term, value in parts.items():
        if not math.isfinite(value):
            raise NumericError(f"non-finite {term} loss at step {step}", term=term, step=step)
    if not math.isfinite(total):
        raise NumericError(f"non-finite total loss at step {step}", term="total", step=step)


def clip_gradients(grads, max_norm):
    """Rescale grads jointly so their global L2 norm is at most max_norm."""
    if max_norm is None:
        return grads
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if norm <= max_norm:
        return grads
    return [g * (max_norm / norm) for g in grads]


def _apply_update(p, lr, max_norm=None):
    names = list(p)
    grads = [p[k].grad if p[k].grad is not None else np.zeros_like(p[k].data) for k in names]
    grads = clip_gradients(grads, max_norm)
    new = sgd_step([p[k].data for k in names], grads, lr)
    for k, arr in zip(names, new):
        p[k].data = arr


def _snapshot(params, p):
    return ModelParams(
        list(params.encoder_widths), list(params.decoder_widths), params.activation,
        {k: p[k].data.copy() for k in params.arrays},
    )


def _mean_parts(acc, count):
    return {k: v / max(count, 1) for k, v in acc.items()}


def _run_stage(stage, params, config, epoch_batches, step_fn, val_fn, max_epochs, start_step, resume, on_epoch_end):
    t0 = time.perf_counter()
    if resume is not None:
        if resume.stage != stage:
            raise ContractError(f"resume state belongs to stage {resume.stage}, not {stage}")
        state = resume
    else:
        report = TrainReport(stage=stage, start_step=start_step)
        report.initial_val = val_fn(params.tensors())
        state = TrainState(stage, 0, start_step, params.copy(), params.copy(),
                           EarlyStopping(config.patience), report)
    report = state.report
    p = state.params.tensors()
    while not state.done and state.epoch < max_epochs:
        epoch = state.epoch + 1
        acc = {"total": 0.0, "ae": 0.0, "tc": 0.0, "fc": 0.0, "lc": 0.0}
        n_steps = 0
        lr_first = config.lr(state.global_step)
        for batch in epoch_batches(epoch):
            lr = config.lr(state.global_step)
            loss, parts, rows = step_fn(p, batch)
            _check_finite(loss.item(), parts, state.global_step)
            backward(loss)
            _apply_update(p, lr, config.grad_clip)
            report.lr_trace.append((state.global_step, lr))
            report.updated_segments.update(int(r) for r in rows)
            acc["total"] += loss.item()
            for k, v in parts.items():
                acc[k] += v
            state.global_step += 1
            n_steps += 1
        val = val_fn(p)
        _check_finite(val["total"], {k: v for k, v in val.items() if k != "total"}, state.global_step)
        improved, stop = state.stopper.update(epoch, val["total"])
        state.epoch = epoch
        state.params = _snapshot(params, p)
        if improved:
            state.best_params = state.params.copy()
        report.epochs.append({
            "stage": stage,
            "epoch": epoch,
            "global_step": state.global_step,
            "steps": n_steps,
            "lr_first": lr_first,
            "lr_last": config.lr(state.global_step - 1) if n_steps else lr_first,
            "train": _mean_parts(acc, n_steps),
            "val": val,
            "improved": improved,
        })
        report.best_epoch = state.stopper.best_epoch
        report.stopping_epoch = epoch
        report.end_step = state.global_step
        state.done = stop or epoch >= max_epochs
        report.wall_time += time.perf_counter() - t0
        t0 = time.perf_counter()
        if on_epoch_end is not None:
            on_epoch_end(state)
    return state.best_params, report


def train_stage1(features, index, config, params=None, start_step=0, resume=None, on_epoch_end=None):
    """Minimise the stage-1 objective with minibatch SGD and early stopping.

    ``features`` are the normalised feature rows and ``index`` their
    neighbour sets. Returns ``(best_params, report)``; ``resume`` takes a
    :class:`TrainState` written by ``on_epoch_end``.
    """
    config.validate()
    data = features if isinstance(features, TrainingData) else TrainingData(features, index)
    if len(data) < max(config.batch_size, 2):
        raise ParameterError(f"{len(data)} segments is fewer than batch_size={config.batch_size}")
    if params is None:
        params = init_params(config.widths(data.x.shape[1]), config.seed, activation=config.activation,
                             init_gain=config.init_gain)
    train_rows, val_rows = validation_split(len(data), config.validation_fraction, config.seed)
    w = config.stage1
    scale = config.scale_for(data.x.shape[1])
    val_batch = data.batch(val_rows)

    def epoch_batches(epoch):
        order = epoch_order(train_rows, config.seed, 1, epoch)
        for s in range(0, len(order), config.batch_size):
            yield order[s:s + config.batch_size]

    def step_fn(p, rows):
        loss, parts = stage1_objective(params, p, data.batch(rows), w, scale)
        return loss, parts, rows

    def val_fn(p):
        loss, parts = stage1_objective(params, p, val_batch, w, scale)
        return {"total": loss.item(), **parts}

    best, report = _run_stage(1, params, config, epoch_batches, step_fn, val_fn, config.max_epochs,
                              start_step, resume, on_epoch_end)
    report.empty_temporal, report.empty_feature = data.empty_temporal, data.empty_feature
    return best, report


def split_pairs(pairs, val_rows, fraction, seed):
    """Pairs touching a validation segment are held out; if none do, a seeded fraction is."""
    val_set = set(int(v) for v in val_rows)
    train = [q for q in pairs if q.a not in val_set and q.b not in val_set]
    held = [q for q in pairs if q.a in val_set or q.b in val_set]
    if not held:
        n_val = max(1, int(round(fraction * len(pairs))))
        perm = np.random.default_rng([seed, 3]).permutation(len(pairs))
        held = [pairs[i] for i in sorted(perm[:n_val])]
        chosen = set(int(i) for i in perm[:n_val])
        train = [q for i, q in enumerate(pairs) if i not in chosen]
    return train, held


def train_stage2(params, features, index, pairs, config, start_step=0, resume=None, on_epoch_end=None):
    """Fine-tune with the stage-2 objective over weak pairs ``(a, b, y)``.

    Only pair indices and flags are read; class labels never reach this
    function. ``start_step`` continues the learning-rate schedule from
    stage 1.
    """
    config.validate()
    data = features if isinstance(features, TrainingData) else TrainingData(features, index)
    size = len(data)
    for q in pairs:
        if not (0 <= q.a < size and 0 <= q.b < size):
            raise ContractError(f"pair ({q.a}, {q.b}) references a segment outside 0..{size - 1}")
    if not any(q.y == 1 for q in pairs):
        raise ConstraintError("stage 2 needs at least one positive pair")
    if not any(q.y == 0 for q in pairs):
        raise ConstraintError("stage 2 needs at least one negative pair")
    _, val_rows = validation_split(size, config.validation_fraction, config.seed)
    train_pairs, val_pairs = split_pairs(pairs, val_rows, config.validation_fraction, config.seed)
    if not train_pairs:
        raise ConstraintError("every pair touches a validation segment; no pairs left to train on")
    w = config.stage2
    scale = config.scale_for(data.x.shape[1])

    def pair_batches(chunk):
        a = np.array([q.a for q in chunk])
        b = np.array([q.b for q in chunk])
        y = np.array([q.y for q in chunk], dtype=np.float64)
        return data.batch(a), data.batch(b), y, np.concatenate([a, b])

    val_a, val_b, val_y, _ = pair_batches(val_pairs)

    def epoch_batches(epoch):
        yield from sample_batch(train_pairs, config.batch_size, config.seed, epoch)

    def step_fn(p, chunk):
        ba, bb, y, rows = pair_batches(chunk)
        loss, parts = stage2_objective(params, p, ba, bb, y, w, scale)
        return loss, parts, rows

    def val_fn(p):
        loss, parts = stage2_objective(params, p, val_a, val_b, val_y, w, scale)
        return {"total": loss.item(), **parts}

    max_epochs = config.stage2_max_epochs or config.max_epochs
    best, report = _run_stage(2, params, config, epoch_batches, step_fn, val_fn, max_epochs,
                              start_step, resume, on_epoch_end)
    report.empty_temporal, report.empty_feature = data.empty_temporal, data.empty_feature
    return best, report
