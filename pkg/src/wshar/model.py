"""Residual fully connected autoencoder with a shared-weight (siamese) encoder."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import Tensor, activate, as_tensor, parameter
from .errors import ContractError, ParameterError, ParseError

CHECKPOINT_FORMAT = "wshar-checkpoint"
CHECKPOINT_VERSION = 1
DEFAULT_HIDDEN = (128, 64)
DEFAULT_EMBEDDING_DIM = 32


@dataclass
class ModelParams:
    encoder_widths: list
    decoder_widths: list
    activation: str = "relu"
    arrays: dict = field(default_factory=dict)  # name -> ndarray, in declared order

    @property
    def input_dim(self):
        return self.encoder_widths[0]

    @property
    def embedding_dim(self):
        return self.encoder_widths[-1]

    def names(self):
        return list(self.arrays)

    def n_parameters(self):
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self):
        return ModelParams(
            list(self.encoder_widths),
            list(self.decoder_widths),
            self.activation,
            {k: v.copy() for k, v in self.arrays.items()},
        )

    def tensors(self):
        """Fresh parameter tensors wrapping copies of the arrays."""
        return {k: parameter(v.copy(), name=k) for k, v in self.arrays.items()}

    def equal(self, other):
        return (
            self.encoder_widths == other.encoder_widths
            and self.decoder_widths == other.decoder_widths
            and self.activation == other.activation
            and list(self.arrays) == list(other.arrays)
            and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays)
        )


def shortcut_is_identity(width_in, width_out):
    return width_in == width_out


def block_names(prefix, width_in, width_out):
    names = [f"{prefix}.w1", f"{prefix}.b1", f"{prefix}.w2", f"{prefix}.b2"]
    if not shortcut_is_identity(width_in, width_out):
        names += [f"{prefix}.ws", f"{prefix}.bs"]
    return names


def _glorot(rng, fan_in, fan_out, gain=1.0):
    limit = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _layer_specs(encoder_widths, decoder_widths):
    for side, widths in (("enc", encoder_widths), ("dec", decoder_widths)):
        for k in range(len(widths) - 1):
            yield f"{side}{k}", widths[k], widths[k + 1]


def init_params(widths, seed, decoder_widths=None, activation="relu", init_gain=1.0):
    """Glorot-uniform weights and zero biases for encoder ``widths`` and a mirrored decoder.

    ``widths`` runs from the feature dimension to the embedding dimension;
    each consecutive pair of widths is one residual block.
    """
    widths = [int(w) for w in widths]
    decoder_widths = list(reversed(widths)) if decoder_widths is None else [int(w) for w in decoder_widths]
    if len(widths) < 2 or len(decoder_widths) < 2:
        raise ParameterError("need at least one encoder block and one decoder block")
    if any(w < 1 for w in widths + decoder_widths):
        raise ParameterError(f"layer widths must be positive: {widths} / {decoder_widths}")
    if decoder_widths[0] != widths[-1] or decoder_widths[-1] != widths[0]:
        raise ParameterError("decoder must map the embedding width back to the input width")
    if activation not in ("relu", "leaky_relu"):
        raise ParameterError(f"unsupported activation {activation!r}")
    if not init_gain > 0:
        raise ParameterError("init_gain must be positive")
    rng = np.random.default_rng(seed)
    arrays = {}
    for prefix, w_in, w_out in _layer_specs(widths, decoder_widths):
        arrays[f"{prefix}.w1"] = _glorot(rng, w_in, w_out, init_gain)
        arrays[f"{prefix}.b1"] = np.zeros(w_out)
        arrays[f"{prefix}.w2"] = _glorot(rng, w_out, w_out, init_gain)
        arrays[f"{prefix}.b2"] = np.zeros(w_out)
        if not shortcut_is_identity(w_in, w_out):
            arrays[f"{prefix}.ws"] = _glorot(rng, w_in, w_out, init_gain)
            arrays[f"{prefix}.bs"] = np.zeros(w_out)
    return ModelParams(widths, decoder_widths, activation, arrays)


def residual_block(h, p, prefix, activation, outer_activation):
    """``act(affine2(act(affine1(h)))) + shortcut(h)``."""
    inner = activate(h @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"], activation)
    out = activate(inner @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"], outer_activation)
    if f"{prefix}.ws" in p:
        skip = h @ p[f"{prefix}.ws"] + p[f"{prefix}.bs"]
    else:
        skip = h
    return out + skip


def _run(h, p, side, widths, activation):
    n_blocks = len(widths) - 1
    for k in range(n_blocks):
        # the embedding and the reconstruction are left unconstrained
        outer = "linear" if k == n_blocks - 1 else activation
        h = residual_block(h, p, f"{side}{k}", activation, outer)
    return h


def _as_batch(x, width, what):
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ContractError(f"{what} has width {arr.shape[-1]}, model expects {width}")
    return (x if isinstance(x, Tensor) and not single else Tensor(arr)), single


def encode_graph(params, p, x):
    """Encoder forward over tensors ``p`` (graph-building form)."""
    xt, _ = _as_batch(x, params.input_dim, "input")
    return _run(xt, p, "enc", params.encoder_widths, params.activation)


def decode_graph(params, p, e):
    et, _ = _as_batch(e, params.embedding_dim, "embedding")
    return _run(et, p, "dec", params.decoder_widths, params.activation)


def _const(params):
    return {k: as_tensor(v) for k, v in params.arrays.items()}


def encode(params, x):
    """Embedding(s) of one feature vector or a ``(B, D)`` batch."""
    single = np.asarray(x.data if isinstance(x, Tensor) else x).ndim == 1
    out = encode_graph(params, _const(params), x).data
    return out[0] if single else out


def decode(params, e):
    single = np.asarray(e).ndim == 1
    out = decode_graph(params, _const(params), e).data
    return out[0] if single else out


def reconstruct(params, x):
    return decode(params, encode(params, x))


def encode_pair(params, x_a, x_b):
    """Siamese encoding: both branches read the same parameter tensors."""
    p = _const(params)
    e_a = encode_graph(params, p, x_a).data
    e_b = encode_graph(params, p, x_b).data
    if np.asarray(x_a).ndim == 1:
        return e_a[0], e_b[0]
    return e_a, e_b


# ------------------------------------------------------------ checkpoints

def _arrays_to_json(arrays):
    return {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in arrays.items()}


def _arrays_from_json(d, order):
    return {k: np.asarray(d[k]["data"], dtype=np.float64).reshape(d[k]["shape"]) for k in order}


def checkpoint_dict(params, norm_stats=None, config=None, state=None):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoder_widths": list(params.encoder_widths),
        "decoder_widths": list(params.decoder_widths),
        "activation": params.activation,
        "param_order": params.names(),
        "params": _arrays_to_json(params.arrays),
        "norm_stats": None if norm_stats is None else norm_stats.to_dict(),
        "config": config,
        "state": state,
    }


def save_checkpoint(path, params, norm_stats=None, config=None, state=None):
    """Write a canonical JSON checkpoint (floats in shortest round-trip form)."""
    text = json.dumps(checkpoint_dict(params, norm_stats, config, state), sort_keys=True, separators=(",", ":"))
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def params_from_dict(d):
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"not a {CHECKPOINT_FORMAT} file")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {d.get('version')}")
    return ModelParams(
        list(d["encoder_widths"]),
        list(d["decoder_widths"]),
        d["activation"],
        _arrays_from_json(d["params"], d["param_order"]),
    )


def load_checkpoint(path):
    """Returns ``(params, norm_stats, config, state)``."""
    from .features import NormStats

    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"corrupt checkpoint ({exc})", path=path) from exc
    params = params_from_dict(d)
    norm = NormStats.from_dict(d["norm_stats"]) if d.get("norm_stats") else None
    return params, norm, d.get("config"), d.get("state")
