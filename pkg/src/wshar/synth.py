"""Synthetic multi-channel activity streams with known class structure.

Each activity class is a Gaussian regime over the channels (class-specific
level, oscillation and noise) whose durations follow a Markov chain with
long dwell times. A second, fast-switching "style" chain and a per-subject
offset add nuisance variation that carries no class information.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import SensorStream


@dataclass
class SynthConfig:
    n_classes: int = 5
    n_streams: int = 4
    seconds_per_stream: float = 660.0
    sample_rate_hz: float = 50.0
    n_channels: int = 6
    class_dwell_s: float = 40.0
    class_sep: float = 1.0
    style_states: int = 6
    style_dwell_s: float = 2.5
    style_scale: float = 1.7
    subject_scale: float = 0.5
    noise: float = 0.5
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def _markov_durations(rng, total, mean_dwell, n_states, rate):
    """State id per sample; dwell times are exponential, jumps go to a different state."""
    out = np.empty(total, dtype=np.int64)
    pos = 0
    state = int(rng.integers(n_states))
    while pos < total:
        length = max(1, int(round(rng.exponential(mean_dwell) * rate)))
        out[pos:pos + length] = state
        pos += length
        if n_states > 1:
            state = (state + 1 + int(rng.integers(n_states - 1))) % n_states
    return out


def generate(config=None):
    """List of labelled :class:`SensorStream` objects."""
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    c, k = cfg.n_channels, cfg.n_classes
    level = rng.normal(0.0, cfg.class_sep, size=(k, c))
    amp = rng.uniform(0.2, 1.5, size=(k, c)) * cfg.class_sep
    freq = rng.uniform(0.5, 3.0, size=(k, c))
    noise = cfg.noise * rng.uniform(0.5, 1.5, size=(k, c))
    style = rng.normal(0.0, cfg.style_scale, size=(cfg.style_states, c))
    n = int(round(cfg.seconds_per_stream * cfg.sample_rate_hz))
    t = np.arange(n) / cfg.sample_rate_hz
    streams = []
    for s in range(cfg.n_streams):
        labels = _markov_durations(rng, n, cfg.class_dwell_s, k, cfg.sample_rate_hz)
        styles = _markov_durations(rng, n, cfg.style_dwell_s, cfg.style_states, cfg.sample_rate_hz)
        subject = rng.normal(0.0, cfg.subject_scale, size=c)
        phase = rng.uniform(0, 2 * np.pi, size=c)
        sig = (
            level[labels]
            + amp[labels] * np.sin(2 * np.pi * freq[labels] * t[:, None] + phase)
            + noise[labels] * rng.standard_normal((n, c))
            + style[styles]
            + subject
        )
        streams.append(
            SensorStream(
                channels={f"ch{j}": sig[:, j] for j in range(c)},
                sample_rate_hz=cfg.sample_rate_hz,
                labels=labels,
                subject_id=f"subject{s}",
            )
        )
    return streams


def schema_for(streams, window_seconds=2.56, step_seconds=1.28):
    first = streams[0]
    return {
        "index": "sample",
        "stream": "subject",
        "channels": first.channel_names,
        "label": "activity",
        "sample_rate_hz": first.sample_rate_hz,
        "window_seconds": window_seconds,
        "step_seconds": step_seconds,
    }


def write_csv(streams, path):
    """One CSV holding all streams, distinguished by the ``subject`` column."""
    names = streams[0].channel_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "sample", *names, "activity"])
        for st in streams:
            mat = st.matrix()
            for i in range(len(st)):
                w.writerow([st.subject_id, i, *(repr(float(v)) for v in mat[:, i]), int(st.labels[i])])
