"""Sensor stream ingestion, sliding-window segmentation, label budgets and weak pairs."""
from __future__ import annotations

import csv
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConstraintError, EmptyInputError, ParameterError, ParseError, SchemaError

MISSING_TOKENS = {"", "nan", "NaN", "NAN", "na", "NA", "null", "None"}


@dataclass
class SensorStream:
    channels: dict  # name -> 1-D float array, all the same length
    sample_rate_hz: float
    labels: Optional[np.ndarray] = None
    subject_id: Optional[str] = None
    dropped_rows: int = 0

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise ParameterError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        self.channels = {k: np.asarray(v, dtype=np.float64) for k, v in self.channels.items()}
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ParameterError(f"channels have unequal lengths {sorted(lengths)}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self):
                raise ParameterError("one label per sample is required")

    def __len__(self):
        if not self.channels:
            return 0
        return len(next(iter(self.channels.values())))

    @property
    def channel_names(self):
        return list(self.channels)

    def matrix(self):
        """Channels stacked as a ``(channels, samples)`` array."""
        return np.vstack([self.channels[k] for k in self.channels])


@dataclass
class Segment:
    index: int  # window ordinal within its stream
    samples: np.ndarray  # (channels, window_length)
    label: Optional[int] = None
    stream_id: str = ""
    start: int = 0  # first sample offset in the stream


class Segments(list):
    """List of segments plus bookkeeping from the segmentation pass."""

    def __init__(self, items=(), discarded_ties=0, too_short=False):
        super().__init__(items)
        self.discarded_ties = discarded_ties
        self.too_short = too_short


@dataclass
class LabelBudgetSplit:
    budget_fraction: float
    labeled_indices: list
    unlabeled_indices: list
    # labels of the labeled part only; the rest are never handed downstream
    labels: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class WeakPair:
    a: int
    b: int
    y: int

    def __post_init__(self):
        if self.a == self.b:
            raise ParameterError("a weak pair needs two distinct segments")
        if self.y not in (0, 1):
            raise ParameterError(f"y must be 0 or 1, got {self.y}")


# ---------------------------------------------------------------- loading

def load_schema(path):
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"schema file not found: {path}")
    try:
        schema = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    validate_schema(schema)
    return schema


def validate_schema(schema):
    if not isinstance(schema, dict):
        raise SchemaError("schema must be a JSON object")
    if not schema.get("channels"):
        raise SchemaError("schema must name at least one channel column")
    if "time" not in schema and "index" not in schema:
        raise SchemaError("schema must name a 'time' or 'index' column")
    rate = schema.get("sample_rate_hz")
    if rate is None or not float(rate) > 0:
        raise SchemaError("schema needs a positive 'sample_rate_hz'")


def _read_rows(path, schema):
    delimiter = schema.get("delimiter", ",")
    with open(path, newline="") as fh:
        if delimiter == "whitespace":
            lines = (ln for ln in fh)
            reader = (ln.split() for ln in lines)
        else:
            reader = csv.reader(fh, delimiter=delimiter)
        if schema.get("header", True):
            try:
                header = next(reader)
            except StopIteration:
                raise EmptyInputError(f"{path}: file is empty") from None
            start_line = 2
        else:
            header = schema.get("column_names")
            if not header:
                raise SchemaError("headerless input needs 'column_names' in the schema")
            start_line = 1
        header = [h.strip() for h in header]
        try:
            for offset, row in enumerate(reader):
                yield header, start_line + offset, row
        except csv.Error as exc:
            raise ParseError(str(exc), line=getattr(reader, "line_num", None), path=path) from exc
    return


def _parse_float(text, line, column, path):
    t = text.strip()
    if t in MISSING_TOKENS:
        return math.nan
    try:
        return float(t)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {text!r} as a number", line=line, path=path) from None


def load_streams(path, schema):
    """Read a column-mapped CSV into one stream per value of the schema's stream column.

    Rows with a missing channel value are dropped and counted on the stream.
    Labels listed in ``drop_labels`` are removed and ``label_map`` merges
    classes (keys are the raw label text). With ``split_at_dropped_labels``
    a run of rows removed for their label ends the stream; the rows after it
    form a new stream ``<id>.<k>`` so no window spans the gap.
    """
    validate_schema(schema)
    path = Path(path)
    if not path.is_file():
        raise ParseError("file not found", path=path)
    chan_names = list(schema["channels"])
    label_col = schema.get("label")
    stream_col = schema.get("stream")
    order_col = schema.get("time", schema.get("index"))
    label_map = {str(k): int(v) for k, v in schema.get("label_map", {}).items()}
    drop_labels = {str(v) for v in schema.get("drop_labels", [])}
    split = bool(schema.get("split_at_dropped_labels", False))
    parts = Counter()  # stream -> pieces started so far
    broken = set()  # streams whose current piece ended at a dropped label

    cols = None
    data = {}  # stream -> (rows, labels)
    dropped = Counter()
    order = []
    for header, line, row in _read_rows(path, schema):
        if cols is None:
            cols = {}
            for name in [order_col, *chan_names] + [c for c in (label_col, stream_col) if c]:
                if name not in header:
                    raise SchemaError(f"column {name!r} named in schema is not in {path.name}")
                cols[name] = header.index(name)
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line, path=path)
        base = row[cols[stream_col]].strip() if stream_col else path.stem
        sid = base if parts[base] == 0 else f"{base}.{parts[base]}"
        _parse_float(row[cols[order_col]], line, order_col, path)
        values = [_parse_float(row[cols[c]], line, c, path) for c in chan_names]
        label = None
        if label_col:
            raw = row[cols[label_col]].strip()
            if raw in drop_labels or raw in MISSING_TOKENS:
                if raw not in drop_labels:
                    dropped[sid] += 1
                if split and sid in data and data[sid][0]:
                    broken.add(base)
                continue
            if raw in label_map:
                label = label_map[raw]
            else:
                try:
                    label = int(float(raw))
                except ValueError:
                    raise ParseError(f"label {raw!r} is not an integer class id", line=line, path=path) from None
        if base in broken:
            broken.discard(base)
            parts[base] += 1
            sid = f"{base}.{parts[base]}"
        if any(math.isnan(v) for v in values):
            dropped[sid] += 1
            continue
        if sid not in data:
            data[sid] = ([], [])
            order.append(sid)
        data[sid][0].append(values)
        data[sid][1].append(label)

    if cols is None:
        raise EmptyInputError(f"{path}: no data rows")
    streams = []
    rate = float(schema["sample_rate_hz"])
    for sid in order:
        rows, labels = data[sid]
        if not rows:
            continue
        arr = np.asarray(rows, dtype=np.float64)
        streams.append(
            SensorStream(
                channels={c: arr[:, j] for j, c in enumerate(chan_names)},
                sample_rate_hz=rate,
                labels=np.asarray(labels, dtype=np.int64) if label_col else None,
                subject_id=sid,
                dropped_rows=dropped[sid],
            )
        )
    if not streams:
        raise EmptyInputError(f"{path}: zero usable rows ({sum(dropped.values())} dropped)")
    return streams


def load_stream(path, schema):
    """Load a single stream; the file must not contain several stream ids."""
    if isinstance(schema, (str, Path)):
        schema = load_schema(schema)
    streams = load_streams(path, schema)
    if len(streams) > 1:
        raise SchemaError(f"{path} holds {len(streams)} streams; use load_streams")
    return streams[0]


# ----------------------------------------------------------- segmentation

def window_samples(seconds, rate):
    return int(round(seconds * rate))


def segment_count(n_samples, window, step):
    if window > n_samples:
        return 0
    return (n_samples - window) // step + 1


def segment(stream, window_seconds, step_seconds, stream_id=None):
    """Cut a stream into fixed-length windows.

    The trailing partial window is dropped. A labelled window takes the
    majority per-sample label; a tie discards the window and is counted
    in ``Segments.discarded_ties``.
    """
    if not window_seconds > 0 or not step_seconds > 0:
        raise ParameterError("window_seconds and step_seconds must be positive")
    w = window_samples(window_seconds, stream.sample_rate_hz)
    s = window_samples(step_seconds, stream.sample_rate_hz)
    if w < 1 or s < 1:
        raise ParameterError(f"window ({w}) and step ({s}) must span at least one sample")
    sid = stream_id if stream_id is not None else (stream.subject_id or "")
    n = len(stream)
    if n < w:
        warnings.warn(f"stream {sid!r} has {n} samples, shorter than one window of {w}", stacklevel=2)
        return Segments(too_short=True)
    mat = stream.matrix()
    out = Segments()
    for k in range(segment_count(n, w, s)):
        start = k * s
        label = None
        if stream.labels is not None:
            counts = Counter(stream.labels[start:start + w].tolist()).most_common(2)
            if len(counts) > 1 and counts[0][1] == counts[1][1]:
                out.discarded_ties += 1
                continue
            label = int(counts[0][0])
        out.append(Segment(index=k, samples=mat[:, start:start + w], label=label, stream_id=sid, start=start))
    return out


def segment_streams(streams, window_seconds, step_seconds):
    """Segment several streams; stream ids are made unique if needed."""
    all_segments = Segments()
    seen = Counter()
    for st in streams:
        sid = st.subject_id or "stream"
        seen[sid] += 1
        if seen[sid] > 1:
            sid = f"{sid}#{seen[sid]}"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            segs = segment(st, window_seconds, step_seconds, stream_id=sid)
        all_segments.extend(segs)
        all_segments.discarded_ties += segs.discarded_ties
    if not all_segments:
        all_segments.too_short = True
    return all_segments


# ------------------------------------------------------- budgets and pairs

def make_budget_split(segments, fraction, seed):
    """Pick ``round(fraction * len(segments))`` segments whose labels stay visible.

    The selection is a prefix of one seeded permutation, so budgets drawn
    with the same seed are nested.
    """
    if not (0 < fraction <= 1):
        raise ParameterError(f"budget fraction must lie in (0, 1], got {fraction}")
    labels = [s.label if isinstance(s, Segment) else s for s in segments]
    if any(lab is None for lab in labels):
        raise ParameterError("every segment needs a label to build a budget split")
    total = len(labels)
    n_labeled = int(round(fraction * total))
    perm = np.random.default_rng(seed).permutation(total)
    labeled = sorted(int(i) for i in perm[:n_labeled])
    unlabeled = sorted(int(i) for i in perm[n_labeled:])
    return LabelBudgetSplit(
        budget_fraction=fraction,
        labeled_indices=labeled,
        unlabeled_indices=unlabeled,
        labels={i: int(labels[i]) for i in labeled},
    )


def candidate_pairs(split):
    """All unordered labelled pairs, split into (positives, negatives)."""
    idx = split.labeled_indices
    pos, neg = [], []
    for p in range(len(idx)):
        for q in range(p + 1, len(idx)):
            a, b = idx[p], idx[q]
            (pos if split.labels[a] == split.labels[b] else neg).append((a, b))
    return pos, neg


def _draw(pool, count, rng):
    if count == 0:
        return []
    reps = -(-count // len(pool))
    picks = np.concatenate([rng.permutation(len(pool)) for _ in range(reps)])[:count]
    return [pool[i] for i in picks]


def make_weak_pairs(split, pairs_per_epoch, positive_ratio=0.5, seed=0):
    """Sample same/different pairs among the labelled segments.

    Pairs are drawn without replacement while the pool lasts, then cycled
    through fresh permutations. The result carries only ``(a, b, y)``.
    """
    if pairs_per_epoch < 1:
        raise ParameterError("pairs_per_epoch must be at least 1")
    if not (0 <= positive_ratio <= 1):
        raise ParameterError("positive_ratio must lie in [0, 1]")
    if len(split.labeled_indices) < 2:
        raise ConstraintError("need at least two labelled segments to form pairs")
    pos, neg = candidate_pairs(split)
    n_pos = int(round(positive_ratio * pairs_per_epoch))
    n_neg = pairs_per_epoch - n_pos
    if n_pos and not pos:
        raise ConstraintError("no positive pair possible: every labelled segment has a distinct class")
    if n_neg and not neg:
        raise ConstraintError("no negative pair possible: all labelled segments share one class")
    rng = np.random.default_rng(seed)
    pairs = [WeakPair(a, b, 1) for a, b in _draw(pos, n_pos, rng)]
    pairs += [WeakPair(a, b, 0) for a, b in _draw(neg, n_neg, rng)]
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def write_pairs(pairs, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "b", "y"])
        for p in pairs:
            w.writerow([p.a, p.b, p.y])


def read_pairs(path):
    pairs = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["a", "b", "y"]:
            raise ParseError(f"pairs header must be a,b,y; got {header}", line=1, path=path)
        for line, row in enumerate(reader, start=2):
            try:
                a, b, y = (int(v) for v in row)
            except ValueError:
                raise ParseError(f"bad pair row {row}", line=line, path=path) from None
            pairs.append(WeakPair(a, b, y))
    return pairs


# ----------------------------------------------------- segments manifest

MANIFEST_FIELDS = ["segment_index", "stream_id", "window_index", "start", "length", "label"]


def write_segments_manifest(segments, path):
    """CSV with one row per segment, in segment order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for i, s in enumerate(segments):
            w.writerow([i, s.stream_id, s.index, s.start, s.samples.shape[1], "" if s.label is None else s.label])


def read_segments_manifest(path):
    """Rows of the segments manifest as dicts (no sample data)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for r in reader:
            rows.append(
                {
                    "segment_index": int(r["segment_index"]),
                    "stream_id": r["stream_id"],
                    "window_index": int(r["window_index"]),
                    "start": int(r["start"]),
                    "length": int(r["length"]),
                    "label": int(r["label"]) if r["label"] != "" else None,
                }
            )
    return rows
