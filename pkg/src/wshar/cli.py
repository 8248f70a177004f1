"""Command-line entry point: ``wshar <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import kernels, synth
from .cluster_eval import cluster_accuracy, export_embeddings, kmeans
from .dataset import (
    load_schema,
    load_streams,
    make_budget_split,
    make_weak_pairs,
    read_pairs,
    read_segments_manifest,
    segment_streams,
    write_pairs,
    write_segments_manifest,
)
from .errors import DataError, EmptyInputError, WsharError
from .features import NormStats, apply_normalizer, feature_matrix, fit_normalizer, read_feature_csv, write_feature_csv
from .model import encode, load_checkpoint, save_checkpoint
from .neighbors import NeighborIndex, build_index, feature_neighbors, read_index, temporal_neighbors, write_index
from .training import TrainConfig, TrainReport, TrainState, load_config, train_stage1, train_stage2

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _require(path, what):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------- prepared

PREPARED_FILES = ("segments.csv", "features.csv", "neighbors.csv", "norm.json", "prepare.json")


class PreparedDir:
    """Artifacts written by ``prepare`` and read back by later commands."""

    def __init__(self, root):
        self.root = _require(root, "prepared directory")
        for name in PREPARED_FILES:
            _require(self.root / name, name)
        self.meta = json.loads((self.root / "prepare.json").read_text())
        self.rows = read_segments_manifest(self.root / "segments.csv")
        _, self.raw = read_feature_csv(self.root / "features.csv")
        self.norm = NormStats.from_dict(json.loads((self.root / "norm.json").read_text()))
        self.labels = [r["label"] for r in self.rows]

    def x(self, norm=None):
        return apply_normalizer(norm or self.norm, self.raw)

    def index(self, m, n):
        if (m, n) == (self.meta["m"], self.meta["n"]):
            return read_index(self.root / "neighbors.csv", len(self.rows))
        return NeighborIndex(tuple(temporal_neighbors(self.rows, m)), tuple(feature_neighbors(self.x(), n)))

    def digests(self):
        return {name: sha256(self.root / name) for name in PREPARED_FILES}


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    streams = synth.generate(_synth_config(args))
    synth.write_csv(streams, out / "data.csv")
    _write_json(out / "schema.json", synth.schema_for(streams, args.window_seconds, args.step_seconds))
    print(f"wrote {out / 'data.csv'} and {out / 'schema.json'}")
    return EXIT_OK


def _synth_config(args):
    return synth.SynthConfig(
        n_classes=args.classes,
        n_streams=args.streams,
        seconds_per_stream=args.seconds,
        sample_rate_hz=args.rate,
        n_channels=args.channels,
        style_scale=args.style_scale,
        subject_scale=args.subject_scale,
        class_sep=args.class_sep,
        class_dwell_s=args.dwell,
        noise=args.noise,
        seed=args.synth_seed,
    )


def cmd_prepare(args):
    out = Path(args.out)
    if args.synthetic:
        streams = synth.generate(_synth_config(args))
        schema = synth.schema_for(streams, args.window_seconds or 2.56, args.step_seconds or 1.28)
        source = {"synthetic": _synth_config(args).to_dict()}
    else:
        if args.data is None or args.schema is None:
            raise UsageError("prepare needs --data and --schema (or --synthetic)")
        schema = load_schema(_require(args.schema, "schema file"))
        streams = []
        for path in args.data:
            streams += load_streams(_require(path, "data file"), schema)
        ids = [s.subject_id for s in streams]
        if len(set(ids)) != len(ids):
            raise DataError("stream ids repeat across data files; give each file distinct stream values")
        source = {"data": [str(p) for p in args.data], "data_sha256": [sha256(p) for p in args.data],
                  "schema": schema}
    window = args.window_seconds or schema.get("window_seconds")
    step = args.step_seconds or schema.get("step_seconds")
    if window is None or step is None:
        raise UsageError("window and step lengths come from the schema or --window-seconds/--step-seconds")
    segments = segment_streams(streams, float(window), float(step))
    if not segments:
        raise EmptyInputError("no stream is long enough for one window")
    raw = feature_matrix(segments)
    norm = fit_normalizer(raw)
    index = build_index(segments, apply_normalizer(norm, raw), args.m, args.n)
    out.mkdir(parents=True, exist_ok=True)
    write_segments_manifest(segments, out / "segments.csv")
    write_feature_csv(raw, out / "features.csv")
    write_index(index, out / "neighbors.csv")
    _write_json(out / "norm.json", norm.to_dict())
    _write_json(out / "prepare.json", {
        "source": source,
        "window_seconds": float(window),
        "step_seconds": float(step),
        "m": args.m,
        "n": args.n,
        "segments": len(segments),
        "discarded_ties": segments.discarded_ties,
        "dropped_rows": sum(s.dropped_rows for s in streams),
        "channels": streams[0].channel_names,
    })
    print(f"{len(segments)} segments, {raw.shape[1]} features -> {out}")
    return EXIT_OK


def cmd_pairs(args):
    prep = PreparedDir(args.prepared)
    split = make_budget_split(prep.labels, args.budget, args.seed)
    pairs = make_weak_pairs(split, args.pairs_per_epoch, args.positive_ratio, args.seed)
    write_pairs(pairs, args.out)
    print(f"{len(pairs)} pairs from {len(split.labeled_indices)} labelled segments -> {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------- train

def build_config(args):
    overrides = {"seed": args.seed}
    for flag, key in (("alpha", "stage1.alpha"), ("beta", "stage1.beta"),
                      ("gamma", "stage2.gamma"), ("margin", "stage2.margin")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _scalar(value.strip())
    if args.config:
        cfg = load_config(_require(args.config, "config file"), overrides)
    else:
        cfg = TrainConfig().updated(overrides)
    return cfg.validate()


def _scalar(text):
    if text.lower() in ("none", "null"):
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _save_state(path, state):
    _write_json(path, state.to_dict())


def _load_state(path):
    return TrainState.from_dict(json.loads(Path(path).read_text()))


def _summary(report):
    """Checkpoint copy of a report; wall time lives only in the manifest."""
    d = report.to_dict()
    d.pop("wall_time")
    d.pop("updated_segments")
    return d


class Run:
    """Checkpoints, state files and logs under one run directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"
        self.reports = {}

    def ckpt(self, stage):
        return self.root / f"stage{stage}.ckpt"

    def state(self, stage):
        return self.root / f"stage{stage}.state.json"

    def write_logs(self):
        """Rewritten from the reports after every epoch so resumed runs stay byte-identical."""
        with open(self.root / "metrics.jsonl", "w") as fh:
            for stage in sorted(self.reports):
                for e in self.reports[stage].epochs:
                    fh.write(json.dumps(e, sort_keys=True) + "\n")
        with open(self.root / "lr_trace.csv", "w") as fh:
            fh.write("stage,step,lr\n")
            for stage in sorted(self.reports):
                for step, lr in self.reports[stage].lr_trace:
                    fh.write(f"{stage},{step},{lr!r}\n")

    def manifest(self, **fields):
        data = json.loads(self.manifest_path.read_text()) if self.manifest_path.exists() else {}
        data.update(fields)
        data["artifacts"] = {
            p.name: sha256(p) for p in sorted(self.root.iterdir())
            if p.is_file() and p.name != "manifest.json" and not p.name.endswith(".tmp")
        }
        _write_json(self.manifest_path, data)


def _stage_done(path):
    if not path.exists():
        return None
    params, _, _, state = load_checkpoint(path)
    return params, state


def _run_stage(run, stage, train_fn, resume_flag):
    """Train one stage, resuming from its state file when asked; returns (params, summary)."""
    done = _stage_done(run.ckpt(stage)) if resume_flag else None
    if done is not None:
        run.reports[stage] = TrainReport.from_dict({**done[1], "wall_time": 0.0})
        return done[0], done[1]
    resume = _load_state(run.state(stage)) if resume_flag and run.state(stage).exists() else None
    if resume is not None:
        run.reports[stage] = resume.report

    def on_epoch_end(state):
        run.reports[stage] = state.report
        run.write_logs()
        _save_state(run.state(stage), state)

    params, report = train_fn(resume, on_epoch_end)
    run.reports[stage] = report
    run.write_logs()
    return params, _summary(report)


def cmd_train(args):
    cfg = build_config(args)
    prep = PreparedDir(args.prepared)
    run = Run(args.run)
    if not args.resume:
        for stale in ("stage1.ckpt", "stage2.ckpt", "stage1.state.json", "stage2.state.json", "pairs.csv",
                      "metrics.jsonl", "lr_trace.csv", "manifest.json"):
            (run.root / stale).unlink(missing_ok=True)
    _write_json(run.root / "config.json", cfg.to_flat())

    pairs = None
    if args.pairs:
        pairs = read_pairs(_require(args.pairs, "pairs file"))
    elif args.budget is not None and not args.stage1_only:
        split = make_budget_split(prep.labels, args.budget, cfg.seed)
        pairs = make_weak_pairs(split, cfg.pairs_per_epoch, cfg.positive_ratio, cfg.seed)
        write_pairs(pairs, run.root / "pairs.csv")
    inputs = prep.digests()
    if args.pairs:
        inputs["pairs"] = sha256(args.pairs)
    run.manifest(command="train", seed=cfg.seed, config=cfg.to_flat(), inputs=inputs,
                 backend=kernels.BACKEND, started=_now(), stages={"stage1": False, "stage2": False})

    x = prep.x()
    index = prep.index(cfg.m, cfg.n)
    norm = prep.norm
    walls = {}

    def stage1(resume, hook):
        return train_stage1(x, index, cfg, resume=resume, on_epoch_end=hook)

    p1, s1 = _run_stage(run, 1, stage1, args.resume)
    save_checkpoint(run.ckpt(1), p1, norm, cfg.to_flat(), s1)
    run.state(1).unlink(missing_ok=True)
    walls["stage1"] = run.reports[1].wall_time
    run.manifest(stages={"stage1": True, "stage2": False}, wall_time=walls)
    final, final_ckpt = p1, run.ckpt(1)

    if pairs is not None and not args.stage1_only:
        def stage2(resume, hook):
            return train_stage2(p1, x, index, pairs, cfg, start_step=s1["end_step"], resume=resume,
                                on_epoch_end=hook)

        p2, s2 = _run_stage(run, 2, stage2, args.resume)
        save_checkpoint(run.ckpt(2), p2, norm, cfg.to_flat(), s2)
        run.state(2).unlink(missing_ok=True)
        walls["stage2"] = run.reports[2].wall_time
        final, final_ckpt = p2, run.ckpt(2)
        run.manifest(stages={"stage1": True, "stage2": True}, wall_time=walls)

    if args.export_embeddings:
        export_embeddings(encode(final, x), args.export_embeddings)
    run.manifest(finished=_now())
    print(f"trained -> {final_ckpt}")
    return EXIT_OK


# -------------------------------------------------------- embed / evaluate

def _checkpoint_and_features(args):
    ckpt = _require(args.checkpoint, "checkpoint")
    params, norm, _, _ = load_checkpoint(ckpt)
    prep = PreparedDir(args.prepared)
    return params, prep, prep.x(norm)


def cmd_embed(args):
    params, prep, x = _checkpoint_and_features(args)
    emb = encode(params, x)
    export_embeddings(emb, args.out, labels=prep.labels if args.with_labels else None)
    print(f"{emb.shape[0]} embeddings of width {emb.shape[1]} -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    params, prep, x = _checkpoint_and_features(args)
    if any(v is None for v in prep.labels):
        raise EmptyInputError("evaluation needs a label for every segment")
    emb = encode(params, x)
    k = args.k or len(set(prep.labels))
    report = cluster_accuracy(kmeans(emb, k, seed=args.seed, restarts=args.restarts), prep.labels, k)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    if args.export_embeddings:
        export_embeddings(emb, args.export_embeddings, labels=prep.labels)
    print(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_synth_options(p):
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--streams", type=int, default=4)
    p.add_argument("--seconds", type=float, default=660.0, help="length of each stream")
    p.add_argument("--rate", type=float, default=50.0, help="sample rate in Hz")
    p.add_argument("--channels", type=int, default=6)
    p.add_argument("--class-sep", type=float, default=synth.SynthConfig.class_sep)
    p.add_argument("--noise", type=float, default=synth.SynthConfig.noise)
    p.add_argument("--dwell", type=float, default=synth.SynthConfig.class_dwell_s, help="mean activity duration (s)")
    p.add_argument("--style-scale", type=float, default=synth.SynthConfig.style_scale,
                   help="size of the class-independent nuisance shifts")
    p.add_argument("--subject-scale", type=float, default=synth.SynthConfig.subject_scale)
    p.add_argument("--synth-seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="wshar", description="Weakly self-supervised embeddings for sensor activity data.")
    parser.add_argument("--threads", type=int, help="cap BLAS/OpenMP worker threads")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic labelled CSV and its schema")
    p.add_argument("--out", required=True)
    p.add_argument("--window-seconds", type=float, default=2.56)
    p.add_argument("--step-seconds", type=float, default=1.28)
    _add_synth_options(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("prepare", help="segment, extract features and build neighbour sets")
    p.add_argument("--data", nargs="+", help="one or more CSV files (e.g. one per subject)")
    p.add_argument("--schema")
    p.add_argument("--synthetic", action="store_true", help="use the built-in generator instead of --data")
    p.add_argument("--out", required=True)
    p.add_argument("--window-seconds", type=float)
    p.add_argument("--step-seconds", type=float)
    p.add_argument("--m", type=int, default=2, help="temporal neighbours")
    p.add_argument("--n", type=int, default=5, help="feature-space neighbours")
    _add_synth_options(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("pairs", help="draw weak pairs from a label budget")
    p.add_argument("--prepared", required=True)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--pairs-per-epoch", type=int, default=TrainConfig.pairs_per_epoch)
    p.add_argument("--positive-ratio", type=float, default=TrainConfig.positive_ratio)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pairs)

    p = sub.add_parser("train", help="stage-1 training, then stage 2 when pairs are given")
    p.add_argument("--prepared", required=True)
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="flat JSON file of config keys")
    p.add_argument("--alpha", type=float, help="stage-1 temporal weight")
    p.add_argument("--beta", type=float, help="stage-1 feature weight")
    p.add_argument("--gamma", type=float, help="stage-2 pair weight")
    p.add_argument("--margin", type=float, help="contrastive margin")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any config key, e.g. stage2.alpha=0.1")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--budget", type=float, help="labelled fraction used to draw weak pairs")
    group.add_argument("--pairs", help="existing pairs CSV (a,b,y)")
    p.add_argument("--stage1-only", action="store_true")
    p.add_argument("--resume", action="store_true", help="continue from the run directory's last state")
    p.add_argument("--export-embeddings")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("embed", help="write embeddings for every prepared segment")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prepared", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--with-labels", action="store_true")
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("evaluate", help="k-means on embeddings and clustering accuracy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prepared", required=True)
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--k", type=int, help="cluster count (default: number of classes)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--export-embeddings")
    p.set_defaults(fn=cmd_evaluate)
    return parser


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        with _thread_limit(args.threads):
            return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WsharError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
