import json
from pathlib import Path

import numpy as np
import pytest

from wshar import cli
from wshar.cluster_eval import read_embeddings
from wshar.dataset import read_pairs
from wshar.model import load_checkpoint

SMALL = ["--set", "hidden=[8]", "--set", "embedding_dim=4", "--set", "batch_size=16",
         "--set", "pairs_per_epoch=64"]
SYNTH = ["--synthetic", "--classes", "2", "--streams", "2", "--seconds", "120", "--rate", "10", "--channels", "3"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    out = tmp_path_factory.mktemp("prep") / "p"
    assert run("prepare", *SYNTH, "--out", out) == 0
    return out


def digests(directory):
    return {p.name: cli.sha256(p) for p in sorted(directory.iterdir()) if p.name != "manifest.json"}


def test_synth_then_prepare_from_csv(tmp_path):
    assert run("synth", "--out", tmp_path / "raw", "--classes", "2", "--streams", "2", "--seconds", "60",
               "--rate", "10", "--channels", "2") == 0
    args = ["prepare", "--data", tmp_path / "raw" / "data.csv", "--schema", tmp_path / "raw" / "schema.json"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert digests(tmp_path / "a") == digests(tmp_path / "b")
    meta = json.loads((tmp_path / "a" / "prepare.json").read_text())
    assert meta["segments"] > 0 and meta["channels"] == ["ch0", "ch1"]


def test_prepare_usage_errors(tmp_path, capsys):
    assert run("prepare", "--data", tmp_path / "x.csv", "--schema", tmp_path / "none.json", "--out", tmp_path) == 1
    assert "schema" in capsys.readouterr().err
    assert run("prepare", "--out", tmp_path) == 1
    assert run("bogus") == 1


def test_bad_data_exits_2(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"index": "i", "channels": ["a"], "sample_rate_hz": 1,
                                                  "window_seconds": 2, "step_seconds": 1}))
    (tmp_path / "d.csv").write_text("i,a\n0,1\n1,oops\n")
    assert run("prepare", "--data", tmp_path / "d.csv", "--schema", tmp_path / "s.json", "--out", tmp_path / "o") == 2


def test_train_requires_seed(prepared, tmp_path):
    assert run("train", "--prepared", prepared, "--run", tmp_path / "r") == 1


def test_budget_run_writes_pairs_and_stage2(prepared, tmp_path):
    r = tmp_path / "run"
    assert run("train", "--prepared", prepared, "--run", r, "--seed", 7, "--budget", 0.10,
               "--set", "max_epochs=2", *SMALL) == 0
    for name in ("pairs.csv", "stage1.ckpt", "stage2.ckpt", "metrics.jsonl", "lr_trace.csv", "config.json"):
        assert (r / name).exists(), name
    assert not list(r.glob("*.state.json"))
    pairs = read_pairs(r / "pairs.csv")
    assert len(pairs) == 64 and {q.y for q in pairs} == {0, 1}
    manifest = json.loads((r / "manifest.json").read_text())
    assert manifest["stages"] == {"stage1": True, "stage2": True}
    assert manifest["seed"] == 7
    assert set(manifest["inputs"]) >= {"segments.csv", "features.csv"}
    assert manifest["artifacts"]["stage2.ckpt"] == cli.sha256(r / "stage2.ckpt")
    _, _, _, s2 = load_checkpoint(r / "stage2.ckpt")
    _, _, _, s1 = load_checkpoint(r / "stage1.ckpt")
    assert s2["start_step"] == s1["end_step"]


def test_vanilla_flags(prepared, tmp_path):
    r = tmp_path / "van"
    assert run("train", "--prepared", prepared, "--run", r, "--seed", 1, "--alpha", 0, "--beta", 0,
               "--stage1-only", "--set", "max_epochs=1", *SMALL) == 0
    _, _, cfg, _ = load_checkpoint(r / "stage1.ckpt")
    assert cfg["stage1.alpha"] == 0 and cfg["stage1.beta"] == 0
    assert not (r / "stage2.ckpt").exists()


def test_config_file_and_overrides(prepared, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"max_epochs": 1, "stage2.gamma": 0.4}))
    r = tmp_path / "cfg"
    assert run("train", "--prepared", prepared, "--run", r, "--seed", 2, "--config", tmp_path / "c.json",
               "--gamma", 0.6, "--stage1-only", *SMALL) == 0
    cfg = json.loads((r / "config.json").read_text())
    assert cfg["max_epochs"] == 1 and cfg["stage2.gamma"] == 0.6 and cfg["seed"] == 2
    assert run("train", "--prepared", prepared, "--run", r, "--seed", 2, "--set", "nonsense=1") == 1


def test_identical_runs_are_byte_identical(prepared, tmp_path):
    for name in ("a", "b"):
        assert run("train", "--prepared", prepared, "--run", tmp_path / name, "--seed", 3, "--budget", 0.2,
                   "--set", "max_epochs=2", *SMALL) == 0
        assert run("evaluate", "--checkpoint", tmp_path / name / "stage2.ckpt", "--prepared", prepared,
                   "--out", tmp_path / name / "report.json") == 0
    assert digests(tmp_path / "a") == digests(tmp_path / "b")


def test_interrupted_run_resumes_with_the_same_schedule(prepared, tmp_path, monkeypatch):
    args = ["--prepared", prepared, "--seed", 5, "--budget", 0.2, "--set", "max_epochs=4",
            "--set", "patience=10", *SMALL]
    assert run("train", "--run", tmp_path / "full", *args) == 0

    real = cli._save_state
    calls = []

    def interrupt(path, state):
        real(path, state)
        calls.append(state.epoch)
        if state.stage == 2 and state.epoch == 2:
            raise KeyboardInterrupt

    monkeypatch.setattr(cli, "_save_state", interrupt)
    with pytest.raises(KeyboardInterrupt):
        run("train", "--run", tmp_path / "cut", *args)
    assert (tmp_path / "cut" / "stage2.state.json").exists()
    monkeypatch.setattr(cli, "_save_state", real)
    assert run("train", "--run", tmp_path / "cut", "--resume", *args) == 0
    lr_full = (tmp_path / "full" / "lr_trace.csv").read_text()
    assert (tmp_path / "cut" / "lr_trace.csv").read_text() == lr_full
    assert digests(tmp_path / "cut") == digests(tmp_path / "full")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_3(prepared, tmp_path, capsys):
    code = run("train", "--prepared", prepared, "--run", tmp_path / "nan", "--seed", 0, "--stage1-only",
               "--set", "base_lr=1e6", "--set", "recon_scale=1", "--set", "grad_clip=null", "--set", "max_epochs=3", *SMALL)
    assert code == 3
    assert "non-finite" in capsys.readouterr().err


def one_class_per_stream(path):
    # every window of a class has the same features, so the classes are perfectly separable
    lines = ["subject,i,a,b,act"]
    for subject, (level, label) in enumerate([(0.0, 1), (10.0, 2)]):
        for i in range(200):
            lines.append(f"s{subject},{i},{level},{-level},{label}")
    path.write_text("\n".join(lines) + "\n")


def test_evaluate_perfect_separation_and_export(tmp_path, capsys):
    one_class_per_stream(tmp_path / "d.csv")
    (tmp_path / "s.json").write_text(json.dumps({
        "index": "i", "stream": "subject", "channels": ["a", "b"], "label": "act",
        "sample_rate_hz": 10, "window_seconds": 2, "step_seconds": 1,
    }))
    assert run("prepare", "--data", tmp_path / "d.csv", "--schema", tmp_path / "s.json", "--out", tmp_path / "p") == 0
    assert run("train", "--prepared", tmp_path / "p", "--run", tmp_path / "r", "--seed", 0, "--stage1-only",
               "--set", "max_epochs=2", *SMALL) == 0
    capsys.readouterr()
    assert run("evaluate", "--checkpoint", tmp_path / "r" / "stage1.ckpt", "--prepared", tmp_path / "p",
               "--out", tmp_path / "rep.json", "--export-embeddings", tmp_path / "emb.csv") == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["acc"] == 1.0
    assert json.loads((tmp_path / "rep.json").read_text()) == printed
    idx, emb, labels = read_embeddings(tmp_path / "emb.csv")
    assert emb.shape == (len(idx), 4) and set(labels) == {1, 2}


def test_evaluate_missing_checkpoint_writes_nothing(prepared, tmp_path):
    assert run("evaluate", "--checkpoint", tmp_path / "no.ckpt", "--prepared", prepared,
               "--out", tmp_path / "rep.json") != 0
    assert not (tmp_path / "rep.json").exists()


def test_pairs_and_embed_commands(prepared, tmp_path):
    assert run("pairs", "--prepared", prepared, "--budget", 0.1, "--seed", 4, "--pairs-per-epoch", 10,
               "--out", tmp_path / "pairs.csv") == 0
    assert len(read_pairs(tmp_path / "pairs.csv")) == 10
    r = tmp_path / "r"
    assert run("--threads", 1, "train", "--prepared", prepared, "--run", r, "--seed", 0,
               "--pairs", tmp_path / "pairs.csv", "--set", "max_epochs=1", *SMALL) == 0
    assert run("embed", "--checkpoint", r / "stage2.ckpt", "--prepared", prepared, "--out", tmp_path / "e.csv") == 0
    _, emb, labels = read_embeddings(tmp_path / "e.csv")
    assert labels is None and emb.shape[1] == 4


def write_pamap2_subject(path, rng, activities=(1, 4, 12), seconds=30, transient=5):
    """A file in PAMAP2 Protocol layout: 54 whitespace columns at 100 Hz."""
    rows = []
    t = 0.0
    for act in (0, *sum(((a, 0) for a in activities), ())):
        length = int((transient if act == 0 else seconds) * 100)
        base = rng.normal(size=54) * 0.2 + (act % 5)
        tone = np.sin(np.arange(length) * 0.05 * (1 + act))[:, None]
        block = base + tone * (1 + act % 3) + rng.normal(scale=0.3, size=(length, 54))
        block[:, 0] = t + np.arange(length) / 100
        block[:, 1] = act
        block[np.arange(length) % 11 != 0, 2] = np.nan  # heart rate at about 9 Hz
        block[rng.random(length) < 0.002, 5] = np.nan  # dropped IMU packets
        rows.append(block)
        t += length / 100
    np.savetxt(path, np.vstack(rows), fmt="%.5g")


def test_pamap2_layout_end_to_end(tmp_path, capsys):
    schema = Path(__file__).resolve().parents[1] / "schemas" / "pamap2.json"
    rng = np.random.default_rng(0)
    files = [tmp_path / f"subject10{k}.dat" for k in (1, 2)]
    for f in files:
        write_pamap2_subject(f, rng)
    assert run("prepare", "--data", *files, "--schema", schema, "--out", tmp_path / "prep") == 0
    meta = json.loads((tmp_path / "prep" / "prepare.json").read_text())
    assert meta["window_seconds"] == 5.12 and meta["step_seconds"] == 1.0
    assert len(meta["channels"]) == 27 and meta["dropped_rows"] > 0
    # transients split each subject into one stream per activity; 3000 samples give 25 windows
    assert meta["segments"] == 2 * 3 * 25
    assert run("train", "--prepared", tmp_path / "prep", "--run", tmp_path / "run", "--seed", 0,
               "--budget", 0.1, "--set", "max_epochs=3", *SMALL) == 0
    capsys.readouterr()
    assert run("evaluate", "--checkpoint", tmp_path / "run" / "stage2.ckpt", "--prepared", tmp_path / "prep",
               "--out", tmp_path / "report.json") == 0
    report = json.loads(capsys.readouterr().out)
    assert 0 < report["acc"] <= 1 and len(report["confusion"]) == 3
