import json

import numpy as np
import pytest

import unifex as ux
from unifex.cli import run
from oracles import make_cluster_benchmark


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small benchmark written out as EMB1 + manifest files."""
    root = tmp_path_factory.mktemp("cli")
    bench = make_cluster_benchmark(seed=3, classes=8, d_in=64, train_per_class=12)
    paths = {}
    for name in ("train", "query", "index"):
        emb, man = bench[name]
        emb_path = root / f"{name}.emb"
        man_path = root / f"{name}.tsv"
        ux.save_embeddings(emb, emb_path)
        ux.save_manifest(man, man_path)
        paths[name] = (emb_path, man_path)
    return root, paths


@pytest.fixture(scope="module")
def trained_run(workspace):
    root, paths = workspace
    out = root / "run1"
    code = run(
        [
            "train",
            "--embeddings", str(paths["train"][0]),
            "--manifest", str(paths["train"][1]),
            "--loss", "subcenter-arcface",
            "--k", "3",
            "--m", "0.5",
            "--s", "30",
            "--epochs", "4",
            "--batch", "32",
            "--lr", "1e-2",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


def test_train_then_eval_happy_path(workspace, trained_run, capsys):
    root, paths = workspace
    out = trained_run
    assert (out / "best.prb").exists()
    assert (out / "history.json").exists()
    record = json.loads((out / "run.json").read_text())
    assert record["subcommand"] == "train"
    assert record["flags"]["loss"] == "subcenter-arcface"
    assert record["metrics"]["trainable_params"] == 64 * 64 + 64 + 8 * 3 * 64
    capsys.readouterr()

    code = run(
        [
            "eval",
            "--checkpoint", str(out / "best.prb"),
            "--index", f"{paths['index'][0]}:{paths['index'][1]}",
            "--queries", f"{paths['query'][0]}:{paths['query'][1]}",
            "--out", str(out),
        ]
    )
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    overall = [l for l in lines if l.startswith("overall")]
    assert overall and float(overall[0].split("\t")[2]) > 0.9


def test_train_with_eval_hook_records_metric(workspace):
    root, paths = workspace
    out = root / "run_hook"
    code = run(
        [
            "train",
            "--embeddings", str(paths["train"][0]),
            "--manifest", str(paths["train"][1]),
            "--epochs", "3",
            "--batch", "32",
            "--out", str(out),
            "--eval-index", f"{paths['index'][0]}:{paths['index'][1]}",
            "--eval-queries", f"{paths['query'][0]}:{paths['query'][1]}",
        ]
    )
    assert code == 0
    history = json.loads((out / "history.json").read_text())
    assert all(h["metric"] is not None for h in history)


def test_train_artifacts_are_deterministic(workspace):
    root, paths = workspace
    args = [
        "train",
        "--embeddings", str(paths["train"][0]),
        "--manifest", str(paths["train"][1]),
        "--epochs", "2",
        "--batch", "32",
        "--seed", "9",
    ]
    out_a, out_b = root / "det_a", root / "det_b"
    assert run(args + ["--out", str(out_a)]) == 0
    assert run(args + ["--out", str(out_b)]) == 0
    assert (out_a / "best.prb").read_bytes() == (out_b / "best.prb").read_bytes()
    assert (out_a / "history.json").read_text() == (out_b / "history.json").read_text()


def test_curate_writes_outputs(workspace, tmp_path):
    rng = np.random.default_rng(0)
    class_ids = np.concatenate([np.full(int(n), c) for c, n in enumerate(rng.integers(1, 9, 60))])
    man = ux.DatasetManifest.from_columns(
        [f"s{i}" for i in range(class_ids.size)],
        class_ids,
        ["train"] * class_ids.size,
        ["d"] * class_ids.size,
    )
    man_path = tmp_path / "raw.tsv"
    ux.save_manifest(man, man_path)
    out = tmp_path / "curated"
    code = run(
        [
            "curate",
            "--manifest", str(man_path),
            "--out", str(out),
            "--min-samples", "3",
            "--max-samples", "5",
            "--seed", "1",
        ]
    )
    assert code == 0
    curated = ux.load_manifest(out / "curated.tsv")
    counts = np.unique(curated.class_ids, return_counts=True)[1]
    assert counts.min() >= 3 and counts.max() <= 5
    mapping = json.loads((out / "class_mapping.json").read_text())
    assert sorted(int(v) for v in mapping.values()) == list(range(curated.num_classes))


def test_zeroshot_avg_pool(workspace, tmp_path):
    rng = np.random.default_rng(1)
    emb = ux.EmbeddingMatrix(rng.standard_normal((10, 128)).astype(np.float32))
    src = tmp_path / "in.emb"
    ux.save_embeddings(emb, src)
    dst = tmp_path / "out" / "z.emb"
    code = run(["zeroshot", "--embeddings", str(src), "--mode", "avg_pool", "--out", str(dst)])
    assert code == 0
    projected = ux.load_embeddings(dst)
    assert projected.rows == 10 and projected.dim == 64


def test_zeroshot_indivisible_dim_is_usage_error(tmp_path, capsys):
    rng = np.random.default_rng(2)
    emb = ux.EmbeddingMatrix(rng.standard_normal((4, 1000)).astype(np.float32))
    src = tmp_path / "in.emb"
    ux.save_embeddings(emb, src)
    code = run(
        ["zeroshot", "--embeddings", str(src), "--mode", "avg_pool", "--out", str(tmp_path / "o.emb")]
    )
    assert code == 2
    assert "divisible" in capsys.readouterr().err


def test_resolved_config_printed_before_running(workspace, capsys):
    root, paths = workspace
    assert run(["inspect", "--path", str(paths["train"][0])]) == 0
    out = capsys.readouterr().out
    assert out.startswith("subcommand: inspect")
    assert "path = " in out


def test_unknown_flag_is_usage_error(capsys):
    assert run(["train", "--does-not-exist", "1"]) == 2
    capsys.readouterr()


def test_unknown_subcommand_is_usage_error(capsys):
    assert run(["frobnicate"]) == 2
    capsys.readouterr()


def test_runtime_error_is_structured(tmp_path, capsys):
    bad = tmp_path / "bad.emb"
    bad.write_bytes(b"XXXX" + bytes(12))
    code = run(["zeroshot", "--embeddings", str(bad), "--mode", "avg_pool", "--out", str(tmp_path / "o.emb")])
    assert code == 1
    diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert diag["error"] == "FormatError"


def test_inspect_emb_and_manifest(workspace, capsys):
    root, paths = workspace
    assert run(["inspect", "--path", str(paths["train"][0])]) == 0
    assert "EMB1" in capsys.readouterr().out
    assert run(["inspect", "--path", str(paths["train"][1])]) == 0
    assert "records=" in capsys.readouterr().out


def test_inspect_checkpoint(trained_run, capsys):
    assert run(["inspect", "--path", str(trained_run / "best.prb")]) == 0
    assert "PRB1" in capsys.readouterr().out


def test_eval_without_checkpoint_requires_64d(workspace, tmp_path, capsys):
    rng = np.random.default_rng(3)
    emb = ux.EmbeddingMatrix(rng.standard_normal((6, 32)).astype(np.float32))
    man = ux.DatasetManifest.from_columns(
        [f"s{i}" for i in range(6)], [0, 0, 1, 1, 2, 2], ["index"] * 6, ["d"] * 6
    )
    e, m = tmp_path / "x.emb", tmp_path / "x.tsv"
    ux.save_embeddings(emb, e)
    ux.save_manifest(man, m)
    code = run(["eval", "--index", f"{e}:{m}", "--queries", f"{e}:{m}", "--out", str(tmp_path)])
    assert code == 2
    assert "64-d" in capsys.readouterr().err


def test_eval_per_query_dump(workspace, trained_run, tmp_path, capsys):
    root, paths = workspace
    dump = tmp_path / "per_query.tsv"
    code = run(
        [
            "eval",
            "--checkpoint", str(trained_run / "best.prb"),
            "--index", f"{paths['index'][0]}:{paths['index'][1]}",
            "--queries", f"{paths['query'][0]}:{paths['query'][1]}",
            "--per-query", str(dump),
            "--out", str(tmp_path),
        ]
    )
    capsys.readouterr()
    assert code == 0
    lines = dump.read_text().splitlines()
    assert lines[0] == "query_id\trank\tindex_id\tscore"
    assert len(lines) == 1 + 5 * 40  # 5 ranks per query, 8 classes x 5 queries
