"""Command-line surface: curate, train, eval, zeroshot, inspect.

Each run prints its resolved configuration, writes its artifacts plus a
``run.json`` record (flags, seed, versions, metric summary) next to them,
and exits 0 on success, 2 on usage errors, 1 on runtime errors. Set
``UNIFEX_THREADS`` to cap BLAS parallelism (default: all cores).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

_USAGE_EXIT = 2
_RUNTIME_EXIT = 1

_LOSS_CHOICES = (
    "arcface",
    "subcenter-arcface",
    "li-arcface",
    "adacos",
    "curricularface",
    "adaface",
    "dynmargin-arcface",
)


def _apply_thread_cap() -> None:
    cap = os.environ.get("UNIFEX_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unifex",
        description="Margin-loss linear probing and retrieval evaluation "
        "over precomputed embeddings",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    cur = sub.add_parser("curate", help="filter/cap/subsample/remap a manifest")
    cur.add_argument("--manifest", required=True)
    cur.add_argument("--out", required=True, help="output directory")
    cur.add_argument("--min-samples", type=int, default=3)
    cur.add_argument("--max-samples", type=int, default=100)
    cur.add_argument("--class-budget", type=int, default=None)
    cur.add_argument("--subset-cap", type=int, default=None)
    cur.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="linear-probe the projection head")
    tr.add_argument("--embeddings", required=True)
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--loss", choices=_LOSS_CHOICES, default="arcface")
    tr.add_argument("--m", type=float, default=0.5)
    tr.add_argument("--s", type=float, default=30.0)
    tr.add_argument("--k", type=int, default=1, help="sub-centers per class")
    tr.add_argument("--m-min", type=float, default=0.2)
    tr.add_argument("--m-max", type=float, default=0.6)
    tr.add_argument("--curricular-alpha", type=float, default=0.01)
    tr.add_argument("--adaface-h", type=float, default=0.333)
    tr.add_argument("--adaface-ema", type=float, default=0.01)
    tr.add_argument("--epochs", type=int, default=10)
    tr.add_argument("--batch", type=int, default=128)
    tr.add_argument("--lr", type=float, default=1e-2)
    tr.add_argument("--lr-min", type=float, default=1e-3)
    tr.add_argument("--weight-decay", type=float, default=1e-4)
    tr.add_argument("--warmup", type=int, default=1, help="warmup epochs")
    tr.add_argument("--dropout", type=float, default=0.2)
    tr.add_argument("--max-seen-samples", type=int, default=None)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--eval-index", default=None, metavar="EMB:TSV")
    tr.add_argument("--eval-queries", default=None, metavar="EMB:TSV")

    ev = sub.add_parser("eval", help="rank index embeddings and report mMP@5 / mAP@5")
    ev.add_argument("--checkpoint", default=None, help="PRB1 file; omit for 64-d inputs")
    ev.add_argument("--index", required=True, metavar="EMB:TSV")
    ev.add_argument("--queries", required=True, metavar="EMB:TSV")
    ev.add_argument("--self-retrieval", action="store_true")
    ev.add_argument("--per-query", default=None, help="optional per-query dump file")
    ev.add_argument("--out", default=None, help="directory for run.json (default: cwd)")

    zs = sub.add_parser("zeroshot", help="project embeddings to 64-d without training")
    zs.add_argument("--embeddings", required=True)
    zs.add_argument("--mode", required=True, help="random_linear or avg_pool")
    zs.add_argument("--out", required=True, help="output EMB1 path")
    zs.add_argument("--seed", type=int, default=0)

    ins = sub.add_parser("inspect", help="describe an EMB1/PRB1/manifest file")
    ins.add_argument("--path", required=True)
    return parser


def _print_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "subcommand"}
    print(f"subcommand: {args.subcommand}")
    for key, val in resolved.items():
        print(f"  {key} = {val}")


def _write_run_record(out_dir, args, metrics=None) -> None:
    import numpy

    from . import __version__

    record = {
        "subcommand": args.subcommand,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "subcommand"},
        "seed": getattr(args, "seed", None),
        "versions": {
            "unifex": __version__,
            "numpy": numpy.__version__,
            "python": sys.version.split()[0],
        },
        "metrics": metrics,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    path = os.path.join(out_dir, "run.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _split_pair(value: str, flag: str):
    parts = value.rsplit(":", 1)
    if len(parts) != 2:
        raise UsageError(f"{flag} must look like embeddings.emb:manifest.tsv")
    return parts[0], parts[1]


class UsageError(Exception):
    pass


def _load_pair(value: str, flag: str):
    from .data import load_embeddings, load_manifest

    emb_path, man_path = _split_pair(value, flag)
    emb = load_embeddings(emb_path)
    man = load_manifest(man_path)
    if emb.rows != len(man):
        from .errors import DataError

        raise DataError(
            f"{flag}: embeddings have {emb.rows} rows but manifest has {len(man)} records"
        )
    return emb, man


def _cmd_curate(args) -> int:
    from .curation import CurationConfig, curate
    from .data import load_manifest, save_manifest

    cfg = CurationConfig(
        min_samples_per_class=args.min_samples,
        max_samples_per_class=args.max_samples,
        class_budget=args.class_budget,
        per_class_cap_for_subset=args.subset_cap,
        seed=args.seed,
    )
    manifest = load_manifest(args.manifest)
    curated, mapping = curate(manifest, cfg)
    os.makedirs(args.out, exist_ok=True)
    save_manifest(curated, os.path.join(args.out, "curated.tsv"))
    with open(os.path.join(args.out, "class_mapping.json"), "w", encoding="utf-8") as fh:
        json.dump({str(k): v for k, v in mapping.items()}, fh, sort_keys=True)
        fh.write("\n")
    summary = {
        "records_in": len(manifest),
        "records_out": len(curated),
        "classes_out": curated.num_classes,
    }
    _write_run_record(args.out, args, summary)
    print(
        f"curated {len(manifest)} -> {len(curated)} records, "
        f"{curated.num_classes} classes -> {args.out}/curated.tsv"
    )
    return 0


def _make_eval_hook(args):
    if args.eval_index is None and args.eval_queries is None:
        return None
    if args.eval_index is None or args.eval_queries is None:
        raise UsageError("--eval-index and --eval-queries must be given together")
    from .retrieval import evaluate

    index = _load_pair(args.eval_index, "--eval-index")
    queries = _load_pair(args.eval_queries, "--eval-queries")

    def hook(model, epoch):
        return evaluate(model, index, queries).mmp_at_5

    return hook


def _cmd_train(args) -> int:
    from .data import load_embeddings, load_manifest
    from .errors import DataError
    from .losses import LossConfig
    from .optim import TrainerConfig, count_trainable_params, train_probe
    from .probe import init_probe_model, save_checkpoint

    embeddings = load_embeddings(args.embeddings)
    manifest = load_manifest(args.manifest)
    if embeddings.rows != len(manifest):
        raise DataError(
            f"embeddings have {embeddings.rows} rows but manifest has {len(manifest)} records"
        )
    loss_cfg = LossConfig(
        variant=args.loss,
        m=args.m,
        s=args.s,
        k=args.k,
        m_min=args.m_min,
        m_max=args.m_max,
        curricular_alpha=args.curricular_alpha,
        adaface_h=args.adaface_h,
        adaface_ema=args.adaface_ema,
    )
    trainer_cfg = TrainerConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        lr_min=args.lr_min,
        weight_decay=args.weight_decay,
        warmup_epochs=args.warmup,
        seed=args.seed,
        max_seen_samples=args.max_seen_samples,
    )
    num_classes = int(manifest.class_ids.max()) + 1 if len(manifest) else 0
    model = init_probe_model(
        embeddings.dim,
        num_classes,
        subcenters=args.k,
        dropout_rate=args.dropout,
        seed=args.seed,
    )
    hook = _make_eval_hook(args)
    best, history = train_probe((embeddings, manifest), model, loss_cfg, trainer_cfg, hook)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "best.prb")
    save_checkpoint(best, loss_cfg, step=len(history), path=ckpt)
    hist_rows = [
        {"epoch": h.epoch, "loss": h.mean_loss, "lr": h.lr, "metric": h.metric}
        for h in history
    ]
    with open(os.path.join(args.out, "history.json"), "w", encoding="utf-8") as fh:
        json.dump(hist_rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    metrics = {
        "final_loss": history[-1].mean_loss,
        "best_metric": max((h.metric for h in history if h.metric is not None), default=None),
        "trainable_params": count_trainable_params(best),
    }
    _write_run_record(args.out, args, metrics)
    print(f"trained {len(history)} epochs; checkpoint -> {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    from .probe import load_checkpoint
    from .retrieval import evaluate

    index = _load_pair(args.index, "--index")
    queries = _load_pair(args.queries, "--queries")
    if args.checkpoint is not None:
        model, _, _ = load_checkpoint(args.checkpoint)
    else:
        model = None
        if index[0].dim != 64 or queries[0].dim != 64:
            raise UsageError(
                "without --checkpoint both embedding files must already be 64-d"
            )
    result = evaluate(model, index, queries, self_retrieval=args.self_retrieval or None)
    print("scope\tqueries\tmMP@5")
    print(f"overall\t{result.num_queries - result.num_excluded}\t{result.mmp_at_5:.6f}")
    for dom in sorted(result.per_domain):
        print(f"{dom}\t{result.per_domain_counts[dom]}\t{result.per_domain[dom]:.6f}")
    print(f"mAP@5\t\t{result.map_at_5:.6f}")
    if result.num_excluded:
        print(f"# {result.num_excluded} query(ies) without relevant index items excluded")
    if args.per_query:
        with open(args.per_query, "w", encoding="utf-8") as fh:
            fh.write("query_id\trank\tindex_id\tscore\n")
            for qi in range(result.neighbor_ids.shape[0]):
                qid = queries[1].sample_ids[qi]
                for rank, (iid, sc) in enumerate(
                    zip(result.neighbor_ids[qi], result.neighbor_scores[qi]), start=1
                ):
                    fh.write(f"{qid}\t{rank}\t{index[1].sample_ids[iid]}\t{sc:.6f}\n")
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    _write_run_record(
        out_dir,
        args,
        {"mmp_at_5": result.mmp_at_5, "map_at_5": result.map_at_5, "per_domain": result.per_domain},
    )
    return 0


def _cmd_zeroshot(args) -> int:
    from .data import EmbeddingMatrix, load_embeddings, save_embeddings
    from .errors import ConfigError
    from .probe import zero_shot_project

    mode = args.mode.replace("-", "_")
    if mode not in ("random_linear", "avg_pool"):
        raise UsageError(f"--mode must be random_linear or avg_pool, got {args.mode!r}")
    embeddings = load_embeddings(args.embeddings)
    try:
        projected = zero_shot_project(embeddings.values, mode, seed=args.seed)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    save_embeddings(EmbeddingMatrix(projected), args.out)
    _write_run_record(out_dir, args, {"rows": embeddings.rows, "dim_out": 64})
    print(f"projected {embeddings.rows} x {embeddings.dim} -> 64-d via {mode} -> {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    from .data import EMB1_MAGIC, load_embeddings, load_manifest
    from .probe import PRB1_MAGIC, load_checkpoint

    with open(args.path, "rb") as fh:
        magic = fh.read(4)
    if magic == EMB1_MAGIC:
        emb = load_embeddings(args.path)
        print(f"EMB1: rows={emb.rows} dim={emb.dim} dtype=float32")
    elif magic == PRB1_MAGIC:
        model, loss_cfg, step = load_checkpoint(args.path)
        print(
            f"PRB1: input_dim={model.input_dim} output_dim=64 "
            f"classes={model.classifier.num_classes} subcenters={model.classifier.num_subcenters} "
            f"dropout={model.dropout_rate} step={step} loss={loss_cfg.variant}"
        )
    else:
        manifest = load_manifest(args.path)
        splits = {s: int((manifest.splits == s).sum()) for s in sorted(set(manifest.splits))}
        domains = sorted(set(manifest.domains))
        print(
            f"manifest: records={len(manifest)} classes={manifest.num_classes} "
            f"splits={splits} domains={domains}"
        )
    return 0


_COMMANDS = {
    "curate": _cmd_curate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "zeroshot": _cmd_zeroshot,
    "inspect": _cmd_inspect,
}


def run(argv) -> int:
    """Parse argv and execute; returns the process exit code."""
    _apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    _print_config(args)
    from .errors import ConfigError, UnifexError

    try:
        return _COMMANDS[args.subcommand](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return _USAGE_EXIT
    except UnifexError as exc:
        diagnostic = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(diagnostic), file=sys.stderr)
        return _RUNTIME_EXIT


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
