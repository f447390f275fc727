"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see every line.
"""

import time

import numpy as np
import pytest

import unifex as ux
from unifex import losses as L
from oracles import (
    central_difference,
    make_cluster_benchmark,
    nearest_class_mean_accuracy,
    relative_error,
)

DEFAULT_RECIPE = dict(
    epochs=10, batch_size=128, lr=1e-2, lr_min=1e-3, weight_decay=1e-4, warmup_epochs=1
)

VARIANTS = [
    ("arcface", {}),
    ("subcenter-arcface", {}),
    ("li-arcface", {}),
    ("adacos", {}),
    ("curricularface", {}),
    ("adaface", {}),
    ("dynmargin-arcface", {"class_margins": (0.6, 0.5, 0.4, 0.3, 0.2)}),
]


def report(name: str, ok: bool, detail: str = ""):
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
    assert ok, f"{name}: {detail}"


def test_gradient_correctness_all_variants():
    t0 = time.time()
    worst = 0.0
    for variant, extra in VARIANTS:
        cfg = ux.LossConfig(variant=variant, k=3, **extra)
        for trial in range(20):
            rng = np.random.default_rng(1000 + trial)
            x = rng.standard_normal((8, 16))
            w = ux.ClassifierWeights(rng.standard_normal((5, 3, 16)))
            y = rng.integers(0, 5, 8)
            state = ux.init_loss_state(cfg, 5)
            _, dx, dw, _ = ux.loss_and_grad(cfg, x, w, y, state)
            # the per-step constants (AdaFace margin scaler etc.) are
            # stop-gradient: freeze them at the base point for the oracle
            aux = L._variant_aux(cfg, y, state, feature_norms=np.linalg.norm(x, axis=1))
            fd = central_difference(
                lambda xa, wa: L.loss_value(
                    cfg, xa, ux.ClassifierWeights(wa), y, state, _aux=aux
                ),
                {"xa": x, "wa": w.values},
                h=1e-6,
            )
            worst = max(worst, relative_error(dx, fd["xa"]), relative_error(dw, fd["wa"]))
    elapsed = time.time() - t0
    report(
        "gradient-correctness (7 variants x 20 instances)",
        worst <= 1e-4 and elapsed < 30.0,
        f"worst rel err {worst:.2e}, {elapsed:.1f}s",
    )


def test_reductions():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((8, 16))
    w1 = ux.ClassifierWeights(rng.standard_normal((5, 1, 16)))
    y = rng.integers(0, 5, 8)

    cfg0 = ux.LossConfig(variant="arcface", m=0.0, s=1.0, k=1)
    loss_arc, _, _, _ = ux.loss_and_grad(cfg0, x, w1, y, ux.init_loss_state(cfg0, 5))
    cos, _ = ux.cosine_logits(x / np.linalg.norm(x, axis=1, keepdims=True), w1)
    loss_ce, _ = ux.cross_entropy_from_logits(cos, y)
    ok_softmax = abs(loss_arc - loss_ce) <= 1e-12

    cfg_a = ux.LossConfig(variant="arcface", k=1)
    cfg_s = ux.LossConfig(variant="subcenter-arcface", k=1)
    ra = ux.loss_and_grad(cfg_a, x, w1, y, ux.init_loss_state(cfg_a, 5))
    rs = ux.loss_and_grad(cfg_s, x, w1, y, ux.init_loss_state(cfg_s, 5))
    ok_subcenter = (
        ra[0] == rs[0] and np.array_equal(ra[1], rs[1]) and np.array_equal(ra[2], rs[2])
    )

    cos_easy = rng.uniform(-0.4, 0.2, size=(6, 5))
    t_easy = rng.integers(0, 5, 6)
    cos_easy[np.arange(6), t_easy] = 0.95
    cur, _ = ux.curricular_transform(cos_easy, t_easy, 0.5, 30.0, ux.LossState())
    arc = ux.arcface_transform(cos_easy, t_easy, 0.5, 30.0)
    ok_curricular = np.array_equal(cur, arc)

    report(
        "reductions (m=0 softmax, K=1 bit-exact, curricular all-easy)",
        ok_softmax and ok_subcenter and ok_curricular,
        f"softmax diff {abs(loss_arc - loss_ce):.1e}",
    )


def test_dynamic_margin_mapping():
    stats = ux.ClassStats(counts={}, n_min=3, n_max=870)
    at_min = ux.dynamic_margin(3, stats, 0.2, 0.6)
    at_max = ux.dynamic_margin(870, stats, 0.2, 0.6)
    mid = ux.dynamic_margin((3 + 870) / 2, stats, 0.2, 0.6)
    grid = np.linspace(3, 870, 1000)
    vals = np.array([ux.dynamic_margin(n, stats, 0.2, 0.6) for n in grid])
    non_increasing = bool(np.all(np.diff(vals) <= 1e-15))
    ok = (
        abs(at_min - 0.6) <= 1e-12
        and abs(at_max - 0.2) <= 1e-12
        and abs(mid - 0.4) <= 1e-12
        and non_increasing
    )
    report(
        "dynamic-margin mapping (f(n_min)=0.6, f(n_max)=0.2, midpoint 0.4, monotone)",
        ok,
        f"f(n_min)={at_min}, f(n_max)={at_max}, mid={mid}",
    )


def test_scheduler_endpoints():
    cfg = ux.TrainerConfig(**DEFAULT_RECIPE, seed=0)
    spe = 137
    warm_end = ux.lr_at(cfg.warmup_epochs * spe - 1, spe, cfg)
    cosine_start = ux.lr_at(cfg.warmup_epochs * spe, spe, cfg)
    final = ux.lr_at(cfg.epochs * spe - 1, spe, cfg)
    ok = (
        abs(warm_end - 1e-2) <= 1e-12
        and abs(final - 1e-3) <= 1e-12
        and abs(warm_end - cosine_start) <= 1e-12
    )
    report(
        "scheduler endpoints (peak 1e-2, floor 1e-3, continuous boundary)",
        ok,
        f"warm_end={warm_end}, final={final}",
    )


def test_retrieval_oracles():
    rng = np.random.default_rng(11)
    exact = True
    for trial in range(200):
        m = int(rng.integers(10, 2001))
        q = int(rng.integers(1, 6))
        dim = int(rng.integers(2, 32))
        index = rng.standard_normal((m, dim))
        queries = rng.standard_normal((q, dim))
        if trial % 5 == 0:
            index = np.round(index)  # quantized scores force ties
            index[np.all(index == 0.0, axis=1)] = 1.0
        ids, _ = ux.top_k(queries, index, 5)
        qn = queries / np.linalg.norm(queries, axis=1, keepdims=True)
        ixn = index / np.linalg.norm(index, axis=1, keepdims=True)
        scores = qn @ ixn.T
        for qi in range(q):
            oracle = sorted(range(m), key=lambda j: (-scores[qi, j], j))[: min(5, m)]
            if list(ids[qi]) != oracle:
                exact = False

    formula_exact = True
    for trial in range(1000):
        m = int(rng.integers(5, 40))
        q = int(rng.integers(1, 5))
        rankings = [rng.permutation(m)[:5] for _ in range(q)]
        relevance = [
            set(int(v) for v in rng.choice(m, size=int(rng.integers(1, m)), replace=False))
            for _ in range(q)
        ]
        got = ux.mmp_at_k(rankings, relevance, 5)
        want = np.mean(
            [
                sum(1 for r in rankings[i][: min(len(relevance[i]), 5)] if int(r) in relevance[i])
                / min(len(relevance[i]), 5)
                for i in range(q)
            ]
        )
        if got != pytest.approx(want, abs=1e-15):
            formula_exact = False
    report(
        "retrieval oracles (top_k full-sort x200, mMP@5 formula x1000)",
        exact and formula_exact,
    )


def test_metric_scale_invariance():
    rng = np.random.default_rng(13)
    xi = rng.standard_normal((120, 64)).astype(np.float32)
    xq = rng.standard_normal((60, 64)).astype(np.float32)
    li = np.repeat(np.arange(12), 10)
    lq = np.repeat(np.arange(12), 5)
    man_i = ux.DatasetManifest.from_columns(
        [f"i{i}" for i in range(120)], li, ["index"] * 120, ["d"] * 120
    )
    man_q = ux.DatasetManifest.from_columns(
        [f"q{i}" for i in range(60)], lq, ["query"] * 60, ["d"] * 60
    )
    r1 = ux.evaluate(None, (ux.EmbeddingMatrix(xi), man_i), (ux.EmbeddingMatrix(xq), man_q))
    r2 = ux.evaluate(
        None, (ux.EmbeddingMatrix(xi * 7.3), man_i), (ux.EmbeddingMatrix(xq * 7.3), man_q)
    )
    ok = (
        np.array_equal(r1.neighbor_ids, r2.neighbor_ids)
        and abs(r1.mmp_at_5 - r2.mmp_at_5) <= 1e-12
        and abs(r1.map_at_5 - r2.map_at_5) <= 1e-12
    )
    report("metric invariance under x7.3 embedding scaling", ok)


@pytest.fixture(scope="module")
def benchmark():
    return make_cluster_benchmark(seed=7)


def _train_variant(bench, variant, extra, seed=0):
    k = extra.get("k", 3 if variant == "subcenter-arcface" else 1)
    loss_cfg = ux.LossConfig(variant=variant, m=0.5, s=30.0, k=k)
    model = ux.init_probe_model(256, 50, subcenters=k, dropout_rate=0.2, seed=seed)
    trainer = ux.TrainerConfig(**DEFAULT_RECIPE, seed=seed)
    best, _ = ux.train_probe(bench["train"], model, loss_cfg, trainer)
    return ux.evaluate(best, bench["index"], bench["query"]).mmp_at_5


def test_end_to_end_synthetic_benchmark(benchmark):
    t0 = time.time()
    ok_geometry = benchmark["min_angle_deg"] >= 25.0
    oracle_acc = nearest_class_mean_accuracy(benchmark["train"], benchmark["query"])
    ok_oracle = oracle_acc >= 0.95

    mmp = _train_variant(benchmark, "arcface", {})
    n_index = benchmark["index"][0].rows
    chance = 5.0 / n_index  # expected precision of a random ranking
    elapsed = time.time() - t0
    ok = ok_geometry and ok_oracle and mmp >= 0.90 and mmp >= chance + 0.6 and elapsed < 120.0
    report(
        "end-to-end synthetic benchmark (50 classes, default recipe)",
        ok,
        f"mMP@5={mmp:.4f}, oracle={oracle_acc:.3f}, chance={chance:.3f}, {elapsed:.1f}s",
    )


def test_loss_family_ordering(benchmark):
    mmp_arcface = _train_variant(benchmark, "arcface", {})
    deltas = {}
    for variant, _ in VARIANTS:
        if variant == "arcface":
            continue
        mmp = _train_variant(benchmark, variant, {})
        deltas[variant] = abs(mmp - mmp_arcface)
    ok = all(d <= 0.05 for d in deltas.values())
    report(
        "loss-family ordering (every variant within 0.05 of arcface)",
        ok,
        "max delta %.4f" % max(deltas.values()),
    )


def test_curation_determinism_and_counts():
    rng = np.random.default_rng(17)
    class_sizes = rng.integers(1, 13, size=81_000)
    class_ids = np.repeat(np.arange(81_000), class_sizes)
    n = class_ids.size
    man = ux.DatasetManifest.from_columns(
        np.array([f"s{i}" for i in range(n)], dtype=object),
        class_ids,
        np.array(["train"] * n, dtype=object),
        np.array(["landmarks"] * n, dtype=object),
    )
    out1 = ux.subsample_classes(man, class_budget=10_000, per_class_cap=10, seed=4)
    out2 = ux.subsample_classes(man, class_budget=10_000, per_class_cap=10, seed=4)
    uniq, cnt = np.unique(out1.class_ids, return_counts=True)
    byte1 = "\n".join(map(str, out1.sample_ids))
    byte2 = "\n".join(map(str, out2.sample_ids))
    ok = (
        uniq.size == 10_000
        and len(out1) <= 100_000
        and cnt.max() <= 10
        and byte1 == byte2
    )
    report(
        "curation determinism and counts (81k -> 10k classes, cap 10)",
        ok,
        f"classes={uniq.size}, samples={len(out1)}",
    )


def test_trainable_parameter_audit():
    model = ux.init_probe_model(1152, 34_800, subcenters=1)
    count = ux.count_trainable_params(model)
    formula = 1152 * 64 + 64 + 34_800 * 1 * 64
    ok = count == formula and abs(count / 2.3e6 - 1.0) <= 0.10
    report(
        "trainable-parameter audit (D_in=1152, C=34800, K=1)",
        ok,
        f"count={count} ({count / 1e6:.3f}M)",
    )
