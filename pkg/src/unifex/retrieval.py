"""Exact cosine top-k retrieval and the mMP@5 / mAP@5 metrics.

The precision metric follows the Google Universal Image Embedding
Challenge definition: precision over the top min(n_q, 5) retrieved items,
averaged over queries, where n_q is the number of index images relevant
to query q (same instance-level class). Ties in cosine score break by
ascending index id so rankings are platform-deterministic; search is
always exact (no approximate index).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import DatasetManifest, EmbeddingMatrix
from .errors import ConfigError, ShapeError
from .probe import ProbeModel, project

# above this many index rows, select candidates with argpartition first
_PARTITION_THRESHOLD = 8192


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0.0, 1.0, norms)


def _top_row(row: np.ndarray, k: int) -> np.ndarray:
    m = row.size
    if m > _PARTITION_THRESHOLD and k < m // 4:
        part = np.argpartition(-row, k - 1)
        pivot = row[part[k - 1]]
        cand = np.flatnonzero(row >= pivot)  # ascending ids
        return cand[np.argsort(-row[cand], kind="stable")][:k]
    return np.argsort(-row, kind="stable")[:k]


def _top_from_scores(scores: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    k_eff = min(k, scores.shape[1])
    ids = np.empty((scores.shape[0], k_eff), dtype=np.int64)
    for i in range(scores.shape[0]):
        ids[i] = _top_row(scores[i], k_eff)
    return ids, np.take_along_axis(scores, ids, axis=1)


def top_k(queries, index, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest index rows by cosine similarity, per query.

    Inputs are row-normalized internally. Returns (ids, scores), each
    Q x min(k, M), sorted by descending score then ascending id.
    """
    if k <= 0:
        raise ConfigError("k must be positive")
    q = _unit_rows(np.asarray(queries, dtype=np.float64))
    ix = _unit_rows(np.asarray(index, dtype=np.float64))
    if q.ndim != 2 or ix.ndim != 2 or q.shape[1] != ix.shape[1]:
        raise ShapeError(f"query dim {q.shape} does not match index dim {ix.shape}")
    return _top_from_scores(q @ ix.T, k)


def _precision_terms(ranking, relevant: set, k: int) -> float:
    t = min(len(relevant), k)
    hits = sum(1 for idx in ranking[:t] if int(idx) in relevant)
    return hits / t


def _ap_at_k(ranking, relevant: set, k: int) -> float:
    hits = 0
    total = 0.0
    for j, idx in enumerate(ranking[:k], start=1):
        if int(idx) in relevant:
            hits += 1
            total += hits / j
    return total / min(len(relevant), k)


def _checked(rankings, relevance) -> list[tuple[Sequence, set]]:
    if len(relevance) == 0:
        raise ConfigError("empty query set")
    if len(rankings) != len(relevance):
        raise ShapeError("rankings and relevance must have one entry per query")
    pairs = [(rankings[i], set(relevance[i])) for i in range(len(relevance))]
    if all(len(rel) == 0 for _, rel in pairs):
        raise ConfigError("no query has any relevant index item")
    return pairs


def mmp_at_k(rankings, relevance, k: int = 5) -> float:
    """Mean precision over the top min(n_q, k) ranks; queries without any
    relevant index item are excluded from the mean."""
    pairs = _checked(rankings, relevance)
    scores = [_precision_terms(r, rel, k) for r, rel in pairs if rel]
    return float(np.mean(scores))


def map_at_k(rankings, relevance, k: int = 5) -> float:
    """Mean average precision at k with the min(n_q, k) denominator."""
    pairs = _checked(rankings, relevance)
    scores = [_ap_at_k(r, rel, k) for r, rel in pairs if rel]
    return float(np.mean(scores))


@dataclass
class EvalResult:
    neighbor_ids: np.ndarray
    neighbor_scores: np.ndarray
    mmp_at_5: float
    map_at_5: float
    per_domain: dict[str, float]
    per_domain_counts: dict[str, int]
    num_queries: int
    num_excluded: int


def evaluate(
    model: ProbeModel | None,
    index: tuple[EmbeddingMatrix, DatasetManifest],
    queries: tuple[EmbeddingMatrix, DatasetManifest],
    k: int = 5,
    self_retrieval: bool | None = None,
) -> EvalResult:
    """Project (eval mode), rank by cosine, and score mMP@k / mAP@k.

    Relevance is same-class membership from the manifests. `model=None`
    evaluates the embeddings as they are (already 64-d / zero-shot
    projected). Self-retrieval (auto-detected when index and queries are
    the same objects) excludes each query's own row from its ranking and
    its relevance set.
    """
    ix_emb, ix_man = index
    q_emb, q_man = queries
    if ix_emb.rows != len(ix_man) or q_emb.rows != len(q_man):
        raise ShapeError("manifest record count must match embedding rows")
    if self_retrieval is None:
        self_retrieval = ix_emb is q_emb and ix_man is q_man

    if model is not None:
        yq, _ = project(model, q_emb.values, mode="eval")
        yi, _ = project(model, ix_emb.values, mode="eval")
    else:
        yq = np.asarray(q_emb.values, dtype=np.float64)
        yi = np.asarray(ix_emb.values, dtype=np.float64)
    if k <= 0:
        raise ConfigError("k must be positive")

    scores = _unit_rows(yq) @ _unit_rows(yi).T
    if self_retrieval:
        if yq.shape[0] != yi.shape[0]:
            raise ConfigError("self-retrieval requires index and query sets of equal size")
        np.fill_diagonal(scores, -2.0)  # below any cosine, removes the self match
    ids, top_scores = _top_from_scores(scores, k)

    ix_classes = ix_man.class_ids
    class_members: dict[int, np.ndarray] = {
        int(c): np.flatnonzero(ix_classes == c) for c in np.unique(ix_classes)
    }
    relevance: list[set] = []
    for qi in range(q_emb.rows):
        members = class_members.get(int(q_man.class_ids[qi]))
        rel = set() if members is None else set(int(i) for i in members)
        if self_retrieval:
            rel.discard(qi)
        relevance.append(rel)

    mmp = mmp_at_k(ids, relevance, k)
    mp5 = map_at_k(ids, relevance, k)
    excluded = sum(1 for rel in relevance if not rel)

    per_domain: dict[str, float] = {}
    per_domain_counts: dict[str, int] = {}
    domains = q_man.domains
    for dom in sorted(set(domains)):
        rows = [i for i in np.flatnonzero(domains == dom) if relevance[i]]
        if not rows:
            continue
        per_domain[dom] = float(
            np.mean([_precision_terms(ids[i], relevance[i], k) for i in rows])
        )
        per_domain_counts[dom] = len(rows)

    return EvalResult(
        neighbor_ids=ids,
        neighbor_scores=top_scores,
        mmp_at_5=mmp,
        map_at_5=mp5,
        per_domain=per_domain,
        per_domain_counts=per_domain_counts,
        num_queries=q_emb.rows,
        num_excluded=excluded,
    )
