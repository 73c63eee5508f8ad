"""Retrieval-side metrics and ablation sweeps.

Covers recall@k, zero-shot accuracy, similarity-distribution statistics
over retrieved hits, and the two ablation axes (fusion weight, top-k).
Sweeps are deterministic: fixed query order, fixed seeds, and CSV/JSON
emission that is byte-stable across runs.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import KnowledgeBase, dot
from .errors import (
    EmptyRetrievalError,
    InvalidKError,
    KeyMismatchError,
    MissingRankingError,
    UnsortedAxisError,
    ValidationError,
)
from .retrieval import (
    IndexSet,
    RetrievalQuery,
    Strategy,
    StrategyKind,
    retrieve,
)

METRICS = ("recall", "accuracy", "mean_audio_sim", "mean_text_sim")

CSV_COLUMNS = ("axis_value", "metric_name", "metric_value", "strategy", "kb", "k", "W", "seed")


@dataclass(frozen=True)
class EvalQuery:
    """A retrieval query tagged with an id and an optional reference caption embedding."""

    query_id: int
    query: RetrievalQuery
    ref_text_emb: np.ndarray | None = None


@dataclass(frozen=True)
class GroundTruth:
    """query id -> set of correct candidate ids (multi-reference friendly)."""

    relevant: Mapping[int, frozenset[int]]

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, Sequence[int]]) -> "GroundTruth":
        return cls({int(q): frozenset(int(i) for i in ids) for q, ids in mapping.items()})

    @classmethod
    def self_pairs(cls, query_ids: Sequence[int]) -> "GroundTruth":
        return cls({int(q): frozenset({int(q)}) for q in query_ids})

    def validate_pool(self, pool_ids) -> None:
        pool = {int(i) for i in pool_ids}
        for qid, ids in self.relevant.items():
            stray = ids - pool
            if stray:
                raise ValidationError(
                    f"truth for query {qid} references ids outside the pool: {sorted(stray)[:5]}"
                )


@dataclass(frozen=True)
class SimilarityStats:
    """Pooled similarity statistics over all retrieved hits, plus per-query means."""

    mean_audio_sim: float
    std_audio_sim: float
    mean_text_sim: float | None
    std_text_sim: float | None
    n: int
    per_query_audio_means: tuple[float, ...]
    per_query_text_means: tuple[float, ...]


@dataclass(frozen=True)
class SweepResult:
    """One ablation curve: strictly increasing axis values with metric maps."""

    axis: str
    points: tuple[tuple[float, dict[str, float]], ...]
    strategy: str
    kb_name: str
    k: int
    weight: float | None
    seed: int | None


def recall_at_k(
    rankings: Mapping[int, Sequence[int]], truth: GroundTruth, k: int
) -> float:
    """Fraction of truth queries whose top-k ranking hits >= 1 correct id."""
    if k < 1:
        raise InvalidKError(f"k must be >= 1, got {k}")
    if not truth.relevant:
        raise ValidationError("ground truth is empty")
    hit = 0
    for qid, correct in truth.relevant.items():
        if qid not in rankings:
            raise MissingRankingError(f"no ranking for query {qid}")
        if correct & set(rankings[qid][:k]):
            hit += 1
    return hit / len(truth.relevant)


def zero_shot_accuracy(
    predictions: Mapping[int, int], truth: Mapping[int, int]
) -> float:
    """Exact-match fraction over aligned query keys."""
    if set(predictions) != set(truth):
        raise KeyMismatchError("prediction and truth key sets differ")
    if not truth:
        raise ValidationError("truth is empty")
    return sum(1 for q, c in truth.items() if predictions[q] == c) / len(truth)


def _text_reference(eq: EvalQuery) -> np.ndarray | None:
    return eq.ref_text_emb if eq.ref_text_emb is not None else eq.query.text_emb


def _run_queries(
    queries: Sequence[EvalQuery],
    kb: KnowledgeBase,
    strategy: Strategy,
    k: int,
    indexes: IndexSet | None,
    exclude_self: bool,
    exact_threshold: int,
):
    """Per-query retrievals plus pooled audio/text similarities of the hits."""
    rankings: dict[int, list[int]] = {}
    audio_sims: list[float] = []
    text_sims: list[float] = []
    per_query_audio: list[float] = []
    per_query_text: list[float] = []
    for eq in queries:
        exclude = {eq.query_id} if exclude_self and eq.query_id in kb else None
        hits = retrieve(
            kb, indexes, strategy, eq.query, k, exclude, exact_threshold=exact_threshold
        )
        rankings[eq.query_id] = [h.entry_id for h in hits]
        q_audio = [h.s_audio for h in hits]
        audio_sims.extend(q_audio)
        if q_audio:
            per_query_audio.append(float(np.mean(q_audio)))
        ref = _text_reference(eq)
        if ref is not None and hits:
            q_text = [dot(ref, kb.entry(h.entry_id).text_emb) for h in hits]
            text_sims.extend(q_text)
            per_query_text.append(float(np.mean(q_text)))
    return rankings, audio_sims, text_sims, per_query_audio, per_query_text


def similarity_stats(
    queries: Sequence[EvalQuery],
    kb: KnowledgeBase,
    strategy: Strategy,
    k: int,
    *,
    indexes: IndexSet | None = None,
    exclude_self: bool = True,
    exact_threshold: int = 100_000,
) -> SimilarityStats:
    """Audio/text similarity distribution over all queries' top-k hits.

    Audio similarity is the hit's same-modality audio score. Text
    similarity compares each hit's caption embedding against the query's
    reference caption embedding when provided, else against its text
    query embedding; queries with neither contribute no text stats.
    """
    if not queries:
        raise ValidationError("no queries")
    _, audio_sims, text_sims, pq_audio, pq_text = _run_queries(
        queries, kb, strategy, k, indexes, exclude_self, exact_threshold
    )
    if not audio_sims:
        raise EmptyRetrievalError("retrieval produced no hits to aggregate")
    return SimilarityStats(
        mean_audio_sim=float(np.mean(audio_sims)),
        std_audio_sim=float(np.std(audio_sims)),
        mean_text_sim=float(np.mean(text_sims)) if text_sims else None,
        std_text_sim=float(np.std(text_sims)) if text_sims else None,
        n=len(audio_sims),
        per_query_audio_means=tuple(pq_audio),
        per_query_text_means=tuple(pq_text),
    )


def _check_metrics(metrics: Sequence[str]) -> tuple[str, ...]:
    out = tuple(metrics)
    for m in out:
        if m not in METRICS:
            raise ValidationError(f"unknown metric {m!r}; choose from {METRICS}")
    if not out:
        raise ValidationError("at least one metric required")
    return out


def _check_axis(values: Sequence[float], axis: str) -> list[float]:
    vals = [float(v) for v in values]
    if not vals:
        raise ValidationError(f"{axis} axis is empty")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise UnsortedAxisError(f"{axis} values must be strictly increasing: {vals}")
    return vals


def _point_metrics(
    metrics: Sequence[str],
    rankings: dict[int, list[int]],
    truth: GroundTruth,
    k: int,
    audio_sims: list[float],
    text_sims: list[float],
) -> dict[str, float]:
    point: dict[str, float] = {}
    for m in metrics:
        if m == "recall":
            point[m] = recall_at_k(rankings, truth, k)
        elif m == "accuracy":
            point[m] = recall_at_k(rankings, truth, 1)
        elif m == "mean_audio_sim":
            if not audio_sims:
                raise EmptyRetrievalError("no hits for mean_audio_sim")
            point[m] = float(np.mean(audio_sims))
        else:
            if not text_sims:
                raise EmptyRetrievalError("no text reference for mean_text_sim")
            point[m] = float(np.mean(text_sims))
    return point


def evaluate(
    queries: Sequence[EvalQuery],
    kb: KnowledgeBase,
    strategy: Strategy,
    k: int,
    metrics: Sequence[str] = ("recall",),
    *,
    truth: GroundTruth | None = None,
    indexes: IndexSet | None = None,
    exclude_self: bool = True,
    exact_threshold: int = 100_000,
) -> dict[str, float]:
    """Single-point evaluation: run retrieval once, compute the metrics."""
    metrics = _check_metrics(metrics)
    if truth is None:
        truth = GroundTruth.self_pairs([q.query_id for q in queries])
    rankings, audio_sims, text_sims, _, _ = _run_queries(
        queries, kb, strategy, k, indexes, exclude_self, exact_threshold
    )
    return _point_metrics(metrics, rankings, truth, k, audio_sims, text_sims)


def weight_sweep(
    queries: Sequence[EvalQuery],
    kb: KnowledgeBase,
    w_values: Sequence[float],
    k: int,
    metrics: Sequence[str] = ("recall",),
    *,
    truth: GroundTruth | None = None,
    indexes: IndexSet | None = None,
    exclude_self: bool = True,
    exact_threshold: int = 100_000,
    seed: int | None = None,
) -> SweepResult:
    """One metric point per fusion weight, same retrieval inputs throughout."""
    vals = _check_axis(w_values, "W")
    if vals[0] < 0.0 or vals[-1] > 1.0:
        raise ValidationError(f"W values must lie in [0, 1]: {vals}")
    metrics = _check_metrics(metrics)
    if truth is None:
        truth = GroundTruth.self_pairs([q.query_id for q in queries])
    points = []
    for w in vals:
        strategy = Strategy(StrategyKind.PAIR_TO_PAIR, w)
        rankings, audio_sims, text_sims, _, _ = _run_queries(
            queries, kb, strategy, k, indexes, exclude_self, exact_threshold
        )
        points.append((w, _point_metrics(metrics, rankings, truth, k, audio_sims, text_sims)))
    return SweepResult(
        axis="W",
        points=tuple(points),
        strategy=StrategyKind.PAIR_TO_PAIR.value,
        kb_name=kb.name,
        k=k,
        weight=None,
        seed=seed,
    )


def topk_sweep(
    queries: Sequence[EvalQuery],
    kb: KnowledgeBase,
    k_values: Sequence[int],
    strategy: Strategy,
    metrics: Sequence[str] = ("recall",),
    *,
    truth: GroundTruth | None = None,
    indexes: IndexSet | None = None,
    exclude_self: bool = True,
    exact_threshold: int = 100_000,
    seed: int | None = None,
) -> SweepResult:
    """One metric point per top-k value; k larger than the KB clips."""
    vals = _check_axis(k_values, "top_k")
    if vals[0] < 1:
        raise ValidationError(f"k values must be positive: {vals}")
    metrics = _check_metrics(metrics)
    if truth is None:
        truth = GroundTruth.self_pairs([q.query_id for q in queries])
    points = []
    for kv in vals:
        kv = int(kv)
        rankings, audio_sims, text_sims, _, _ = _run_queries(
            queries, kb, strategy, kv, indexes, exclude_self, exact_threshold
        )
        points.append(
            (float(kv), _point_metrics(metrics, rankings, truth, kv, audio_sims, text_sims))
        )
    return SweepResult(
        axis="top_k",
        points=tuple(points),
        strategy=strategy.kind.value,
        kb_name=kb.name,
        k=int(vals[-1]),
        weight=strategy.weight,
        seed=seed,
    )


def sweep_to_csv(result: SweepResult) -> str:
    """CSV emission, one row per (axis value, metric)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for value, metric_map in result.points:
        for name, metric_value in metric_map.items():
            k = int(value) if result.axis == "top_k" else result.k
            w = value if result.axis == "W" else result.weight
            writer.writerow(
                [
                    value,
                    name,
                    repr(metric_value),
                    result.strategy,
                    result.kb_name,
                    k,
                    "" if w is None else w,
                    "" if result.seed is None else result.seed,
                ]
            )
    return buf.getvalue()


def sweep_to_json(result: SweepResult) -> str:
    body = {
        "axis": result.axis,
        "strategy": result.strategy,
        "kb": result.kb_name,
        "k": result.k,
        "W": result.weight,
        "seed": result.seed,
        "points": [{"value": v, "metrics": m} for v, m in result.points],
    }
    return json.dumps(body, indent=2)
