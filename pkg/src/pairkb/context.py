"""Interleaved few-shot context assembly and curriculum training manifests.

The engine renders retrieval results into the demonstration structure a
downstream LLM consumes: an ordered list of (audio ref, caption) pairs
followed by the query audio ref. Training-side, it emits two-phase
curriculum manifests: phase 1 samples carry no demonstrations, phase 2
samples carry a seeded per-sample demonstration count in 1..K.

Manifest files are JSONL, one sample per line:

    {"phase": 2, "query_id": 7, "k": 3, "demonstrations": [12, 4, 9]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import KnowledgeBase, ScoredHit
from .errors import ValidationError
from .retrieval import IndexSet, RetrievalQuery, Strategy, retrieve

ASCENDING = "ascending_similarity"
DESCENDING = "descending_similarity"
DEFAULT_TRAIN_SHOTS = 5
MAX_EVAL_SHOTS = 10


@dataclass(frozen=True)
class Demonstration:
    audio_ref: str
    caption: str
    source_entry_id: int
    s_fused: float


@dataclass(frozen=True)
class InterleavedContext:
    """Demonstrations in prompt order; the query audio ref always renders last."""

    demonstrations: tuple[Demonstration, ...]
    query_audio_ref: str
    order_policy: str = ASCENDING


@dataclass(frozen=True)
class CurriculumSample:
    query_id: int
    k: int
    demonstration_ids: tuple[int, ...]


@dataclass(frozen=True)
class CurriculumManifest:
    phase: int
    samples: tuple[CurriculumSample, ...]

    def __post_init__(self):
        if self.phase not in (1, 2):
            raise ValidationError(f"phase must be 1 or 2, got {self.phase}")
        if self.phase == 1 and any(s.demonstration_ids for s in self.samples):
            raise ValidationError("phase 1 samples must carry no demonstrations")


def assemble_context(
    hits: Sequence[ScoredHit],
    kb: KnowledgeBase,
    query_audio_ref: str,
    k: int,
    order_policy: str = ASCENDING,
) -> InterleavedContext:
    """Turn the k best hits into an ordered demonstration list.

    ``hits`` must already be sorted by fused score descending (retrieve
    output order). The default ascending policy places the most similar
    demonstration last, adjacent to the query.
    """
    if order_policy not in (ASCENDING, DESCENDING):
        raise ValidationError(f"unknown order policy {order_policy!r}")
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    selected = list(hits[:k])
    if order_policy == ASCENDING:
        selected.reverse()
    demos = tuple(
        Demonstration(
            audio_ref=kb.entry(h.entry_id).audio_uri,
            caption=kb.entry(h.entry_id).caption,
            source_entry_id=h.entry_id,
            s_fused=h.s_fused,
        )
        for h in selected
    )
    return InterleavedContext(demos, query_audio_ref, order_policy)


def render_context_json(ctx: InterleavedContext) -> bytes:
    """Canonical UTF-8 JSON bytes; key order fixed, stable across runs."""
    body = {
        "demonstrations": [
            {"audio_ref": d.audio_ref, "caption": d.caption} for d in ctx.demonstrations
        ],
        "query_audio_ref": ctx.query_audio_ref,
    }
    return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def build_curriculum(
    trainset: KnowledgeBase,
    kb: KnowledgeBase,
    strategy: Strategy,
    max_shots: int,
    seed: int,
    indexes: IndexSet | None = None,
) -> tuple[CurriculumManifest, CurriculumManifest]:
    """Phase-1 (no demonstrations) and phase-2 (1..max_shots) manifests.

    Phase-2 demonstration ids come from retrieval with the query's own id
    excluded; per-sample shot counts are drawn uniformly from 1..max_shots
    with the given seed. Samples are ordered by query id, so manifests are
    identical across runs.
    """
    if max_shots < 1:
        raise ValidationError(f"max_shots must be >= 1, got {max_shots}")
    rng = np.random.default_rng(seed)
    query_ids = sorted(int(i) for i in trainset.ids)
    shot_counts = {qid: int(rng.integers(1, max_shots + 1)) for qid in query_ids}

    phase1 = []
    phase2 = []
    for qid in query_ids:
        entry = trainset.entry(qid)
        phase1.append(CurriculumSample(query_id=qid, k=0, demonstration_ids=()))
        query = RetrievalQuery(
            audio_emb=entry.audio_emb,
            text_emb=entry.text_emb,
            text_query=entry.caption,
            audio_ref=entry.audio_uri,
        )
        shots = shot_counts[qid]
        hits = retrieve(kb, indexes, strategy, query, shots, exclude_ids={qid} if qid in kb else None)
        phase2.append(
            CurriculumSample(
                query_id=qid,
                k=shots,
                demonstration_ids=tuple(h.entry_id for h in hits),
            )
        )
    return (
        CurriculumManifest(phase=1, samples=tuple(phase1)),
        CurriculumManifest(phase=2, samples=tuple(phase2)),
    )


def write_manifest(manifest: CurriculumManifest, path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in manifest.samples:
            line = {
                "phase": manifest.phase,
                "query_id": s.query_id,
                "k": s.k,
                "demonstrations": list(s.demonstration_ids),
            }
            fh.write(json.dumps(line, separators=(",", ":")) + "\n")
