"""Refined knowledge-base construction.

Each pair's normalized audio and text embeddings are concatenated into a
single vector; each trainset pair, concatenated the same way, queries the
KB by cosine over these concatenations; the union of all top-k hits forms
the refined KB. Because both halves are unit vectors, the concatenation
cosine equals the mean of the per-modality similarities, i.e. exactly the
pair fused score at weight 0.5 - the filtering step and the retrieval
scoring are one mechanism.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .core import KnowledgeBase, PairEntry, rank_topk
from .errors import EmptyKBError, EmptyTrainsetError, SchemaMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConcatEmbedding:
    """A pair's [audio ; text] concatenation, tagged with its source entry."""

    values: np.ndarray
    parent_id: int


@dataclass(frozen=True)
class RefineReport:
    """Audit trail of one refinement run."""

    input_kb_size: int
    trainset_size: int
    k: int
    exclude_self: bool
    output_size: int
    per_query_hits: tuple[tuple[int, tuple[tuple[int, float], ...]], ...]

    @property
    def compression_ratio(self) -> float:
        return self.input_kb_size / self.output_size if self.output_size else float("inf")

    def to_json(self) -> str:
        body = {
            "input_kb_size": self.input_kb_size,
            "trainset_size": self.trainset_size,
            "k": self.k,
            "exclude_self": self.exclude_self,
            "output_size": self.output_size,
            "compression_ratio": round(self.compression_ratio, 4),
            "per_query_hits": [
                {"query_id": qid, "hits": [{"id": i, "score": s} for i, s in hits]}
                for qid, hits in self.per_query_hits
            ],
        }
        return json.dumps(body, indent=2)


def concat_embedding(entry: PairEntry) -> ConcatEmbedding:
    """Exact [audio ; text] concatenation; not re-normalized as a whole."""
    values = np.concatenate([entry.audio_emb, entry.text_emb])
    return ConcatEmbedding(values=values, parent_id=entry.id)


def refine_kb(
    kb: KnowledgeBase,
    trainset: KnowledgeBase,
    k: int,
    exclude_self: bool | None = None,
) -> tuple[KnowledgeBase, RefineReport]:
    """Union of every trainset query's top-k concatenation-cosine neighbors.

    ``exclude_self`` defaults to True exactly when trainset ids intersect
    KB ids (a pair retrieving itself adds nothing). Entry payloads are
    copied verbatim into the refined KB; output order follows the source
    KB, so the result is deterministic.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if kb.schema != trainset.schema:
        raise SchemaMismatchError(
            f"KB schema {kb.schema} != trainset schema {trainset.schema}"
        )
    if len(kb) == 0:
        raise EmptyKBError("cannot refine an empty KB")
    if len(trainset) == 0:
        raise EmptyTrainsetError("cannot refine with an empty trainset")

    kb_ids = set(kb.ids.tolist())
    if exclude_self is None:
        exclude_self = any(int(e.id) in kb_ids for e in trainset)

    concat = kb.concat_matrix().astype(np.float64)
    norms = np.linalg.norm(concat, axis=1)
    queries = trainset.concat_matrix().astype(np.float64)
    query_norms = np.linalg.norm(queries, axis=1)

    # One (trainset x KB) cosine block; desk-scale corpora fit comfortably.
    scores = (queries / query_norms[:, None]) @ (concat / norms[:, None]).T

    kept: set[int] = set()
    per_query: list[tuple[int, tuple[tuple[int, float], ...]]] = []
    order = np.argsort(trainset.ids)
    for row in order:
        qid = int(trainset.ids[row])
        ids = kb.ids
        row_scores = scores[row]
        if exclude_self and qid in kb_ids:
            keep = ids != np.uint64(qid)
            hits = rank_topk(ids[keep], row_scores[keep], k)
        else:
            hits = rank_topk(ids, row_scores, k)
        kept.update(i for i, _ in hits)
        per_query.append((qid, tuple(hits)))

    refined = kb.subset(kept, name="refined")
    report = RefineReport(
        input_kb_size=len(kb),
        trainset_size=len(trainset),
        k=k,
        exclude_self=bool(exclude_self),
        output_size=len(refined),
        per_query_hits=tuple(per_query),
    )
    logger.info(
        "refined %d -> %d entries (k=%d, %d queries, ratio %.2fx)",
        len(kb), len(refined), k, len(trainset), report.compression_ratio,
    )
    return refined, report
