"""The five retrieval strategies over a knowledge base.

Scores follow the weighted pair formulation: per-modality similarities
are plain inner products on normalized embeddings, and pair strategies
fuse them as ``W * s_audio + (1 - W) * s_text``. Cross-modal strategies
(audio_to_text, audio_to_mixture) additionally require audio and text
embeddings to live in one shared space (equal dims).

Small KBs are scored by exact full scan. Above ``exact_threshold`` the
engine over-fetches per-modality candidates from the single-field
indexes, unions them, exact-rescores, and cuts to k; the fetch size
escalates until the k-th fused score provably beats the best possible
unseen candidate, so with flat indexes the result equals the full-scan
ranking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .core import KnowledgeBase, PairEntry, ScoredHit, as_vector, dot, rank_topk
from .errors import (
    CaptionFailedError,
    DimMismatchError,
    EmptyKBError,
    EncodeFailedError,
    InvalidKError,
    MissingTextQueryError,
    ProviderError,
    SharedSpaceRequiredError,
    ValidationError,
)
from .index import FlatIndex, IndexField, VectorIndex, build_flat

logger = logging.getLogger(__name__)

DEFAULT_WEIGHT = 0.5
DEFAULT_EXACT_THRESHOLD = 100_000
DEFAULT_OVERFETCH_FACTOR = 4


class StrategyKind(str, Enum):
    AUDIO_TO_AUDIO = "audio_to_audio"
    AUDIO_TO_TEXT = "audio_to_text"
    AUDIO_TO_MIXTURE = "audio_to_mixture"
    PAIR_TO_PAIR = "pair_to_pair"
    GENERATIVE_PAIR_TO_PAIR = "generative_pair_to_pair"


PAIR_KINDS = {StrategyKind.PAIR_TO_PAIR, StrategyKind.GENERATIVE_PAIR_TO_PAIR}
CROSS_MODAL_KINDS = {StrategyKind.AUDIO_TO_TEXT, StrategyKind.AUDIO_TO_MIXTURE}


@dataclass(frozen=True)
class Strategy:
    """A retrieval strategy tag plus, for pair strategies, the fusion weight."""

    kind: StrategyKind
    weight: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.kind in PAIR_KINDS:
            if self.weight is None:
                raise ValidationError(f"{self.kind.value} requires a weight")
            if not 0.0 <= self.weight <= 1.0:
                raise ValidationError(f"weight {self.weight} outside [0, 1]")
        elif self.weight is not None:
            raise ValidationError(f"{self.kind.value} takes no weight")


@dataclass(frozen=True)
class RetrievalQuery:
    """Query-side audio embedding plus optional text query material."""

    audio_emb: np.ndarray
    text_emb: np.ndarray | None = None
    text_query: str | None = None
    audio_ref: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "audio_emb", as_vector(self.audio_emb))
        if self.text_emb is not None:
            object.__setattr__(self, "text_emb", as_vector(self.text_emb))


@dataclass(frozen=True)
class IndexSet:
    """The per-field indexes a retrieval call may draw candidates from."""

    audio: VectorIndex | None = None
    text: VectorIndex | None = None
    pair_concat: VectorIndex | None = None

    @classmethod
    def flat_for(cls, kb: KnowledgeBase) -> "IndexSet":
        return cls(
            audio=build_flat(kb, IndexField.AUDIO),
            text=build_flat(kb, IndexField.TEXT),
        )


# --- per-entry scoring (the spec'd scoring primitives) -----------------------


def score_audio_to_audio(query: RetrievalQuery, entry: PairEntry) -> ScoredHit:
    s = dot(query.audio_emb, entry.audio_emb)
    return ScoredHit(entry.id, s_audio=s, s_text=None, s_fused=s)


def score_audio_to_text(query: RetrievalQuery, entry: PairEntry) -> ScoredHit:
    if entry.audio_emb.shape[0] != entry.text_emb.shape[0]:
        raise SharedSpaceRequiredError(
            "audio_to_text needs audio and text embeddings in a shared space"
        )
    return ScoredHit(
        entry.id,
        s_audio=dot(query.audio_emb, entry.audio_emb),
        s_text=None,
        s_fused=dot(query.audio_emb, entry.text_emb),
    )


def score_audio_to_mixture(query: RetrievalQuery, entry: PairEntry) -> ScoredHit:
    if entry.audio_emb.shape[0] != entry.text_emb.shape[0]:
        raise SharedSpaceRequiredError(
            "audio_to_mixture needs audio and text embeddings in a shared space"
        )
    s_aa = dot(query.audio_emb, entry.audio_emb)
    s_at = dot(query.audio_emb, entry.text_emb)
    return ScoredHit(entry.id, s_audio=s_aa, s_text=None, s_fused=(s_aa + s_at) / 2.0)


def score_pair_to_pair(query: RetrievalQuery, entry: PairEntry, weight: float) -> ScoredHit:
    if query.text_emb is None:
        raise MissingTextQueryError("pair_to_pair requires a text query embedding")
    s_a = dot(query.audio_emb, entry.audio_emb)
    s_t = dot(query.text_emb, entry.text_emb)
    return ScoredHit(
        entry.id,
        s_audio=s_a,
        s_text=s_t,
        s_fused=weight * s_a + (1.0 - weight) * s_t,
    )


# --- vectorized scoring -------------------------------------------------------


def _check_preconditions(kb: KnowledgeBase, strategy: Strategy, query: RetrievalQuery) -> None:
    schema = kb.schema
    if query.audio_emb.shape[0] != schema.audio_dim:
        raise DimMismatchError(
            f"query audio dim {query.audio_emb.shape[0]} != KB audio dim {schema.audio_dim}"
        )
    if strategy.kind in CROSS_MODAL_KINDS and schema.audio_dim != schema.text_dim:
        raise SharedSpaceRequiredError(
            f"{strategy.kind.value} requires audio_dim == text_dim "
            f"(got {schema.audio_dim} vs {schema.text_dim})"
        )
    if strategy.kind in PAIR_KINDS:
        if query.text_emb is None:
            raise MissingTextQueryError(f"{strategy.kind.value} requires a text query embedding")
        if query.text_emb.shape[0] != schema.text_dim:
            raise DimMismatchError(
                f"query text dim {query.text_emb.shape[0]} != KB text dim {schema.text_dim}"
            )


def _exact_scores(
    kb: KnowledgeBase, strategy: Strategy, query: RetrievalQuery, rows: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None, np.ndarray]:
    """(ids, s_audio, s_text|None, s_fused) for the given KB rows, float64."""
    a_q = query.audio_emb.astype(np.float64)
    audio = kb.audio_matrix[rows].astype(np.float64)
    text = kb.text_matrix[rows].astype(np.float64)
    s_audio = audio @ a_q
    s_text = None

    kind = strategy.kind
    if kind == StrategyKind.AUDIO_TO_AUDIO:
        fused = s_audio
    elif kind == StrategyKind.AUDIO_TO_TEXT:
        fused = text @ a_q
    elif kind == StrategyKind.AUDIO_TO_MIXTURE:
        fused = (s_audio + text @ a_q) / 2.0
    else:
        t_q = query.text_emb.astype(np.float64)
        s_text = text @ t_q
        w = float(strategy.weight)
        fused = w * s_audio + (1.0 - w) * s_text
    return kb.ids[rows], s_audio, s_text, fused


def _hits_from_scores(ids, s_audio, s_text, fused, k: int) -> list[ScoredHit]:
    top = rank_topk(ids, fused, k)
    pos = {int(i): j for j, i in enumerate(ids)}
    out = []
    for entry_id, score in top:
        j = pos[entry_id]
        out.append(
            ScoredHit(
                entry_id,
                s_audio=float(s_audio[j]),
                s_text=None if s_text is None else float(s_text[j]),
                s_fused=score,
            )
        )
    return out


def _candidate_rows(kb: KnowledgeBase, exclude_ids) -> np.ndarray:
    if not exclude_ids:
        return np.arange(len(kb))
    excl = np.fromiter(map(int, exclude_ids), dtype=np.uint64)
    return np.nonzero(~np.isin(kb.ids, excl))[0]


def _fusion_lists(
    strategy: Strategy, query: RetrievalQuery, indexes: IndexSet
) -> list[tuple[VectorIndex, np.ndarray, float]] | None:
    """(index, query vector, weight) triples whose weighted sum is the fused score."""
    kind = strategy.kind
    if kind == StrategyKind.AUDIO_TO_AUDIO:
        lists = [(indexes.audio, query.audio_emb, 1.0)]
    elif kind == StrategyKind.AUDIO_TO_TEXT:
        lists = [(indexes.text, query.audio_emb, 1.0)]
    elif kind == StrategyKind.AUDIO_TO_MIXTURE:
        lists = [(indexes.audio, query.audio_emb, 0.5), (indexes.text, query.audio_emb, 0.5)]
    else:
        w = float(strategy.weight)
        lists = [(indexes.audio, query.audio_emb, w), (indexes.text, query.text_emb, 1.0 - w)]
    lists = [(idx, q, w) for idx, q, w in lists if w > 0.0]
    if any(idx is None for idx, _, _ in lists):
        return None
    return lists


def _overfetch_topk(
    kb: KnowledgeBase,
    strategy: Strategy,
    query: RetrievalQuery,
    k: int,
    exclude_ids,
    indexes: IndexSet,
    overfetch_factor: int,
) -> list[ScoredHit] | None:
    lists = _fusion_lists(strategy, query, indexes)
    if lists is None:
        return None
    n_eff = len(_candidate_rows(kb, exclude_ids))
    if n_eff == 0:
        return []
    m = max(k * overfetch_factor, k)
    while True:
        fetched = [idx.search(q, min(m, len(idx)), exclude_ids) for idx, q, _ in lists]
        union = sorted({i for r in fetched for i in r.ids()})
        covered = len(union) >= n_eff or any(len(r) < min(m, n_eff) for r in fetched)
        rows = np.fromiter((kb.position(i) for i in union), dtype=np.int64)
        ids, s_audio, s_text, fused = _exact_scores(kb, strategy, query, rows)
        if covered or m >= n_eff:
            return _hits_from_scores(ids, s_audio, s_text, fused, k)
        if len(union) >= k and all(len(r) >= m for r in fetched):
            # Any unseen entry scores at most the weighted sum of the m-th
            # per-list scores; if the k-th fused candidate strictly beats
            # that bound, the union already contains the exact answer.
            bound = sum(w * r.scores()[m - 1] for (_, _, w), r in zip(lists, fetched))
            kth = sorted(fused, reverse=True)[k - 1]
            if kth > bound:
                return _hits_from_scores(ids, s_audio, s_text, fused, k)
        m *= 4
        logger.debug("over-fetch escalation to m=%d (n_eff=%d)", m, n_eff)


def retrieve(
    kb: KnowledgeBase,
    indexes: IndexSet | None,
    strategy: Strategy,
    query: RetrievalQuery,
    k: int,
    exclude_ids=None,
    *,
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD,
    overfetch_factor: int = DEFAULT_OVERFETCH_FACTOR,
) -> list[ScoredHit]:
    """Top-k entries by the strategy's fused score, ties by ascending id.

    Results are exact (equal to a full scan) whenever the KB is at or
    below ``exact_threshold`` or the index set is flat; with clustered
    indexes above the threshold, recall follows the index's probe bounds.
    """
    if k < 1:
        raise InvalidKError(f"k must be >= 1, got {k}")
    if len(kb) == 0:
        raise EmptyKBError("retrieve over an empty KB")
    _check_preconditions(kb, strategy, query)

    if indexes is not None and len(kb) > exact_threshold:
        hits = _overfetch_topk(
            kb, strategy, query, k, exclude_ids, indexes, overfetch_factor
        )
        if hits is not None:
            return hits

    rows = _candidate_rows(kb, exclude_ids)
    ids, s_audio, s_text, fused = _exact_scores(kb, strategy, query, rows)
    return _hits_from_scores(ids, s_audio, s_text, fused, k)


def generative_retrieve(
    kb: KnowledgeBase,
    indexes: IndexSet | None,
    query: RetrievalQuery,
    captioner,
    text_encoder,
    weight: float,
    k: int,
    exclude_ids=None,
    **retrieve_kwargs,
) -> tuple[str, list[ScoredHit]]:
    """Caption the query audio, encode the caption, run pair_to_pair.

    Returns the generated caption alongside the hits so callers can audit
    what text query actually drove the ranking.
    """
    if query.audio_ref is None:
        raise CaptionFailedError("query has no audio_ref for the captioner")
    try:
        caption = captioner.caption(query.audio_ref)
    except ProviderError as exc:
        raise CaptionFailedError(f"captioner failed for {query.audio_ref!r}: {exc}") from exc
    try:
        text_emb = text_encoder.encode(caption)
    except ProviderError as exc:
        raise EncodeFailedError(f"text encode failed for generated caption: {exc}") from exc

    pair_query = replace(query, text_emb=text_emb, text_query=caption)
    hits = retrieve(
        kb,
        indexes,
        Strategy(StrategyKind.PAIR_TO_PAIR, weight),
        pair_query,
        k,
        exclude_ids,
        **retrieve_kwargs,
    )
    return caption, hits
