"""Generative score fusion for cross-modal retrieval and zero-shot classification.

A candidate text (a caption, or a class name wrapped in a prompt) is scored
by the sum of two similarities: query audio against the candidate text, and
the generated text query against the candidate text. The sum is unweighted
by default; a weight turns it into the usual convex blend for sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_vector, rank_topk
from .errors import DimMismatchError, EmptyCandidatesError
from .index import TopKResult


@dataclass(frozen=True)
class CandidateText:
    """A scoring target: candidate text plus its normalized embedding."""

    id: int
    text: str
    text_emb: np.ndarray

    def __post_init__(self):
        if not self.text:
            raise ValueError("candidate text must be non-empty")
        object.__setattr__(self, "text_emb", as_vector(self.text_emb))


@dataclass(frozen=True)
class FusionQuery:
    """Query audio embedding plus the generated-caption embedding."""

    audio_emb: np.ndarray
    gen_text_emb: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "audio_emb", as_vector(self.audio_emb))
        object.__setattr__(self, "gen_text_emb", as_vector(self.gen_text_emb))


def _scores(query: FusionQuery, candidates, weight: float | None) -> np.ndarray:
    if not candidates:
        raise EmptyCandidatesError("no candidates to score")
    dim = candidates[0].text_emb.shape[0]
    for c in candidates:
        if c.text_emb.shape[0] != dim:
            raise DimMismatchError(f"candidate {c.id}: dim {c.text_emb.shape[0]} != {dim}")
    if query.audio_emb.shape[0] != dim or query.gen_text_emb.shape[0] != dim:
        raise DimMismatchError(
            f"query dims ({query.audio_emb.shape[0]}, {query.gen_text_emb.shape[0]}) "
            f"!= candidate dim {dim}"
        )
    mat = np.stack([c.text_emb for c in candidates]).astype(np.float64)
    s_audio = mat @ query.audio_emb.astype(np.float64)
    s_text = mat @ query.gen_text_emb.astype(np.float64)
    if weight is None:
        return s_audio + s_text
    return weight * s_audio + (1.0 - weight) * s_text


def fused_candidate_score(
    query: FusionQuery, candidate: CandidateText, weight: float | None = None
) -> float:
    """audio-vs-candidate plus generated-text-vs-candidate, summed raw."""
    return float(_scores(query, [candidate], weight)[0])


def cross_modal_rank(
    query: FusionQuery, candidates, k: int, weight: float | None = None
) -> TopKResult:
    """Top-k candidates by fused score, ties by ascending candidate id."""
    candidates = list(candidates)
    scores = _scores(query, candidates, weight)
    ids = np.array([c.id for c in candidates], dtype=np.uint64)
    return TopKResult(tuple(rank_topk(ids, scores, k)))


def zero_shot_classify(
    query: FusionQuery, classes, weight: float | None = None
) -> tuple[int, float]:
    """Argmax class by fused score; ties go to the lowest class id."""
    top = cross_modal_rank(query, classes, k=1, weight=weight)
    return top.hits[0]
