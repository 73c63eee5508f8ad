"""Domain types and vector math shared by every other module.

Embeddings are plain 1-D float32 numpy arrays. All score accumulation
happens in float64; storage stays float32. Every ranking in the engine
breaks score ties by ascending entry id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DimMismatchError,
    NonFiniteError,
    UnknownEntryIdError,
    ValidationError,
    ZeroVectorError,
)

# |l2_norm - 1| allowed for vectors flagged normalized (f32 storage rounding
# is ~1e-7, so this is generous by design).
NORM_TOLERANCE = 1e-4

MAX_ENTRY_ID = 2**64 - 1


def as_vector(values, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float32 array, optionally checking its length."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise ValidationError(f"embedding must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimMismatchError(f"expected dim {dim}, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise NonFiniteError("embedding contains NaN or Inf")
    return arr


def l2_normalize(values) -> np.ndarray:
    """Scale a vector to unit L2 norm, preserving direction.

    Raises ZeroVectorError for the all-zero vector and NonFiniteError for
    NaN/Inf input. The division runs in float64 before casting back down.
    """
    arr = as_vector(values)
    norm = float(np.linalg.norm(arr.astype(np.float64)))
    if norm == 0.0:
        raise ZeroVectorError("cannot normalize a zero vector")
    return (arr.astype(np.float64) / norm).astype(np.float32)


def dot(u, v) -> float:
    """Inner product with float64 accumulation."""
    ua = as_vector(u)
    va = as_vector(v)
    if ua.shape[0] != va.shape[0]:
        raise DimMismatchError(f"dot: dims {ua.shape[0]} vs {va.shape[0]}")
    return float(ua.astype(np.float64) @ va.astype(np.float64))


def is_normalized(values, tolerance: float = NORM_TOLERANCE) -> bool:
    arr = as_vector(values)
    return abs(float(np.linalg.norm(arr.astype(np.float64))) - 1.0) <= tolerance


def rank_topk(
    ids: np.ndarray, scores: np.ndarray, k: int
) -> list[tuple[int, float]]:
    """Top-k (id, score) pairs: score descending, ties by ascending id.

    k larger than the candidate count silently clips. This is the single
    ranking primitive behind every index search and retrieval strategy, so
    the tie policy cannot drift between modules.
    """
    if k < 1:
        return []
    scores64 = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((ids, -scores64))[: min(k, len(ids))]
    return [(int(ids[i]), float(scores64[i])) for i in order]


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PairEntry:
    """One knowledge-base record: an audio clip coupled with its caption.

    The audio itself never enters the engine; ``audio_uri`` is an opaque
    locator and ``audio_emb`` its precomputed embedding.
    """

    id: int
    audio_emb: np.ndarray
    text_emb: np.ndarray
    caption: str
    audio_uri: str = ""
    source: str = ""

    def __post_init__(self):
        if not 0 <= self.id <= MAX_ENTRY_ID:
            raise ValidationError(f"entry id {self.id} outside unsigned 64-bit range")
        if not self.caption:
            raise ValidationError(f"entry {self.id}: caption must be non-empty")
        object.__setattr__(self, "audio_emb", _readonly(as_vector(self.audio_emb)))
        object.__setattr__(self, "text_emb", _readonly(as_vector(self.text_emb)))


@dataclass(frozen=True)
class KBSchema:
    """Per-KB embedding dimensions and normalization contract."""

    audio_dim: int
    text_dim: int
    normalized: bool = True

    def __post_init__(self):
        if self.audio_dim < 1 or self.text_dim < 1:
            raise ValidationError("schema dims must be positive")


@dataclass(frozen=True)
class ScoredHit:
    """A retrieved entry with its component and fused similarity scores."""

    entry_id: int
    s_audio: float
    s_text: float | None
    s_fused: float


class KnowledgeBase:
    """Immutable collection of PairEntry with stacked score matrices.

    Entries are validated against the schema at construction: unique ids,
    matching dims, finite values, and (when the schema says normalized)
    unit L2 norm within NORM_TOLERANCE. After construction the object is
    safe to share across threads without synchronization.
    """

    def __init__(self, schema: KBSchema, entries: Iterable[PairEntry], name: str = "kb"):
        self._schema = schema
        self._name = name
        self._entries: tuple[PairEntry, ...] = tuple(entries)
        n = len(self._entries)

        ids = np.empty(n, dtype=np.uint64)
        audio = np.empty((n, schema.audio_dim), dtype=np.float32)
        text = np.empty((n, schema.text_dim), dtype=np.float32)
        for i, e in enumerate(self._entries):
            if e.audio_emb.shape[0] != schema.audio_dim:
                raise DimMismatchError(
                    f"entry {e.id}: audio dim {e.audio_emb.shape[0]} != schema {schema.audio_dim}"
                )
            if e.text_emb.shape[0] != schema.text_dim:
                raise DimMismatchError(
                    f"entry {e.id}: text dim {e.text_emb.shape[0]} != schema {schema.text_dim}"
                )
            ids[i] = e.id
            audio[i] = e.audio_emb
            text[i] = e.text_emb

        if len(set(ids.tolist())) != n:
            raise ValidationError("entry ids must be unique within a knowledge base")
        if schema.normalized and n > 0:
            for label, mat in (("audio", audio), ("text", text)):
                norms = np.linalg.norm(mat.astype(np.float64), axis=1)
                bad = np.nonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)[0]
                if bad.size:
                    raise ValidationError(
                        f"{label} embedding of entry {int(ids[bad[0]])} is not unit-norm "
                        f"(norm={norms[bad[0]]:.6f})"
                    )

        self._ids = _readonly(ids)
        self._audio = _readonly(audio)
        self._text = _readonly(text)
        self._pos = {int(v): i for i, v in enumerate(ids)}

    @property
    def schema(self) -> KBSchema:
        return self._schema

    @property
    def name(self) -> str:
        return self._name

    @property
    def entries(self) -> tuple[PairEntry, ...]:
        return self._entries

    @property
    def ids(self) -> np.ndarray:
        """Entry ids, shape (N,), uint64, in storage order."""
        return self._ids

    @property
    def audio_matrix(self) -> np.ndarray:
        """Audio embeddings, shape (N, audio_dim), float32."""
        return self._audio

    @property
    def text_matrix(self) -> np.ndarray:
        """Text embeddings, shape (N, text_dim), float32."""
        return self._text

    def concat_matrix(self) -> np.ndarray:
        """Per-entry [audio ; text] concatenations, shape (N, audio_dim + text_dim)."""
        return np.hstack([self._audio, self._text])

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[PairEntry]:
        return iter(self._entries)

    def __contains__(self, entry_id: int) -> bool:
        return int(entry_id) in self._pos

    def position(self, entry_id: int) -> int:
        try:
            return self._pos[int(entry_id)]
        except KeyError:
            raise UnknownEntryIdError(f"entry id {entry_id} not in KB {self._name!r}") from None

    def entry(self, entry_id: int) -> PairEntry:
        return self._entries[self.position(entry_id)]

    def subset(self, ids: Iterable[int], name: str) -> "KnowledgeBase":
        """New KB restricted to ``ids``, preserving this KB's entry order."""
        keep = {int(i) for i in ids}
        missing = keep - set(self._pos)
        if missing:
            raise UnknownEntryIdError(f"ids not in KB {self._name!r}: {sorted(missing)[:5]}")
        picked = [e for e in self._entries if e.id in keep]
        return KnowledgeBase(self._schema, picked, name=name)

    def rename(self, name: str) -> "KnowledgeBase":
        clone = object.__new__(KnowledgeBase)
        clone.__dict__.update(self.__dict__)
        clone._name = name
        return clone


def toy_knowledge_base() -> KnowledgeBase:
    """The canonical 3-entry fixture used across tests and docs.

    e1 and e2 are axis-aligned in both modalities; e3 sits between them
    with deliberately swapped audio/text components so that audio and
    text rankings disagree.
    """
    schema = KBSchema(audio_dim=2, text_dim=2, normalized=True)
    entries = [
        PairEntry(1, (1.0, 0.0), (1.0, 0.0), "dog barking", "clip-1", "toy"),
        PairEntry(2, (0.0, 1.0), (0.0, 1.0), "rain falling", "clip-2", "toy"),
        PairEntry(3, (0.8, 0.6), (0.6, 0.8), "birds chirping", "clip-3", "toy"),
    ]
    return KnowledgeBase(schema, entries, name="toy")
