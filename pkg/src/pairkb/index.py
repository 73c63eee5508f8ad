"""Exact flat top-k search and a clustered (inverted-file) approximate index.

Both index kinds score with the inner product, which equals cosine
similarity on the normalized vectors the engine stores. The clustered
index is IVF-flat: seeded k-means centroids, one posting list per
centroid, probe the ``n_probe`` nearest lists, exact-score their members.

Index file layout ("PKIX", all integers little-endian):

    magic b"PKIX" | u16 version=1 | u8 field | u8 kind | u32 dim | u64 count
    ids        u64 x count
    vectors    f32 x count x dim
    (clustered only)
    u32 n_clusters | u32 n_probe
    centroids  f32 x n_clusters x dim
    assignment u32 x count
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .core import KnowledgeBase, as_vector, rank_topk
from .errors import (
    BadClusterCountError,
    BadMagicError,
    DimMismatchError,
    EmptyKBError,
    FormatError,
    TruncatedFileError,
    VersionUnsupportedError,
)

KMEANS_MAX_ITER = 25

PKIX_MAGIC = b"PKIX"
PKIX_VERSION = 1
_IDX_HEADER = struct.Struct("<4sHBBIQ")


class IndexField(str, Enum):
    AUDIO = "audio"
    TEXT = "text"
    PAIR_CONCAT = "pair_concat"


_FIELD_TAGS = {IndexField.AUDIO: 0, IndexField.TEXT: 1, IndexField.PAIR_CONCAT: 2}
_TAG_FIELDS = {v: k for k, v in _FIELD_TAGS.items()}


def field_vectors(kb: KnowledgeBase, field: IndexField) -> np.ndarray:
    if field == IndexField.AUDIO:
        return kb.audio_matrix
    if field == IndexField.TEXT:
        return kb.text_matrix
    return kb.concat_matrix()


@dataclass(frozen=True)
class TopKResult:
    """Hits sorted by score descending, ties by ascending entry id."""

    hits: tuple[tuple[int, float], ...]

    def ids(self) -> list[int]:
        return [h[0] for h in self.hits]

    def scores(self) -> list[float]:
        return [h[1] for h in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


class VectorIndex:
    """Shared behavior: candidate masking and exact scoring of a row set."""

    kind = "flat"

    def __init__(self, field: IndexField, ids: np.ndarray, vectors: np.ndarray):
        self.field = IndexField(field)
        self._ids = ids.astype(np.uint64)
        self._vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        self._ids.flags.writeable = False
        self._vectors.flags.writeable = False

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    def __len__(self) -> int:
        return len(self._ids)

    def _check_query(self, query) -> np.ndarray:
        q = as_vector(query)
        if q.shape[0] != self.dim:
            raise DimMismatchError(
                f"query dim {q.shape[0]} != index dim {self.dim} ({self.field.value})"
            )
        return q.astype(np.float64)

    def _candidate_rows(self, exclude_ids) -> np.ndarray:
        if not exclude_ids:
            return np.arange(len(self._ids))
        mask = ~np.isin(self._ids, np.fromiter(map(int, exclude_ids), dtype=np.uint64))
        return np.nonzero(mask)[0]

    def search(self, query, k: int, exclude_ids=None) -> TopKResult:
        raise NotImplementedError


class FlatIndex(VectorIndex):
    kind = "flat"

    def search(self, query, k: int, exclude_ids=None) -> TopKResult:
        q = self._check_query(query)
        rows = self._candidate_rows(exclude_ids)
        scores = self._vectors[rows].astype(np.float64) @ q
        return TopKResult(tuple(rank_topk(self._ids[rows], scores, k)))


class ClusteredIndex(VectorIndex):
    kind = "clustered"

    def __init__(self, field, ids, vectors, centroids, assignment, n_probe: int):
        super().__init__(field, ids, vectors)
        self.centroids = np.ascontiguousarray(centroids, dtype=np.float32)
        self.assignment = assignment.astype(np.uint32)
        self.centroids.flags.writeable = False
        self.assignment.flags.writeable = False
        self.n_probe = int(n_probe)
        if not 1 <= self.n_probe <= self.n_clusters:
            raise BadClusterCountError(
                f"n_probe {n_probe} outside 1..{self.n_clusters}"
            )

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def posting_lists(self) -> list[np.ndarray]:
        """Entry ids per cluster; every id appears in exactly one list."""
        return [
            self._ids[self.assignment == c] for c in range(self.n_clusters)
        ]

    def search(self, query, k: int, exclude_ids=None, n_probe: int | None = None) -> TopKResult:
        q = self._check_query(query)
        probe = self.n_probe if n_probe is None else int(n_probe)
        if not 1 <= probe <= self.n_clusters:
            raise BadClusterCountError(f"n_probe {probe} outside 1..{self.n_clusters}")
        centroid_scores = self.centroids.astype(np.float64) @ q
        # Deterministic probe order: score desc, ties by cluster number.
        order = np.lexsort((np.arange(self.n_clusters), -centroid_scores))[:probe]
        member_rows = np.nonzero(np.isin(self.assignment, order.astype(np.uint32)))[0]
        if exclude_ids:
            excl = np.fromiter(map(int, exclude_ids), dtype=np.uint64)
            member_rows = member_rows[~np.isin(self._ids[member_rows], excl)]
        scores = self._vectors[member_rows].astype(np.float64) @ q
        return TopKResult(tuple(rank_topk(self._ids[member_rows], scores, k)))


def build_flat(kb: KnowledgeBase, field: IndexField | str) -> FlatIndex:
    field = IndexField(field)
    if len(kb) == 0:
        raise EmptyKBError("cannot build an index over an empty KB")
    return FlatIndex(field, kb.ids.copy(), field_vectors(kb, field).copy())


def _kmeans(vectors: np.ndarray, n_clusters: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded spherical k-means with bounded iterations.

    Empty clusters are re-seeded from the largest cluster's farthest
    member, so every cluster ends non-empty and builds are deterministic.
    """
    n = vectors.shape[0]
    v64 = vectors.astype(np.float64)
    rng = np.random.default_rng(seed)
    init_rows = np.sort(rng.choice(n, size=n_clusters, replace=False))
    centroids = v64[init_rows].copy()
    norms = np.linalg.norm(centroids, axis=1, keepdims=True)
    centroids = centroids / np.where(norms == 0, 1.0, norms)

    assignment = np.full(n, -1, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        sims = v64 @ centroids.T
        new_assignment = np.argmax(sims, axis=1)

        counts = np.bincount(new_assignment, minlength=n_clusters)
        for empty in np.nonzero(counts == 0)[0]:
            donor = int(np.argmax(counts))
            donor_rows = np.nonzero(new_assignment == donor)[0]
            farthest = donor_rows[int(np.argmin(sims[donor_rows, donor]))]
            new_assignment[farthest] = empty
            counts[donor] -= 1
            counts[empty] += 1

        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for c in range(n_clusters):
            members = v64[assignment == c]
            mean = members.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0:
                centroids[c] = mean / norm
    return centroids.astype(np.float32), assignment.astype(np.uint32)


def build_clustered(
    kb: KnowledgeBase,
    field: IndexField | str,
    n_clusters: int,
    seed: int,
    n_probe: int | None = None,
) -> ClusteredIndex:
    field = IndexField(field)
    if len(kb) == 0:
        raise EmptyKBError("cannot build an index over an empty KB")
    if not 1 <= n_clusters <= len(kb):
        raise BadClusterCountError(f"n_clusters {n_clusters} outside 1..{len(kb)}")
    vectors = field_vectors(kb, field).copy()
    centroids, assignment = _kmeans(vectors, n_clusters, seed)
    return ClusteredIndex(
        field,
        kb.ids.copy(),
        vectors,
        centroids,
        assignment,
        n_probe=n_probe if n_probe is not None else n_clusters,
    )


def search_topk(index: VectorIndex, query, k: int, exclude_ids=None) -> TopKResult:
    """Top-k entries by inner product, ties by ascending id, k clipped to N."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return index.search(query, k, exclude_ids=exclude_ids)


def save_index(index: VectorIndex, path: Path | str) -> None:
    path = Path(path)
    kind_tag = 0 if index.kind == "flat" else 1
    parts = [
        _IDX_HEADER.pack(
            PKIX_MAGIC, PKIX_VERSION, _FIELD_TAGS[index.field], kind_tag,
            index.dim, len(index),
        ),
        index.ids.astype("<u8").tobytes(),
        index.vectors.astype("<f4").tobytes(),
    ]
    if isinstance(index, ClusteredIndex):
        parts.append(struct.pack("<II", index.n_clusters, index.n_probe))
        parts.append(index.centroids.astype("<f4").tobytes())
        parts.append(index.assignment.astype("<u4").tobytes())
    path.write_bytes(b"".join(parts))


def load_index(path: Path | str) -> VectorIndex:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != PKIX_MAGIC:
        raise BadMagicError(f"{path}: not a PKIX file")
    if len(raw) < _IDX_HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    magic, version, field_tag, kind_tag, dim, count = _IDX_HEADER.unpack_from(raw)
    if version != PKIX_VERSION:
        raise VersionUnsupportedError(f"{path}: version {version} unsupported")
    if field_tag not in _TAG_FIELDS or kind_tag not in (0, 1):
        raise FormatError(f"{path}: unknown field/kind tags ({field_tag},{kind_tag})")
    if dim < 1:
        raise FormatError(f"{path}: non-positive dim")

    off = _IDX_HEADER.size

    def take(nbytes: int, what: str) -> bytes:
        nonlocal off
        if off + nbytes > len(raw):
            raise TruncatedFileError(f"{path}: truncated in {what}")
        chunk = raw[off : off + nbytes]
        off += nbytes
        return chunk

    ids = np.frombuffer(take(8 * count, "ids"), dtype="<u8").copy()
    vectors = np.frombuffer(take(4 * count * dim, "vectors"), dtype="<f4").reshape(count, dim).copy()
    if not np.isfinite(vectors).all():
        raise FormatError(f"{path}: non-finite vector payload")
    if len(set(ids.tolist())) != count:
        raise FormatError(f"{path}: duplicate ids")
    field = _TAG_FIELDS[field_tag]

    if kind_tag == 0:
        if off != len(raw):
            raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
        return FlatIndex(field, ids, vectors)

    n_clusters, n_probe = struct.unpack("<II", take(8, "cluster params"))
    if not 1 <= n_clusters or not 1 <= n_probe <= n_clusters:
        raise FormatError(f"{path}: bad cluster params ({n_clusters},{n_probe})")
    centroids = (
        np.frombuffer(take(4 * n_clusters * dim, "centroids"), dtype="<f4")
        .reshape(n_clusters, dim)
        .copy()
    )
    assignment = np.frombuffer(take(4 * count, "assignment"), dtype="<u4").copy()
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    if not np.isfinite(centroids).all():
        raise FormatError(f"{path}: non-finite centroids")
    if count and assignment.max() >= n_clusters:
        raise FormatError(f"{path}: assignment references cluster >= {n_clusters}")
    return ClusteredIndex(field, ids, vectors, centroids, assignment, n_probe=n_probe)
