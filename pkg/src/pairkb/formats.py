"""Bit-exact file formats: the PKB1 embedding store and its JSONL sidecar.

PKB1 layout (all integers little-endian):

    offset  size  field
    0       4     magic  b"PKB1"
    4       2     u16    version (currently 1)
    6       2     u16    flags (bit 0: embeddings stored L2-normalized)
    8       4     u32    audio_dim
    12      4     u32    text_dim
    16      8     u64    count
    24      ...   count records of
                    [u64 id][audio_dim x f32 audio][text_dim x f32 text]

The fixed record stride (8 + 4*(audio_dim+text_dim) bytes) keeps the file
mmap-friendly and seekable by record index. Captions and provenance live in
a sidecar ``<name>.meta.jsonl`` next to the binary file: one JSON object per
entry, ``{"id": ..., "caption": ..., "audio_uri": ..., "source": ...}``.

Loading a file written by :func:`save_kb` and saving it again reproduces
the original bytes exactly; any structural corruption raises a typed
FormatError subclass, never an unhandled exception.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import KBSchema, KnowledgeBase, PairEntry, l2_normalize
from .errors import (
    BadMagicError,
    FormatError,
    MetadataMismatchError,
    NonFiniteError,
    TruncatedFileError,
    VersionUnsupportedError,
)

PKB_MAGIC = b"PKB1"
PKB_VERSION = 1
PKB_FLAG_NORMALIZED = 0x0001
_HEADER = struct.Struct("<4sHHIIQ")

_META_KEYS = ("id", "caption", "audio_uri", "source")


def meta_path_for(path: Path | str) -> Path:
    """Sidecar metadata path: ``toy.pkb`` -> ``toy.meta.jsonl``."""
    return Path(path).with_suffix(".meta.jsonl")


def _record_dtype(audio_dim: int, text_dim: int) -> np.dtype:
    return np.dtype(
        [("id", "<u8"), ("audio", "<f4", (audio_dim,)), ("text", "<f4", (text_dim,))]
    )


def save_kb(kb: KnowledgeBase, path: Path | str) -> None:
    """Write a KB as PKB1 plus its metadata sidecar."""
    path = Path(path)
    schema = kb.schema
    flags = PKB_FLAG_NORMALIZED if schema.normalized else 0
    header = _HEADER.pack(
        PKB_MAGIC, PKB_VERSION, flags, schema.audio_dim, schema.text_dim, len(kb)
    )
    records = np.empty(len(kb), dtype=_record_dtype(schema.audio_dim, schema.text_dim))
    records["id"] = kb.ids
    records["audio"] = kb.audio_matrix
    records["text"] = kb.text_matrix
    path.write_bytes(header + records.tobytes())

    with open(meta_path_for(path), "w", encoding="utf-8") as fh:
        for e in kb:
            obj = {"id": e.id, "caption": e.caption, "audio_uri": e.audio_uri, "source": e.source}
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")


def _read_meta(path: Path) -> dict[int, dict]:
    out: dict[int, dict] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or set(obj) != set(_META_KEYS):
                raise FormatError(f"{path}:{lineno}: expected keys {_META_KEYS}")
            if not isinstance(obj["id"], int):
                raise FormatError(f"{path}:{lineno}: id must be an integer")
            if obj["id"] in out:
                raise MetadataMismatchError(f"{path}:{lineno}: duplicate id {obj['id']}")
            out[obj["id"]] = obj
    return out


def load_kb(path: Path | str, name: str | None = None) -> KnowledgeBase:
    """Load a PKB1 embedding store and its sidecar into a KnowledgeBase.

    Embeddings flagged normalized are taken verbatim (the KB constructor
    re-checks their norms); unnormalized payloads are normalized on ingest,
    so every loaded KB satisfies the cosine-equals-dot contract.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        if raw[:4] != PKB_MAGIC:
            raise BadMagicError(f"{path}: not a PKB1 file")
        raise TruncatedFileError(f"{path}: header truncated")
    magic, version, flags, audio_dim, text_dim, count = _HEADER.unpack_from(raw)
    if magic != PKB_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != PKB_VERSION:
        raise VersionUnsupportedError(f"{path}: version {version} unsupported")
    if audio_dim < 1 or text_dim < 1:
        raise FormatError(f"{path}: non-positive dims {audio_dim}x{text_dim}")

    # Size arithmetic in Python ints: corrupt headers can claim dims/counts
    # far beyond what numpy dtypes tolerate.
    stride = 8 + 4 * (int(audio_dim) + int(text_dim))
    payload = raw[_HEADER.size :]
    expected = int(count) * stride
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: header claims {count} records, payload holds {len(payload) // stride}"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes")
    if count:
        records = np.frombuffer(payload, dtype=_record_dtype(audio_dim, text_dim), count=count)
    else:
        records = np.empty(0, dtype=_record_dtype(min(audio_dim, 1), min(text_dim, 1)))

    meta = _read_meta(meta_path_for(path))
    file_ids = [int(r) for r in records["id"]]
    if len(set(file_ids)) != len(file_ids):
        raise MetadataMismatchError(f"{path}: duplicate record ids")
    if set(meta) != set(file_ids):
        missing = sorted(set(file_ids) - set(meta))[:5]
        extra = sorted(set(meta) - set(file_ids))[:5]
        raise MetadataMismatchError(
            f"{path}: metadata id set differs (missing={missing}, extra={extra})"
        )

    normalized = bool(flags & PKB_FLAG_NORMALIZED)
    entries = []
    for i, entry_id in enumerate(file_ids):
        audio = records["audio"][i]
        text = records["text"][i]
        if not normalized:
            audio = l2_normalize(audio)
            text = l2_normalize(text)
        elif not (np.isfinite(audio).all() and np.isfinite(text).all()):
            raise NonFiniteError(f"{path}: entry {entry_id} has non-finite values")
        m = meta[entry_id]
        if not isinstance(m["caption"], str) or not m["caption"]:
            raise FormatError(f"{path}: entry {entry_id} has an empty caption")
        entries.append(
            PairEntry(
                id=entry_id,
                audio_emb=np.array(audio, dtype=np.float32),
                text_emb=np.array(text, dtype=np.float32),
                caption=m["caption"],
                audio_uri=str(m["audio_uri"]),
                source=str(m["source"]),
            )
        )
    schema = KBSchema(audio_dim=audio_dim, text_dim=text_dim, normalized=True)
    return KnowledgeBase(schema, entries, name=name or path.stem)
