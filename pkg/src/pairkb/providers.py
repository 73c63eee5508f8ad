"""Pluggable embedding and caption sources.

The engine never runs models: embeddings are precomputed and ingested
from PKB1 stores, and anything live (an encoder host, a captioning
model) plugs in through the small provider contracts here. Stub
providers are table-driven so tests stay human-auditable.

Remote encode contract (JSON over HTTP):

    POST <endpoint>
    {"modality": "audio"|"text", "text": "...", "audio_uri": "..."}
    -> 200 {"values": [float, ...], "dim": int}

Remote caption contract:

    POST <endpoint>
    {"audio_uri": "..."} -> 200 {"caption": "..."}

The env var PAIRKB_ENCODER_URL supplies the default encode endpoint.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Mapping, Protocol

import httpx
import numpy as np

from .core import KnowledgeBase, as_vector, l2_normalize
from .errors import (
    DimMismatchError,
    EncodeTimeoutError,
    NonFiniteResponseError,
    TransportError,
    UnknownAudioRefError,
    UnknownCaptionError,
)
from .formats import load_kb

DEFAULT_TIMEOUT = 10.0
DEFAULT_MAX_IN_FLIGHT = 8


class EncoderProvider(Protocol):
    """Maps a payload (text, or an audio locator) to a normalized embedding."""

    kind: str
    modality: str
    dim: int

    def encode(self, payload: str) -> np.ndarray: ...


class CaptionProvider(Protocol):
    """Maps an audio locator to a generated caption."""

    kind: str

    def caption(self, audio_ref: str) -> str: ...


def load_embedding_store(path: Path | str, name: str | None = None) -> KnowledgeBase:
    """Ingest a precomputed PKB1 embedding store as a KnowledgeBase."""
    return load_kb(path, name=name)


class StubTextEncoder:
    """Table-driven text encoder: caption -> fixed vector, normalized."""

    kind = "stub"
    modality = "text"

    def __init__(self, table: Mapping[str, object], dim: int):
        self.dim = dim
        self._table = {c: l2_normalize(as_vector(v, dim)) for c, v in table.items()}

    def encode(self, payload: str) -> np.ndarray:
        try:
            return self._table[payload]
        except KeyError:
            raise UnknownCaptionError(f"no stub embedding for caption {payload!r}") from None


class StubCaptioner:
    """Table-driven captioner: audio ref -> fixed caption."""

    kind = "table_stub"

    def __init__(self, table: Mapping[str, str]):
        self._table = dict(table)

    def caption(self, audio_ref: str) -> str:
        try:
            return self._table[audio_ref]
        except KeyError:
            raise UnknownAudioRefError(f"no stub caption for audio ref {audio_ref!r}") from None


class FileBackedEncoder:
    """Looks embeddings up in a loaded KB by audio_uri (audio) or caption (text)."""

    kind = "file_backed"

    def __init__(self, kb: KnowledgeBase, modality: str):
        if modality not in ("audio", "text"):
            raise ValueError(f"modality must be audio or text, got {modality!r}")
        self.modality = modality
        self.dim = kb.schema.audio_dim if modality == "audio" else kb.schema.text_dim
        if modality == "audio":
            self._table = {e.audio_uri: e.audio_emb for e in kb}
        else:
            self._table = {e.caption: e.text_emb for e in kb}

    def encode(self, payload: str) -> np.ndarray:
        try:
            return self._table[payload]
        except KeyError:
            if self.modality == "audio":
                raise UnknownAudioRefError(f"no stored embedding for {payload!r}") from None
            raise UnknownCaptionError(f"no stored embedding for {payload!r}") from None


def _post_json(client: httpx.Client, endpoint: str, body: dict) -> dict:
    try:
        response = client.post(endpoint, json=body)
    except httpx.TimeoutException as exc:
        raise EncodeTimeoutError(f"{endpoint}: timed out: {exc}") from exc
    except httpx.HTTPError as exc:
        raise TransportError(f"{endpoint}: transport failure: {exc}") from exc
    if response.status_code < 200 or response.status_code >= 300:
        raise TransportError(f"{endpoint}: HTTP {response.status_code}")
    try:
        payload = response.json()
    except (json.JSONDecodeError, ValueError) as exc:
        raise TransportError(f"{endpoint}: response is not JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise TransportError(f"{endpoint}: response is not a JSON object")
    return payload


class RemoteEncoder:
    """JSON-over-HTTP adapter for a pretrained encoder host.

    Responses are validated (dim, finiteness) and normalized before they
    reach the engine; concurrent in-flight requests are bounded.
    """

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        modality: str,
        dim: int,
        timeout: float = DEFAULT_TIMEOUT,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        transport: httpx.BaseTransport | None = None,
    ):
        if modality not in ("audio", "text"):
            raise ValueError(f"modality must be audio or text, got {modality!r}")
        self.endpoint = endpoint
        self.modality = modality
        self.dim = dim
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def encode(self, payload: str) -> np.ndarray:
        body = {"modality": self.modality}
        if self.modality == "text":
            body["text"] = payload
        else:
            body["audio_uri"] = payload
        with self._gate:
            data = _post_json(self._client, self.endpoint, body)
        values = data.get("values")
        if not isinstance(values, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
        ):
            raise TransportError(f"{self.endpoint}: malformed 'values' field")
        if data.get("dim") != len(values) or len(values) != self.dim:
            raise DimMismatchError(
                f"{self.endpoint}: expected dim {self.dim}, got {data.get('dim')}"
                f" with {len(values)} values"
            )
        arr = np.asarray(values, dtype=np.float32)
        if not np.isfinite(arr).all():
            raise NonFiniteResponseError(f"{self.endpoint}: non-finite embedding values")
        return l2_normalize(arr)

    def close(self) -> None:
        self._client.close()


class RemoteCaptioner:
    """JSON-over-HTTP adapter for a captioning host."""

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        timeout: float = DEFAULT_TIMEOUT,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def caption(self, audio_ref: str) -> str:
        data = _post_json(self._client, self.endpoint, {"audio_uri": audio_ref})
        caption = data.get("caption")
        if not isinstance(caption, str) or not caption:
            raise TransportError(f"{self.endpoint}: malformed 'caption' field")
        return caption

    def close(self) -> None:
        self._client.close()


def stub_text_encode(caption: str, table: Mapping[str, object]) -> np.ndarray:
    """One-shot table lookup; see StubTextEncoder for the provider form."""
    if not table:
        raise UnknownCaptionError(f"no stub embedding for caption {caption!r}")
    dim = len(as_vector(next(iter(table.values()))))
    return StubTextEncoder(table, dim).encode(caption)


def stub_caption(audio_ref: str, table: Mapping[str, str]) -> str:
    """One-shot table lookup; see StubCaptioner for the provider form."""
    return StubCaptioner(table).caption(audio_ref)
