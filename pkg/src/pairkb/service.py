"""HTTP facade over a loaded, immutable KB snapshot.

Every request is served end to end by the snapshot it captured on entry;
POST /reload swaps in a freshly loaded snapshot atomically, so mid-flight
requests never observe a mix. Refinement runs under a single job lock and
registers its output as a named KB.

Endpoints: POST /search, POST /refine, POST /classify, GET /entries/{id},
GET /healthz, POST /reload. Success bodies are canonical JSON (fixed key
order, compact separators) so identical requests produce identical bytes
under a fixed snapshot. Every success response carries an X-Snapshot-Id
header. Handlers are synchronous on purpose: they run in the server's
threadpool, which keeps the event loop free while a refine job holds its
lock.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .config import EngineConfig
from .core import KBSchema, KnowledgeBase, PairEntry, l2_normalize
from .errors import (
    CaptionFailedError,
    DimMismatchError,
    EncodeFailedError,
    MissingTextQueryError,
    PairKBError,
    SharedSpaceRequiredError,
    ValidationError,
)
from .formats import load_kb
from .fusion import CandidateText, FusionQuery, zero_shot_classify
from .refine import refine_kb
from .retrieval import (
    IndexSet,
    RetrievalQuery,
    Strategy,
    StrategyKind,
    generative_retrieve,
    retrieve,
)

logger = logging.getLogger(__name__)

_PRECONDITION_ERRORS = (
    SharedSpaceRequiredError,
    MissingTextQueryError,
    CaptionFailedError,
    EncodeFailedError,
)


@dataclass(frozen=True)
class Snapshot:
    """One immutable serving unit: KB, its indexes, and the config."""

    snapshot_id: int
    kb: KnowledgeBase
    indexes: IndexSet
    config: EngineConfig


class SnapshotRegistry:
    """Atomic holder of the current snapshot plus named side KBs."""

    def __init__(self):
        self._lock = threading.Lock()
        self._current: Snapshot | None = None
        self._counter = 0
        self.named_kbs: dict[str, KnowledgeBase] = {}

    def swap(self, kb: KnowledgeBase, config: EngineConfig) -> Snapshot:
        indexes = IndexSet.flat_for(kb)
        with self._lock:
            self._counter += 1
            snap = Snapshot(self._counter, kb, indexes, config)
            self._current = snap
        logger.info("snapshot %d loaded: kb=%s size=%d", snap.snapshot_id, kb.name, len(kb))
        return snap

    def current(self) -> Snapshot | None:
        return self._current


def _json_response(body: dict, snapshot_id: int | None, status_code: int = 200) -> Response:
    headers = {}
    if snapshot_id is not None:
        headers["X-Snapshot-Id"] = str(snapshot_id)
    return Response(
        content=json.dumps(body, ensure_ascii=False, separators=(",", ":")),
        media_type="application/json",
        status_code=status_code,
        headers=headers,
    )


def _vector(raw, what: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
    ):
        raise HTTPException(400, f"{what} must be a non-empty array of numbers")
    try:
        return l2_normalize(np.asarray(raw, dtype=np.float32))
    except PairKBError as exc:
        raise HTTPException(400, f"{what}: {exc}") from exc


def create_app(
    config: EngineConfig | None = None,
    kb: KnowledgeBase | None = None,
    kb_path: Path | str | None = None,
    captioner=None,
    text_encoder=None,
) -> FastAPI:
    """Build the service; ``kb`` or ``kb_path`` may preload a snapshot."""
    config = config or EngineConfig()
    app = FastAPI(title="pairkb", docs_url=None, redoc_url=None)
    app.state.registry = SnapshotRegistry()
    app.state.kb_path = Path(kb_path) if kb_path is not None else None
    app.state.captioner = captioner
    app.state.text_encoder = text_encoder
    app.state.config = config
    app.state.refine_lock = threading.Lock()
    # Test hook: cleared by tests to hold a refine job open deterministically.
    app.state.refine_gate = threading.Event()
    app.state.refine_gate.set()

    if kb is not None:
        app.state.registry.swap(kb, config)
    elif app.state.kb_path is not None:
        app.state.registry.swap(load_kb(app.state.kb_path), config)

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request, exc):
        return JSONResponse(status_code=400, content={"detail": "malformed request body"})

    def require_snapshot() -> Snapshot:
        snap = app.state.registry.current()
        if snap is None:
            raise HTTPException(503, "no knowledge base loaded")
        return snap

    @app.get("/healthz")
    def healthz():
        snap = app.state.registry.current()
        if snap is None:
            return _json_response({"status": "empty", "snapshot_id": 0, "kb_size": 0}, None)
        return _json_response(
            {"status": "ok", "snapshot_id": snap.snapshot_id, "kb_size": len(snap.kb)},
            snap.snapshot_id,
        )

    @app.get("/entries/{entry_id}")
    def get_entry(entry_id: int):
        snap = require_snapshot()
        if entry_id not in snap.kb:
            raise HTTPException(404, f"entry {entry_id} not found")
        e = snap.kb.entry(entry_id)
        body = {"id": e.id, "caption": e.caption, "audio_uri": e.audio_uri, "source": e.source}
        return _json_response(body, snap.snapshot_id)

    def parse_query(body: dict, snap: Snapshot) -> RetrievalQuery:
        query = body.get("query")
        if not isinstance(query, dict):
            raise HTTPException(400, "missing 'query' object")
        audio_ref = query.get("audio_ref")
        if "audio" in query:
            audio = _vector(query["audio"], "query.audio")
        elif audio_ref is not None:
            matches = [e for e in snap.kb if e.audio_uri == audio_ref]
            if not matches:
                raise HTTPException(400, f"audio_ref {audio_ref!r} not found in KB")
            audio = matches[0].audio_emb
        else:
            raise HTTPException(400, "query needs 'audio' floats or an 'audio_ref'")

        text_emb = None
        text_query = None
        text = body.get("text")
        if isinstance(text, list):
            text_emb = _vector(text, "text")
        elif isinstance(text, str):
            if app.state.text_encoder is None:
                raise HTTPException(422, "no text encoder configured to embed 'text'")
            try:
                text_emb = app.state.text_encoder.encode(text)
            except PairKBError as exc:
                raise HTTPException(422, f"text encode failed: {exc}") from exc
            text_query = text
        elif text is not None:
            raise HTTPException(400, "'text' must be a string or an array of floats")
        return RetrievalQuery(
            audio_emb=audio, text_emb=text_emb, text_query=text_query, audio_ref=audio_ref
        )

    @app.post("/search")
    def search(body: dict = Body(...)):
        snap = require_snapshot()

        raw_strategy = body.get("strategy")
        try:
            kind = StrategyKind(raw_strategy)
        except ValueError:
            raise HTTPException(400, f"unknown strategy {raw_strategy!r}") from None

        k = body.get("k")
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise HTTPException(400, "'k' must be a positive integer")

        weight = None
        if kind in (StrategyKind.PAIR_TO_PAIR, StrategyKind.GENERATIVE_PAIR_TO_PAIR):
            weight = body.get("W", snap.config.default_w)
            if not isinstance(weight, (int, float)) or isinstance(weight, bool) or not (
                0.0 <= float(weight) <= 1.0
            ):
                raise HTTPException(400, "'W' must be a number in [0, 1]")
            weight = float(weight)
        elif "W" in body:
            raise HTTPException(400, f"strategy {kind.value} takes no 'W'")

        exclude = body.get("exclude_ids")
        if exclude is not None and (
            not isinstance(exclude, list)
            or not all(isinstance(i, int) and not isinstance(i, bool) for i in exclude)
        ):
            raise HTTPException(400, "'exclude_ids' must be an array of integers")

        query = parse_query(body, snap)
        text_query = None
        try:
            if kind == StrategyKind.GENERATIVE_PAIR_TO_PAIR:
                if app.state.captioner is None or app.state.text_encoder is None:
                    raise HTTPException(422, "generative strategy needs captioner and text encoder")
                text_query, hits = generative_retrieve(
                    snap.kb,
                    snap.indexes,
                    query,
                    app.state.captioner,
                    app.state.text_encoder,
                    weight,
                    k,
                    set(exclude) if exclude else None,
                    exact_threshold=snap.config.exact_threshold,
                )
            else:
                strategy = Strategy(kind, weight)
                hits = retrieve(
                    snap.kb,
                    snap.indexes,
                    strategy,
                    query,
                    k,
                    set(exclude) if exclude else None,
                    exact_threshold=snap.config.exact_threshold,
                )
                text_query = query.text_query
        except _PRECONDITION_ERRORS as exc:
            raise HTTPException(422, str(exc)) from exc
        except (DimMismatchError, ValidationError) as exc:
            raise HTTPException(400, str(exc)) from exc
        except PairKBError as exc:
            raise HTTPException(422, str(exc)) from exc

        hit_rows = []
        for h in hits:
            e = snap.kb.entry(h.entry_id)
            hit_rows.append(
                {
                    "id": h.entry_id,
                    "s_audio": h.s_audio,
                    "s_text": h.s_text,
                    "s_fused": h.s_fused,
                    "caption": e.caption,
                    "audio_uri": e.audio_uri,
                }
            )
        body_out = {"hits": hit_rows}
        if text_query is not None:
            body_out["text_query"] = text_query
        return _json_response(body_out, snap.snapshot_id)

    @app.post("/classify")
    def classify(body: dict = Body(...)):
        snap = require_snapshot()
        audio = _vector(body.get("audio"), "audio")
        gen_text = _vector(body.get("gen_text"), "gen_text")
        classes = body.get("classes")
        if not isinstance(classes, list) or not classes:
            raise HTTPException(400, "'classes' must be a non-empty array")
        weight = body.get("weight")
        if weight is not None and (
            not isinstance(weight, (int, float)) or isinstance(weight, bool)
        ):
            raise HTTPException(400, "'weight' must be a number")
        parsed = []
        for c in classes:
            if not isinstance(c, dict) or not isinstance(c.get("id"), int):
                raise HTTPException(400, "each class needs integer 'id', 'text', 'values'")
            try:
                parsed.append(
                    CandidateText(
                        id=c["id"],
                        text=str(c.get("text", f"class-{c['id']}")),
                        text_emb=_vector(c.get("values"), f"class {c['id']} values"),
                    )
                )
            except ValueError as exc:
                raise HTTPException(400, str(exc)) from exc
        try:
            class_id, score = zero_shot_classify(
                FusionQuery(audio, gen_text), parsed, weight=weight
            )
        except PairKBError as exc:
            raise HTTPException(400, str(exc)) from exc
        return _json_response({"class_id": class_id, "score": score}, snap.snapshot_id)

    @app.post("/refine")
    def refine(body: dict = Body(...)):
        snap = require_snapshot()
        k = body.get("k")
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise HTTPException(400, "'k' must be a positive integer")
        exclude_self = body.get("exclude_self")
        if exclude_self is not None and not isinstance(exclude_self, bool):
            raise HTTPException(400, "'exclude_self' must be a boolean")

        if "trainset_path" in body:
            try:
                trainset = load_kb(body["trainset_path"])
            except (PairKBError, OSError) as exc:
                raise HTTPException(400, f"trainset: {exc}") from exc
        elif "trainset_entries" in body:
            trainset = _inline_trainset(body["trainset_entries"], snap.kb.schema)
        else:
            raise HTTPException(400, "need 'trainset_path' or 'trainset_entries'")

        if not app.state.refine_lock.acquire(blocking=False):
            raise HTTPException(409, "a refine job is already running")
        try:
            app.state.refine_gate.wait()
            try:
                refined, report = refine_kb(snap.kb, trainset, k, exclude_self)
            except PairKBError as exc:
                raise HTTPException(400, str(exc)) from exc
            app.state.registry.named_kbs["refined"] = refined
        finally:
            app.state.refine_lock.release()
        return _json_response(
            {"kb": "refined", "report": json.loads(report.to_json())},
            snap.snapshot_id,
            status_code=202,
        )

    @app.post("/reload")
    def reload(body: dict | None = Body(None)):
        body = body or {}
        path = body.get("kb_path", app.state.kb_path)
        if path is None:
            raise HTTPException(400, "no 'kb_path' given and none configured")
        try:
            new_kb = load_kb(path)
        except (PairKBError, OSError) as exc:
            raise HTTPException(400, f"reload failed: {exc}") from exc
        app.state.kb_path = Path(path)
        snap = app.state.registry.swap(new_kb, app.state.config)
        return _json_response(
            {"snapshot_id": snap.snapshot_id, "kb_size": len(snap.kb)}, snap.snapshot_id
        )

    return app


def _inline_trainset(raw, schema: KBSchema) -> KnowledgeBase:
    if not isinstance(raw, list) or not raw:
        raise HTTPException(400, "'trainset_entries' must be a non-empty array")
    entries = []
    for obj in raw:
        if not isinstance(obj, dict) or not isinstance(obj.get("id"), int):
            raise HTTPException(400, "each trainset entry needs integer 'id'")
        try:
            entries.append(
                PairEntry(
                    id=obj["id"],
                    audio_emb=l2_normalize(np.asarray(obj.get("audio"), dtype=np.float32)),
                    text_emb=l2_normalize(np.asarray(obj.get("text"), dtype=np.float32)),
                    caption=str(obj.get("caption", f"query-{obj['id']}")),
                    audio_uri=str(obj.get("audio_uri", "")),
                    source=str(obj.get("source", "inline")),
                )
            )
        except (PairKBError, TypeError, ValueError) as exc:
            raise HTTPException(400, f"trainset entry {obj.get('id')}: {exc}") from exc
    try:
        return KnowledgeBase(schema, entries, name="inline-trainset")
    except PairKBError as exc:
        raise HTTPException(400, f"trainset: {exc}") from exc


def run(app: FastAPI, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="info")
