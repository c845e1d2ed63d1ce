"""FastAPI service wiring model backends to the engine-facing endpoints.

Request handling is uniform across endpoints: validate the body against
the versioned schema, derive the request key, satisfy the request (replay
lookup, optional cache hit, or backend inference plus post-processing),
validate the response model, and emit canonical JSON bytes. Errors leave
as {code, retryable, detail} with 400-class statuses for caller mistakes
and 500-class for model-side failures.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, ConfigDict, Field, field_validator

from semnav_adapter import prompts
from semnav_adapter.backends import (
    BackendError,
    BackendRefusal,
    ReasonerCall,
    make_backend,
)
from semnav_adapter.config import AdapterConfig
from semnav_adapter.fixtures import FixtureMiss, FixtureStore
from semnav_adapter.imageops import bilinear_resize, softmax_stack
from semnav_adapter.wire import (
    EMBEDDING_DIM,
    SCHEMA_VERSION,
    DecodeError,
    PayloadTooLarge,
    canonical_json_bytes,
    decode_image_b64,
    extend_with_backgrounds,
    floats_to_b64,
    request_key,
)

TABLE_ATTEMPTS = 3  # first try plus two format-reminder retries


class AdapterHTTPError(Exception):
    def __init__(self, status: int, code: str, retryable: bool, detail: str) -> None:
        super().__init__(detail)
        self.status = status
        self.code = code
        self.retryable = retryable
        self.detail = detail


class UnparseableReply(RuntimeError):
    """Backend text that never coerced to the endpoint's schema."""


class TableParseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Wire schemas


class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int
    frame_id: int

    @field_validator("schema_version")
    @classmethod
    def _pinned_version(cls, v: int) -> int:
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}")
        return v


def _require_filled(name: str):
    def check(cls, v: str) -> str:
        if not v.strip():
            raise ValueError(f"{name} must be non-empty")
        return v

    return check


class EmbedRequest(_Body):
    image_b64: str


class SegmentRequest(_Body):
    image_b64: str
    labels: list[str] = Field(min_length=1)

    @field_validator("labels")
    @classmethod
    def _labels_filled(cls, v: list[str]) -> list[str]:
        if any(not s.strip() for s in v):
            raise ValueError("labels must be non-empty strings")
        if len(set(v)) != len(v):
            raise ValueError("labels must be unique")
        return v


class SceneRiskRequest(_Body):
    image_b64: str
    modality: str
    prior_table: dict = Field(default_factory=dict)

    _modality_filled = field_validator("modality")(classmethod(_require_filled("modality")))


class GoalPointRequest(_Body):
    image_b64: str
    goal_text: str

    _goal_filled = field_validator("goal_text")(classmethod(_require_filled("goal_text")))


class HistoryItem(BaseModel):
    model_config = ConfigDict(extra="forbid")

    digest: str
    choice: str
    frame_id: int


class SelectPathRequest(_Body):
    overlay_b64: str
    modality: str
    behavior: str
    history: list[HistoryItem] = Field(default_factory=list)

    _modality_filled = field_validator("modality")(classmethod(_require_filled("modality")))


class EmbedResponse(_Body):
    embedding_b64: str


class SegmentResponse(_Body):
    labels: list[str] = Field(min_length=1)
    height: int = Field(ge=1)
    width: int = Field(ge=1)
    stack_b64: str


class TableEntryModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: str = Field(min_length=1)
    risk: float = Field(ge=0.0, le=1.0)
    curiosity: float | None = Field(default=None, ge=0.0, le=1.0)


class TableModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int
    scene_description: str = Field(max_length=40)
    source: str
    entries: list[TableEntryModel] = Field(min_length=1)

    @field_validator("schema_version")
    @classmethod
    def _pinned_version(cls, v: int) -> int:
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}")
        return v

    @field_validator("source")
    @classmethod
    def _source_fresh(cls, v: str) -> str:
        if v != "fresh_query":
            raise ValueError(f"table source must be fresh_query, got {v!r}")
        return v


class SceneRiskResponse(_Body):
    table: TableModel


class GoalPointResponse(_Body):
    found: bool
    u_norm: float = Field(ge=0.0, le=1.0)
    v_norm: float = Field(ge=0.0, le=1.0)


class SelectPathResponse(_Body):
    text: str


class HealthResponse(BaseModel):
    model_config = ConfigDict(extra="forbid")

    status: str
    ready: bool
    mode: str
    schema_version: int
    backend: dict
    fixture_count: int | None


# ---------------------------------------------------------------------------
# Reply coercion


def first_json_object(text: str) -> dict:
    """Extract the first JSON object from free text, fences tolerated."""
    t = str(text).strip()
    if t.startswith("```"):
        newline = t.find("\n")
        if newline >= 0 and t.endswith("```"):
            t = t[newline + 1 : -3]
    idx = t.find("{")
    if idx < 0:
        raise TableParseError("no JSON object in reply")
    try:
        obj, _ = json.JSONDecoder().raw_decode(t[idx:])
    except json.JSONDecodeError as exc:
        raise TableParseError(f"malformed JSON in reply ({exc})") from exc
    if not isinstance(obj, dict):
        raise TableParseError("reply JSON is not an object")
    return obj


def _bounded_number(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TableParseError(f"{what} is not a number")
    out = float(value)
    if not 0.0 <= out <= 1.0:
        raise TableParseError(f"{what} {out} outside [0, 1]")
    return out


def coerce_table_text(text: str) -> dict:
    """Free-text reply to the canonical cost-table object, strictly.

    Accepts either the wire field names (entries/label) or the looser
    scene/objects/name vocabulary the prompt elicits. Out-of-range or
    duplicate entries are parse failures, never clamped, so the retry
    path re-asks the backend instead of shipping a mangled table.
    """
    obj = first_json_object(text)
    raw_entries = obj.get("entries", obj.get("objects"))
    if not isinstance(raw_entries, list) or not raw_entries:
        raise TableParseError("reply carries no object list")
    desc = obj.get("scene_description", obj.get("scene", ""))
    if not isinstance(desc, str):
        raise TableParseError("scene description is not text")
    entries = []
    seen: set[str] = set()
    for item in raw_entries:
        if not isinstance(item, dict):
            raise TableParseError("object entry is not a mapping")
        label = str(item.get("label") or item.get("name") or "").strip().lower()
        if not label:
            raise TableParseError("object entry with empty name")
        if label in seen:
            raise TableParseError(f"duplicate object {label!r}")
        seen.add(label)
        entry: dict = {"label": label, "risk": _bounded_number(item.get("risk"), f"risk for {label!r}")}
        if item.get("curiosity") is not None:
            entry["curiosity"] = _bounded_number(
                item["curiosity"], f"curiosity for {label!r}"
            )
        entries.append(entry)
    entries.sort(key=lambda e: e["label"])
    return {
        "schema_version": SCHEMA_VERSION,
        "scene_description": desc[:40],
        "source": "fresh_query",
        "entries": entries,
    }


def normalize_selection_text(text: str) -> str:
    """Force any reply into the two-line Reason/Color format.

    A reply with no recognizable color line becomes an explicit "none"
    selection carrying a diagnostic reason; the color word itself passes
    through untouched (the caller owns the color vocabulary).
    """
    reason = ""
    color = None
    for line in str(text).splitlines():
        stripped = line.strip()
        low = stripped.lower()
        if low.startswith("reason:"):
            reason = stripped.split(":", 1)[1].strip()
        elif low.startswith("color:") or low.startswith("colour:"):
            tail = stripped.split(":", 1)[1].strip()
            token = tail.strip("`'\"*.,;:!()[]{} ").lower()
            color = token.split()[0].strip("`'\"*.,;:!") if token else ""
    if not color:
        why = reason or "no color line in reply"
        return f"Reason: refused selection ({why})\nColor: none"
    return f"Reason: {reason}\nColor: {color}"


# ---------------------------------------------------------------------------
# Application


def build_app(config: AdapterConfig, backend=None) -> FastAPI:
    """Construct the service; backend overrides the registry when given.

    Replay mode never touches a backend: responses come from the fixture
    store alone, so no model is loaded at all.
    """
    store = (
        FixtureStore(config.fixture_dir) if config.mode in ("record", "replay") else None
    )
    if config.mode == "replay":
        backend = None
    elif backend is None:
        backend = make_backend(config)

    app = FastAPI(title="semnav-adapter", docs_url=None, redoc_url=None, openapi_url=None)

    @contextmanager
    def mapped_errors():
        try:
            yield
        except AdapterHTTPError:
            raise
        except DecodeError as exc:
            raise AdapterHTTPError(400, "decode_error", False, str(exc)) from exc
        except PayloadTooLarge as exc:
            raise AdapterHTTPError(413, "payload_too_large", False, str(exc)) from exc
        except FixtureMiss as exc:
            raise AdapterHTTPError(
                500,
                "fixture_missing",
                False,
                f"no fixture for {exc.endpoint} with key {exc.key}",
            ) from exc
        except UnparseableReply as exc:
            raise AdapterHTTPError(502, "unparseable_response", True, str(exc)) from exc
        except BackendError as exc:
            raise AdapterHTTPError(500, "model_error", True, str(exc)) from exc
        except Exception as exc:  # every response carries the error schema
            raise AdapterHTTPError(
                500, "internal_error", True, f"{type(exc).__name__}: {exc}"
            ) from exc

    def respond(endpoint: str, body_obj: dict, compute) -> Response:
        key = request_key(endpoint, body_obj)
        may_serve_stored = config.mode == "replay" or config.response_cache
        if store is not None and may_serve_stored and key in store:
            return Response(store.load(endpoint, key), media_type="application/json")
        if config.mode == "replay":
            raise FixtureMiss(endpoint, key)
        resp_obj, model_cls = compute()
        validated = model_cls.model_validate(resp_obj)
        body = canonical_json_bytes(validated.model_dump(exclude_none=True))
        if store is not None:
            store.save(endpoint, key, body_obj, body)
        return Response(body, media_type="application/json")

    def decode(image_b64: str) -> np.ndarray:
        return decode_image_b64(image_b64, config.max_image_bytes)

    @app.exception_handler(AdapterHTTPError)
    async def adapter_error(_request: Request, exc: AdapterHTTPError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "retryable": exc.retryable, "detail": exc.detail},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error(_request: Request, exc: RequestValidationError):
        parts = [
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}"
            for err in exc.errors()[:5]
        ]
        return JSONResponse(
            status_code=422,
            content={
                "code": "schema_violation",
                "retryable": False,
                "detail": "; ".join(parts)[:500],
            },
        )

    @app.post("/embed")
    def embed_endpoint(req: EmbedRequest) -> Response:
        with mapped_errors():

            def compute():
                rgb = decode(req.image_b64)
                vec = np.asarray(backend.embed(rgb), dtype=np.float64).reshape(-1)
                if vec.shape != (EMBEDDING_DIM,):
                    raise BackendError(
                        f"embedder returned {vec.shape[0]} dims, expected {EMBEDDING_DIM}"
                    )
                norm = float(np.linalg.norm(vec))
                if not np.isfinite(norm) or norm <= 0.0:
                    raise BackendError("embedder returned a degenerate vector")
                return (
                    {
                        "schema_version": SCHEMA_VERSION,
                        "frame_id": req.frame_id,
                        "embedding_b64": floats_to_b64(vec / norm),
                    },
                    EmbedResponse,
                )

            return respond("/embed", req.model_dump(), compute)

    @app.post("/segment")
    def segment_endpoint(req: SegmentRequest) -> Response:
        with mapped_errors():

            def compute():
                rgb = decode(req.image_b64)
                all_prompts = extend_with_backgrounds(tuple(req.labels))
                logits = np.asarray(
                    backend.segment_logits(rgb, all_prompts), dtype=np.float64
                )
                if logits.ndim != 3 or logits.shape[0] != len(all_prompts):
                    raise BackendError(
                        f"segmenter returned shape {logits.shape} "
                        f"for {len(all_prompts)} prompts"
                    )
                h, w = rgb.shape[:2]
                full = np.stack([bilinear_resize(ch, h, w) for ch in logits])
                probs = softmax_stack(full)
                return (
                    {
                        "schema_version": SCHEMA_VERSION,
                        "frame_id": req.frame_id,
                        "labels": list(all_prompts),
                        "height": h,
                        "width": w,
                        "stack_b64": floats_to_b64(probs),
                    },
                    SegmentResponse,
                )

            return respond("/segment", req.model_dump(), compute)

    @app.post("/scene_risk")
    def scene_risk_endpoint(req: SceneRiskRequest) -> Response:
        with mapped_errors():

            def compute():
                rgb = decode(req.image_b64)
                parts = prompts.scene_risk_parts(req.modality, req.prior_table or None)
                call = ReasonerCall("scene_risk", rgb, parts, temperature=0.0)
                last = "no attempt"
                table = None
                for _ in range(TABLE_ATTEMPTS):
                    text = backend.complete(call)
                    try:
                        table = coerce_table_text(text)
                        break
                    except TableParseError as exc:
                        last = str(exc)
                        if prompts.TABLE_FORMAT_REMINDER not in call.text_parts:
                            call = replace(
                                call,
                                text_parts=call.text_parts
                                + (prompts.TABLE_FORMAT_REMINDER,),
                            )
                if table is None:
                    raise UnparseableReply(
                        f"cost table unparseable after {TABLE_ATTEMPTS} attempts ({last})"
                    )
                return (
                    {
                        "schema_version": SCHEMA_VERSION,
                        "frame_id": req.frame_id,
                        "table": table,
                    },
                    SceneRiskResponse,
                )

            return respond("/scene_risk", req.model_dump(), compute)

    @app.post("/goal_point")
    def goal_point_endpoint(req: GoalPointRequest) -> Response:
        with mapped_errors():

            def compute():
                rgb = decode(req.image_b64)
                call = ReasonerCall(
                    "goal_point", rgb, prompts.goal_point_parts(req.goal_text), 0.0
                )
                text = backend.complete(call)
                try:
                    obj = first_json_object(text)
                except TableParseError as exc:
                    raise UnparseableReply(f"goal reply unparseable ({exc})") from exc
                found = bool(obj.get("found"))
                u = v = 0.0
                if found:
                    try:
                        u = float(obj.get("u", obj.get("u_norm")))
                        v = float(obj.get("v", obj.get("v_norm")))
                    except (TypeError, ValueError) as exc:
                        raise UnparseableReply("goal reply missing coordinates") from exc
                    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
                        raise UnparseableReply(
                            f"goal point ({u}, {v}) outside the unit square"
                        )
                return (
                    {
                        "schema_version": SCHEMA_VERSION,
                        "frame_id": req.frame_id,
                        "found": found,
                        "u_norm": u,
                        "v_norm": v,
                    },
                    GoalPointResponse,
                )

            return respond("/goal_point", req.model_dump(), compute)

    @app.post("/select_path")
    def select_path_endpoint(req: SelectPathRequest) -> Response:
        with mapped_errors():

            def compute():
                overlay = decode(req.overlay_b64)
                history = tuple(item.model_dump() for item in req.history)
                parts = prompts.select_path_parts(req.modality, req.behavior, history)
                call = ReasonerCall("select_path", overlay, parts, temperature=0.0)
                try:
                    text = normalize_selection_text(backend.complete(call))
                except BackendRefusal as exc:
                    text = f"Reason: backend refused ({exc})\nColor: none"
                return (
                    {
                        "schema_version": SCHEMA_VERSION,
                        "frame_id": req.frame_id,
                        "text": text,
                    },
                    SelectPathResponse,
                )

            return respond("/select_path", req.model_dump(), compute)

    @app.get("/health")
    def health_endpoint() -> Response:
        ids = (
            backend.identifiers()
            if backend is not None
            else {"embedder": None, "segmenter": None, "reasoner": None, "device": None}
        )
        obj = {
            "status": "ok",
            "ready": True,
            "mode": config.mode,
            "schema_version": SCHEMA_VERSION,
            "backend": ids,
            "fixture_count": len(store) if store is not None else None,
        }
        validated = HealthResponse.model_validate(obj)
        return Response(
            canonical_json_bytes(validated.model_dump()), media_type="application/json"
        )

    return app
