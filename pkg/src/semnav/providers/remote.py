"""HTTP client speaking the model-adapter protocol.

Each capability is one POST endpoint. Requests carry schema_version and
frame_id; responses must echo frame_id. Rasters travel as base64 binary
PPM. The client retries transport and server-side failures, surfaces
exactly one error after the retry budget, and bounds in-flight requests
(callers beyond the bound queue on a semaphore).
"""

from __future__ import annotations

import base64
import os
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests

from semnav.core import (
    SCHEMA_VERSION,
    CostTable,
    Embedding,
    Observation,
    RobotModality,
    ValidationError,
    cost_table_from_obj,
    cost_table_to_obj,
    embedding_from_b64,
    rgb_to_ppm,
)
from semnav.costmap import ClassProbabilityStack
from semnav.providers.base import GoalPointResponse, ProviderEndpointConfig, ProviderError
from semnav.reasoning import SelectionRequest, SelectionResponse

DEFAULT_MAX_IN_FLIGHT = 2


def _image_b64(rgb: np.ndarray) -> str:
    return base64.b64encode(rgb_to_ppm(rgb)).decode("ascii")


@dataclass
class RemoteProvider:
    config: ProviderEndpointConfig
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    session: object | None = None

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")
        if self.session is None:
            self.session = requests.Session()
        self._gate = threading.BoundedSemaphore(self.max_in_flight)
        self._seg_lock = threading.Lock()
        self._last_stack: tuple[int, ClassProbabilityStack] | None = None

    # -- plumbing -----------------------------------------------------------

    def _headers(self) -> dict:
        if not self.config.api_key_env:
            return {}
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise ProviderError(
                f"api key environment variable {self.config.api_key_env!r} is unset"
            )
        return {"Authorization": f"Bearer {key}"}

    def _post(self, path: str, body: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        headers = self._headers()
        last_err = "no attempt made"
        with self._gate:
            for _ in range(self.config.retry_count + 1):
                try:
                    resp = self.session.post(
                        url, json=body, timeout=self.config.timeout_s, headers=headers
                    )
                except requests.RequestException as exc:
                    last_err = f"transport: {exc}"
                    continue
                if 200 <= resp.status_code < 300:
                    payload = resp.json()
                    if payload.get("frame_id") != body["frame_id"]:
                        raise ProviderError(
                            f"{path}: response frame_id {payload.get('frame_id')!r} "
                            f"does not echo {body['frame_id']}"
                        )
                    return payload
                if 400 <= resp.status_code < 500:
                    raise ProviderError(f"{path}: HTTP {resp.status_code} (not retryable)")
                last_err = f"HTTP {resp.status_code}"
        raise ProviderError(f"{path}: failed after {self.config.retry_count + 1} attempts ({last_err})")

    # -- capabilities ---------------------------------------------------------

    def embed_frame(self, observation: Observation) -> Embedding:
        payload = self._post(
            "/embed",
            {
                "schema_version": SCHEMA_VERSION,
                "frame_id": observation.frame_id,
                "image_b64": _image_b64(observation.rgb),
            },
        )
        try:
            return embedding_from_b64(payload["embedding_b64"])
        except (KeyError, ValidationError, ValueError) as exc:
            raise ProviderError(f"/embed: bad payload ({exc})") from exc

    def segment_classes(
        self, observation: Observation, labels: Sequence[str]
    ) -> ClassProbabilityStack:
        labels = tuple(labels)
        try:
            payload = self._post(
                "/segment",
                {
                    "schema_version": SCHEMA_VERSION,
                    "frame_id": observation.frame_id,
                    "image_b64": _image_b64(observation.rgb),
                    "labels": list(labels),
                },
            )
            stack = self._decode_stack(payload)
        except ProviderError:
            with self._seg_lock:
                fallback = self._last_stack
            if fallback is not None and observation.frame_id - fallback[0] <= 2:
                return fallback[1]
            raise
        with self._seg_lock:
            self._last_stack = (observation.frame_id, stack)
        return stack

    @staticmethod
    def _decode_stack(payload: dict) -> ClassProbabilityStack:
        try:
            classes = tuple(payload["labels"])
            h = int(payload["height"])
            w = int(payload["width"])
            raw = base64.b64decode(payload["stack_b64"].encode("ascii"))
            maps = np.frombuffer(raw, dtype="<f8").reshape(len(classes), h, w)
            return ClassProbabilityStack(classes, maps.astype(np.float64))
        except (KeyError, ValueError, ValidationError) as exc:
            raise ProviderError(f"/segment: bad payload ({exc})") from exc

    def infer_scene_risks(
        self,
        observation: Observation,
        modality: RobotModality,
        prior_table: CostTable,
    ) -> CostTable:
        payload = self._post(
            "/scene_risk",
            {
                "schema_version": SCHEMA_VERSION,
                "frame_id": observation.frame_id,
                "image_b64": _image_b64(observation.rgb),
                "modality": modality.description,
                "prior_table": cost_table_to_obj(prior_table),
            },
        )
        # malformed tables raise ValidationError; the caller keeps its prior
        return cost_table_from_obj(payload.get("table", {}))

    def detect_goal_point(
        self, observation: Observation, goal_text: str
    ) -> GoalPointResponse:
        try:
            payload = self._post(
                "/goal_point",
                {
                    "schema_version": SCHEMA_VERSION,
                    "frame_id": observation.frame_id,
                    "image_b64": _image_b64(observation.rgb),
                    "goal_text": goal_text,
                },
            )
        except ProviderError:
            return GoalPointResponse(found=False)
        try:
            if not payload.get("found"):
                return GoalPointResponse(found=False)
            return GoalPointResponse(
                float(payload["u_norm"]), float(payload["v_norm"]), True
            )
        except (KeyError, TypeError, ValueError, ValidationError):
            return GoalPointResponse(found=False)

    def select_path(self, request: SelectionRequest) -> SelectionResponse:
        history = [
            {"digest": digest, "choice": result.choice, "frame_id": result.frame_id}
            for digest, result in request.history
        ]
        payload = self._post(
            "/select_path",
            {
                "schema_version": SCHEMA_VERSION,
                "frame_id": request.frame_id,
                "overlay_b64": _image_b64(request.overlay.pixels),
                "modality": request.modality_text,
                "behavior": request.behavior_text,
                "history": history,
            },
        )
        text = payload.get("text")
        if not isinstance(text, str):
            raise ProviderError("/select_path: response missing text")
        return SelectionResponse(text, 0.0)

    def health(self) -> dict:
        url = self.config.base_url.rstrip("/") + "/health"
        try:
            resp = self.session.get(url, timeout=self.config.timeout_s)
        except requests.RequestException as exc:
            raise ProviderError(f"/health: transport: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(f"/health: HTTP {resp.status_code}")
        return resp.json()
