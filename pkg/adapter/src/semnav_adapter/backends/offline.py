"""Deterministic stand-in backend.

No weights, no network: embeddings come from patch means, segmentation
logits from per-label hash directions over patch color statistics, and the
reasoner follows fixed rules over image statistics. Outputs depend only on
the inputs, so recorded fixtures are reproducible from any machine. Used
to author CI fixtures and as the default serving backend.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from semnav_adapter.backends.base import BackendError, ReasonerCall
from semnav_adapter.prompts import PRIOR_TABLE_HEADER

PATCH_GRID = 8
EMBED_DIM = 768
LOGIT_SCALE = 4.0
CLUTTER_CONTRAST = 12.0
SATURATION_FLOOR = 40.0

# fixed carrier pattern for the unused embedding coordinates; module-level
# so every process derives the identical vector
_CARRIER = np.random.default_rng(0x5EA5_0FF1).normal(0.0, 0.05, EMBED_DIM)

_SELECTOR_COLORS = (
    ("green", (0, 255, 0)),
    ("blue", (0, 0, 255)),
    ("yellow", (255, 255, 0)),
    ("red", (255, 0, 0)),
)


def _patch_means(rgb: np.ndarray, grid: int) -> np.ndarray:
    """(grid, grid, 3) block means in [0, 1]; blocks cover the image."""
    h, w = rgb.shape[:2]
    gy, gx = min(grid, h), min(grid, w)
    ye = np.linspace(0, h, gy + 1).astype(int)
    xe = np.linspace(0, w, gx + 1).astype(int)
    out = np.zeros((grid, grid, 3))
    img = rgb.astype(np.float64) / 255.0
    for i in range(gy):
        for j in range(gx):
            out[i, j] = img[ye[i] : ye[i + 1], xe[j] : xe[j + 1]].mean(axis=(0, 1))
    return out


def _label_direction(label: str) -> np.ndarray:
    d = hashlib.sha256(label.encode("utf-8")).digest()
    v = np.array([int.from_bytes(d[i : i + 4], "big") for i in (0, 4, 8)], dtype=np.float64)
    v = v / 2**31 - 1.0
    n = float(np.linalg.norm(v))
    return v / n if n > 0 else np.array([1.0, 0.0, 0.0])


class OfflineBackend:
    def identifiers(self) -> dict:
        return {
            "embedder": "offline/patch-mean-768",
            "segmenter": "offline/label-hash-lowres",
            "reasoner": "offline/rule-based",
            "device": "cpu",
        }

    def embed(self, rgb: np.ndarray) -> np.ndarray:
        feats = _patch_means(rgb, PATCH_GRID).reshape(-1) - 0.5
        vec = _CARRIER.copy()
        vec[: feats.size * 4 : 4] = feats
        return vec

    def segment_logits(self, rgb: np.ndarray, prompts: tuple[str, ...]) -> np.ndarray:
        h, w = rgb.shape[:2]
        lh, lw = max(1, math.ceil(h / 8)), max(1, math.ceil(w / 8))
        img = rgb.astype(np.float64) / 255.0
        ye = np.linspace(0, h, lh + 1).astype(int)
        xe = np.linspace(0, w, lw + 1).astype(int)
        cells = np.zeros((lh, lw, 3))
        for i in range(lh):
            for j in range(lw):
                cells[i, j] = img[ye[i] : ye[i + 1], xe[j] : xe[j + 1]].mean(axis=(0, 1))
        # zero-mean color contrast: a flat image scores every prompt equally
        contrast = cells - img.mean(axis=(0, 1))
        out = np.zeros((len(prompts), lh, lw))
        for k, label in enumerate(prompts):
            out[k] = LOGIT_SCALE * (contrast @ _label_direction(label))
        return out

    def complete(self, call: ReasonerCall) -> str:
        if call.kind == "scene_risk":
            return self._scene_risk(call)
        if call.kind == "goal_point":
            return self._goal_point(call)
        if call.kind == "select_path":
            return self._select_path(call)
        raise BackendError(f"unknown call kind {call.kind!r}")

    def _scene_risk(self, call: ReasonerCall) -> str:
        gray = call.image.astype(np.float64).mean(axis=2)
        tag = hashlib.sha256(call.image.tobytes()).hexdigest()[:8]
        objects = [{"name": "ground", "risk": 0.05, "curiosity": 0.1}]
        if float(gray.std()) > CLUTTER_CONTRAST:
            objects.append({"name": "clutter", "risk": 0.7, "curiosity": 0.4})
        seen = {o["name"] for o in objects}
        for entry in self._prior_entries(call.text_parts):
            if entry["label"] not in seen:
                seen.add(entry["label"])
                kept = {"name": entry["label"], "risk": entry["risk"]}
                if entry.get("curiosity") is not None:
                    kept["curiosity"] = entry["curiosity"]
                objects.append(kept)
        doc = {"scene": f"scene {tag}", "objects": objects}
        return "```json\n" + json.dumps(doc, sort_keys=True) + "\n```"

    @staticmethod
    def _prior_entries(text_parts: tuple[str, ...]) -> list:
        for part in text_parts:
            if part.startswith(PRIOR_TABLE_HEADER):
                payload = part[len(PRIOR_TABLE_HEADER) :].strip()
                try:
                    return list(json.loads(payload).get("entries", []))
                except (json.JSONDecodeError, AttributeError):
                    return []
        return []

    def _goal_point(self, call: ReasonerCall) -> str:
        img = call.image.astype(np.float64)
        saturation = img.max(axis=2) - img.min(axis=2)
        peak = float(saturation.max())
        if peak < SATURATION_FLOOR:
            return json.dumps({"found": False})
        mask = saturation >= 0.8 * peak
        ys, xs = np.nonzero(mask)
        h, w = saturation.shape
        u = float(xs.mean() / max(w - 1, 1))
        v = float(ys.mean() / max(h - 1, 1))
        return json.dumps({"found": True, "u": round(u, 6), "v": round(v, 6)})

    def _select_path(self, call: ReasonerCall) -> str:
        img = call.image
        visible = []
        for color_word, (r, g, b) in _SELECTOR_COLORS:
            hit = (img[:, :, 0] == r) & (img[:, :, 1] == g) & (img[:, :, 2] == b)
            if int(hit.sum()) >= 12:
                visible.append(color_word)
        if not visible:
            return "Reason: no path lines visible\nColor: none"
        return f"Reason: visible lines {', '.join(visible)}\nColor: {visible[0]}"
