"""Shared domain types, validation, and canonical serialization.

Everything here is an immutable value object; instances are safe to share
across threads. Cost tables and embeddings have a canonical structured-text
form (versioned, sorted, diffable) used by cache snapshots, replay logs,
and the provider wire protocol.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1

EMBEDDING_DIM = 768

#: Sources a cost table can come from.
TABLE_SOURCES = ("fresh_query", "cache_aggregate", "fixture")

#: oracle_rule values the simulator knows how to check (avoid_class:<label>
#: is a parameterized family).
BEHAVIOR_RULES = (
    "stay_left_of_centerline",
    "stay_right_of_centerline",
    "stay_center_band",
    "none",
)


class ValidationError(ValueError):
    """Raised when a provider payload or config violates a type invariant."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = theta % math.tau
    if r > math.pi:
        r -= math.tau
    return r


@dataclass(frozen=True)
class RobotModality:
    """Embodiment description injected into provider prompts.

    description is free text (e.g. "a wheeled robot, 0.3 m ground
    clearance"); footprint_radius and max_speed are the metric facts the
    planner and follower actually consume.
    """

    description: str
    footprint_radius: float
    max_speed: float

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise ValidationError("modality description must be non-empty")
        if self.footprint_radius <= 0:
            raise ValidationError("footprint_radius must be > 0")
        if self.max_speed <= 0:
            raise ValidationError("max_speed must be > 0")


@dataclass(frozen=True)
class RiskEntry:
    """One class label with its traversal risk and optional curiosity score."""

    label: str
    risk: float
    curiosity: float | None = None

    def __post_init__(self) -> None:
        if not self.label or self.label != self.label.strip():
            raise ValidationError(f"bad label {self.label!r}")
        if not 0.0 <= self.risk <= 1.0:
            raise ValidationError(f"risk {self.risk} outside [0, 1] for {self.label!r}")
        if self.curiosity is not None and not 0.0 <= self.curiosity <= 1.0:
            raise ValidationError(f"curiosity {self.curiosity} outside [0, 1]")


@dataclass(frozen=True)
class CostTable:
    """Mapping from class labels to traversal risks, plus scene context.

    Labels are unique within a table. source records whether the table came
    straight from a provider, from cache aggregation, or from a test fixture.
    """

    entries: tuple[RiskEntry, ...]
    scene_description: str = ""
    source: str = "fresh_query"

    def __post_init__(self) -> None:
        labels = [e.label for e in self.entries]
        if len(set(labels)) != len(labels):
            dupes = sorted({l for l in labels if labels.count(l) > 1})
            raise ValidationError(f"duplicate labels {dupes}")
        if self.source not in TABLE_SOURCES:
            raise ValidationError(f"unknown source {self.source!r}")
        if len(self.scene_description) > 40:
            raise ValidationError("scene_description longer than 40 chars")

    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def risk_of(self, label: str) -> float:
        for e in self.entries:
            if e.label == label:
                return e.risk
        raise KeyError(label)

    def as_dict(self) -> dict[str, float]:
        return {e.label: e.risk for e in self.entries}

    def with_source(self, source: str) -> "CostTable":
        return CostTable(self.entries, self.scene_description, source)


@dataclass(frozen=True)
class Embedding:
    """Unit-norm vector keying the visuosemantic cache. Always 768-dim."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (EMBEDDING_DIM,):
            raise ValidationError(f"embedding shape {v.shape}, expected ({EMBEDDING_DIM},)")
        n = float(np.linalg.norm(v))
        if abs(n - 1.0) > 1e-6:
            raise ValidationError(f"embedding norm {n} not within 1e-6 of 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def distance_to(self, other: "Embedding") -> float:
        return float(np.linalg.norm(self.values - other.values))


@dataclass(frozen=True)
class Pose2D:
    """Planar pose; heading wrapped into (-pi, pi]."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus mount height and pitch (down positive, rad).

    Camera frame convention: x right, y down, z forward along the optical
    axis. Depth images carry Euclidean range along the pixel ray.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    mount_height: float = 0.0
    pitch: float = 0.0

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point outside image")


@dataclass(frozen=True)
class Observation:
    """One rendered camera frame: color, range, and per-pixel class truth.

    depth carries Euclidean range along each pixel ray; +inf marks sky
    pixels with no hit. class_map indexes into labels. The class truth is
    what deterministic mock providers consume; remote providers see only
    the color raster.
    """

    rgb: np.ndarray
    depth: np.ndarray
    class_map: np.ndarray
    labels: tuple[str, ...]
    frame_id: int = 0

    def __post_init__(self) -> None:
        rgb = np.ascontiguousarray(np.asarray(self.rgb, dtype=np.uint8))
        depth = np.asarray(self.depth, dtype=np.float64)
        cmap = np.asarray(self.class_map, dtype=np.int32)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValidationError(f"rgb shape {rgb.shape}, expected (H, W, 3)")
        h, w = rgb.shape[:2]
        if depth.shape != (h, w) or cmap.shape != (h, w):
            raise ValidationError("depth/class_map shape mismatch with rgb")
        if np.any(np.isnan(depth)) or np.any(depth < 0):
            raise ValidationError("depth must be >= 0 (inf = no hit)")
        if not self.labels:
            raise ValidationError("labels must be non-empty")
        if cmap.min() < 0 or cmap.max() >= len(self.labels):
            raise ValidationError("class_map index outside labels")
        for arr in (rgb, depth, cmap):
            arr.setflags(write=False)
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "class_map", cmap)
        object.__setattr__(self, "labels", tuple(self.labels))

    def label_fractions(self) -> dict[str, float]:
        """Fraction of pixels per visible label (only labels that appear)."""
        counts = np.bincount(self.class_map.ravel(), minlength=len(self.labels))
        total = float(self.class_map.size)
        return {
            self.labels[i]: counts[i] / total
            for i in range(len(self.labels))
            if counts[i] > 0
        }


def rgb_to_ppm(rgb: np.ndarray) -> bytes:
    """Binary P6 raster for a (H, W, 3) uint8 image."""
    arr = np.ascontiguousarray(np.asarray(rgb, dtype=np.uint8))
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"rgb shape {arr.shape}, expected (H, W, 3)")
    h, w = arr.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def ppm_to_rgb(data: bytes) -> np.ndarray:
    """Parse a binary P6 raster back into (H, W, 3) uint8."""
    if not data.startswith(b"P6"):
        raise ValidationError("not a binary P6 raster")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise ValidationError(f"unsupported maxval {maxval}")
    body = data[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise ValidationError("truncated raster body")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


@dataclass(frozen=True)
class BehaviorSpec:
    """Mission constraint: free text plus an optional machine-checkable rule."""

    text: str
    oracle_rule: str | None = None

    def __post_init__(self) -> None:
        r = self.oracle_rule
        if r is not None and r not in BEHAVIOR_RULES and not r.startswith("avoid_class:"):
            raise ValidationError(f"unregistered oracle rule {r!r}")
        if r is not None and r.startswith("avoid_class:") and not r.split(":", 1)[1]:
            raise ValidationError("avoid_class rule needs a label")


# ---------------------------------------------------------------------------
# Validation of provider output


def validate_cost_table(raw: dict) -> CostTable:
    """Turn a parsed provider response into a CostTable, strictly.

    Out-of-range risks are errors, never clamped; the caller keeps its last
    good table on failure. Labels are lowercased and whitespace-trimmed so
    the same class hits the same cache slot across frames. The scene
    description is truncated to 40 chars.
    """
    if not isinstance(raw, dict):
        raise ValidationError("cost table payload must be a mapping")
    entries = []
    seen: set[str] = set()
    for item in raw.get("entries", []):
        label = str(item.get("label", "")).strip().lower()
        if not label:
            raise ValidationError("entry with empty label")
        if label in seen:
            raise ValidationError(f"duplicate label {label!r}")
        seen.add(label)
        if "risk" not in item or item["risk"] is None:
            raise ValidationError(f"entry {label!r} missing risk")
        risk = float(item["risk"])
        if not 0.0 <= risk <= 1.0:
            raise ValidationError(f"risk {risk} outside [0, 1] for {label!r}")
        curiosity = item.get("curiosity")
        if curiosity is not None:
            curiosity = float(curiosity)
            if not 0.0 <= curiosity <= 1.0:
                raise ValidationError(f"curiosity {curiosity} outside [0, 1]")
        entries.append(RiskEntry(label, risk, curiosity))
    desc = str(raw.get("scene_description", ""))[:40]
    source = raw.get("source", "fresh_query")
    return CostTable(tuple(entries), desc, source)


def normalize_embedding(values) -> Embedding:
    """Scale a 768-dim vector to unit norm. Zero vectors are an error."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (EMBEDDING_DIM,):
        raise ValidationError(f"embedding shape {v.shape}, expected ({EMBEDDING_DIM},)")
    n = float(np.linalg.norm(v))
    if n == 0.0 or not math.isfinite(n):
        raise ValidationError("cannot normalize zero or non-finite vector")
    return Embedding(v / n)


# ---------------------------------------------------------------------------
# Canonical serialization (schema_version'd, sorted, diffable)


def cost_table_to_obj(table: CostTable) -> dict:
    entries = sorted(table.entries, key=lambda e: e.label)
    out_entries = []
    for e in entries:
        d: dict = {"label": e.label, "risk": e.risk}
        if e.curiosity is not None:
            d["curiosity"] = e.curiosity
        out_entries.append(d)
    return {
        "schema_version": SCHEMA_VERSION,
        "scene_description": table.scene_description,
        "source": table.source,
        "entries": out_entries,
    }


def cost_table_to_text(table: CostTable) -> str:
    """Canonical UTF-8 document for a cost table (sorted labels and keys)."""
    return json.dumps(cost_table_to_obj(table), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def cost_table_from_obj(obj: dict) -> CostTable:
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {obj.get('schema_version')!r}")
    return validate_cost_table(obj)


def cost_table_from_text(text: str) -> CostTable:
    return cost_table_from_obj(json.loads(text))


def embedding_to_b64(emb: Embedding) -> str:
    """Bit-exact base64 of the little-endian float64 payload."""
    return base64.b64encode(emb.values.astype("<f8").tobytes()).decode("ascii")


def embedding_from_b64(text: str) -> Embedding:
    raw = base64.b64decode(text.encode("ascii"))
    v = np.frombuffer(raw, dtype="<f8")
    return Embedding(v.astype(np.float64))


def pose_to_obj(pose: Pose2D) -> dict:
    return {"x": pose.x, "y": pose.y, "heading": pose.heading}


def pose_from_obj(obj: dict) -> Pose2D:
    return Pose2D(float(obj["x"]), float(obj["y"]), float(obj["heading"]))
