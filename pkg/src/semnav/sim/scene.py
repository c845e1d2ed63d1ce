"""World model: a 2.5D terrain grid, scripted agents, and task generators.

A scene is authored as a small declarative dict (ground fill plus shapes)
that rasterizes deterministically onto per-cell class/risk/height grids.
The same dict round-trips through YAML, feeds the scene digest, and is
what the bundled task generators emit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from semnav.core import (
    SCHEMA_VERSION,
    BehaviorSpec,
    Pose2D,
    ValidationError,
)

TASK_NAMES = (
    "footpath-right",
    "footpath-center",
    "human-crossing",
    "bench-field",
    "paper-indoor",
)

#: Colors assumed for background labels everywhere a palette lacks them.
BACKGROUND_PALETTE = {
    "background": (120, 120, 120),
    "sky": (135, 206, 235),
    "nothing": (0, 0, 0),
}


@dataclass(frozen=True)
class DynamicAgent:
    """Scripted mover: a disc of one class following a timed polyline."""

    label: str
    radius: float
    risk: float
    height: float
    trajectory: tuple[tuple[float, float, float], ...]  # (t, x, y)

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValidationError("agent radius must be > 0")
        if not 0.0 <= self.risk <= 1.0:
            raise ValidationError("agent risk outside [0, 1]")
        if self.height < 0:
            raise ValidationError("agent height must be >= 0")
        if len(self.trajectory) < 1:
            raise ValidationError("agent trajectory needs at least one waypoint")
        ts = [w[0] for w in self.trajectory]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("agent trajectory times must strictly increase")

    def position(self, t: float) -> tuple[float, float]:
        """Piecewise-linear position, clamped to the endpoints."""
        traj = self.trajectory
        if t <= traj[0][0]:
            return traj[0][1], traj[0][2]
        if t >= traj[-1][0]:
            return traj[-1][1], traj[-1][2]
        for (t0, x0, y0), (t1, x1, y1) in zip(traj, traj[1:]):
            if t0 <= t <= t1:
                a = (t - t0) / (t1 - t0)
                return x0 + a * (x1 - x0), y0 + a * (y1 - y0)
        return traj[-1][1], traj[-1][2]


@dataclass
class Scene:
    """Rasterized world truth plus the declarative source it came from."""

    name: str
    resolution: float
    origin: tuple[float, float]
    labels: tuple[str, ...]
    class_grid: np.ndarray  # (H, W) int32 indices into labels
    risk_grid: np.ndarray  # (H, W) float64 true risk
    height_grid: np.ndarray  # (H, W) float64 obstacle height, 0 = flat
    palette: dict[str, tuple[int, int, int]]
    agents: tuple[DynamicAgent, ...]
    start: Pose2D
    goal: Pose2D | str
    behavior: BehaviorSpec
    centerline_y: float | None = None
    band_halfwidth: float = 0.5
    source: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValidationError("resolution must be > 0")
        for lab in self.labels:
            if lab not in self.palette and lab not in BACKGROUND_PALETTE:
                raise ValidationError(f"class {lab!r} missing from palette")
        for agent in self.agents:
            if agent.label not in self.palette and agent.label not in BACKGROUND_PALETTE:
                raise ValidationError(f"agent class {agent.label!r} missing from palette")
        h, w = self.class_grid.shape
        if self.risk_grid.shape != (h, w) or self.height_grid.shape != (h, w):
            raise ValidationError("scene grids must share one shape")
        if isinstance(self.goal, str) and self.goal not in self.labels:
            raise ValidationError(f"goal class {self.goal!r} not in scene labels")

    # -- geometry -------------------------------------------------------------

    @property
    def height_cells(self) -> int:
        return self.class_grid.shape[0]

    @property
    def width_cells(self) -> int:
        return self.class_grid.shape[1]

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the rasterized area."""
        x0, y0 = self.origin
        return (
            x0,
            y0,
            x0 + self.width_cells * self.resolution,
            y0 + self.height_cells * self.resolution,
        )

    def cell_index(self, x: float, y: float) -> tuple[int, int] | None:
        col = int(math.floor((x - self.origin[0]) / self.resolution))
        row = int(math.floor((y - self.origin[1]) / self.resolution))
        if 0 <= row < self.height_cells and 0 <= col < self.width_cells:
            return row, col
        return None

    def class_label_at(self, x: float, y: float) -> str | None:
        idx = self.cell_index(x, y)
        if idx is None:
            return None
        return self.labels[self.class_grid[idx]]

    def true_risk_at(self, x: float, y: float) -> float:
        idx = self.cell_index(x, y)
        return float(self.risk_grid[idx]) if idx is not None else 0.0

    def class_risks(self) -> dict[str, float]:
        """Max true risk per class, agents included; what mocks answer with."""
        out: dict[str, float] = {}
        for j, lab in enumerate(self.labels):
            mask = self.class_grid == j
            if mask.any():
                out[lab] = float(self.risk_grid[mask].max())
        for agent in self.agents:
            out[agent.label] = max(out.get(agent.label, 0.0), agent.risk)
        return out

    def goal_truth(self) -> Pose2D:
        """Metric goal, or the centroid of the goal class's cells."""
        if isinstance(self.goal, Pose2D):
            return self.goal
        j = self.labels.index(self.goal)
        rows, cols = np.nonzero(self.class_grid == j)
        if rows.size == 0:
            raise ValidationError(f"goal class {self.goal!r} has no cells")
        x0, y0 = self.origin
        res = self.resolution
        return Pose2D(
            x0 + (float(cols.mean()) + 0.5) * res,
            y0 + (float(rows.mean()) + 0.5) * res,
        )

    def agent_positions(self, t: float) -> list[tuple[float, float, float]]:
        """(x, y, radius) per agent at simulated time t."""
        return [(*a.position(t), a.radius) for a in self.agents]

    def solids(self, t: float) -> list[tuple]:
        """Analytic solid obstacles at time t, for exact ray intersection.

        Returns ("disc", cx, cy, r, height, class_idx) and
        ("rect", x0, x1, y0, y1, height, class_idx) tuples; flat shapes
        are ground texture, not solids, and are left out.
        """
        lab_index = {lab: j for j, lab in enumerate(self.labels)}
        out: list[tuple] = []
        for shape in self.source.get("shapes", ()):
            hgt = float(shape.get("height", 0.0))
            if hgt <= 0.0:
                continue
            j = lab_index[shape["class"]]
            if shape["kind"] == "rect":
                sx0, sx1 = (float(v) for v in shape["x"])
                sy0, sy1 = (float(v) for v in shape["y"])
                out.append(("rect", sx0, sx1, sy0, sy1, hgt, j))
            else:
                out.append(
                    ("disc", float(shape["cx"]), float(shape["cy"]), float(shape["r"]), hgt, j)
                )
        for agent in self.agents:
            if agent.height <= 0.0:
                continue
            ax, ay = agent.position(t)
            out.append(("disc", ax, ay, agent.radius, agent.height, lab_index[agent.label]))
        return out

    def stamped_grids(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """class/height grids with agents stamped in at time t."""
        if not self.agents:
            return self.class_grid, self.height_grid
        cls = self.class_grid.copy()
        hgt = self.height_grid.copy()
        x0, y0 = self.origin
        res = self.resolution
        for agent in self.agents:
            ax, ay = agent.position(t)
            j = self.labels.index(agent.label)
            r_lo = max(0, int(math.floor((ay - agent.radius - y0) / res)))
            r_hi = min(self.height_cells, int(math.ceil((ay + agent.radius - y0) / res)) + 1)
            c_lo = max(0, int(math.floor((ax - agent.radius - x0) / res)))
            c_hi = min(self.width_cells, int(math.ceil((ax + agent.radius - x0) / res)) + 1)
            if r_lo >= r_hi or c_lo >= c_hi:
                continue
            rows = y0 + (np.arange(r_lo, r_hi) + 0.5) * res
            cols = x0 + (np.arange(c_lo, c_hi) + 0.5) * res
            dy = rows[:, None] - ay
            dx = cols[None, :] - ax
            disc = dx * dx + dy * dy <= agent.radius**2
            cls[r_lo:r_hi, c_lo:c_hi][disc] = j
            hgt[r_lo:r_hi, c_lo:c_hi][disc] = np.maximum(
                hgt[r_lo:r_hi, c_lo:c_hi][disc], agent.height
            )
        return cls, hgt

    # -- behavior oracle --------------------------------------------------------

    def violation_length(self, waypoints, behavior: BehaviorSpec | None = None) -> float:
        """Meters of a polyline spent violating the behavior rule.

        Sampled at 2 cm; the midpoint of each mini-segment decides whether
        its length counts. Accepts Pose2D sequences, (N, 2) arrays, or
        planned paths.
        """
        spec = behavior if behavior is not None else self.behavior
        rule = spec.oracle_rule
        if rule is None or rule == "none":
            return 0.0
        pts = _as_xy(waypoints)
        if len(pts) < 2:
            return 0.0
        mids, ds = _resample_midpoints(pts, 0.02)
        if mids.size == 0:
            return 0.0
        if rule == "stay_right_of_centerline":
            bad = mids[:, 1] > self._centerline()
        elif rule == "stay_left_of_centerline":
            bad = mids[:, 1] < self._centerline()
        elif rule == "stay_center_band":
            bad = np.abs(mids[:, 1] - self._centerline()) > self.band_halfwidth
        elif rule.startswith("avoid_class:"):
            target = rule.split(":", 1)[1]
            bad = np.array([self.class_label_at(x, y) == target for x, y in mids])
        else:
            raise ValidationError(f"unhandled oracle rule {rule!r}")
        return float(ds[bad].sum())

    def _centerline(self) -> float:
        if self.centerline_y is None:
            raise ValidationError("scene has no centerline for this behavior rule")
        return self.centerline_y

    # -- serialization ----------------------------------------------------------

    def to_obj(self) -> dict:
        return dict(self.source)

    def digest(self) -> str:
        blob = json.dumps(self.to_obj(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_obj(), fh, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "Scene":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_obj(yaml.safe_load(fh))

    @classmethod
    def from_obj(cls, obj: dict) -> "Scene":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {obj.get('schema_version')!r}")
        res = float(obj["resolution"])
        xmin, ymin, xmax, ymax = (float(v) for v in obj["extent"])
        if xmax <= xmin or ymax <= ymin:
            raise ValidationError("extent must be positive in both axes")
        w = int(round((xmax - xmin) / res))
        h = int(round((ymax - ymin) / res))
        labels = tuple(obj["labels"])
        if len(set(labels)) != len(labels):
            raise ValidationError("duplicate scene labels")
        lab_index = {lab: j for j, lab in enumerate(labels)}
        class_risk = {str(k): float(v) for k, v in obj.get("class_risk", {}).items()}

        ground = obj["ground"]
        if ground not in lab_index:
            raise ValidationError(f"ground class {ground!r} not in labels")
        class_grid = np.full((h, w), lab_index[ground], dtype=np.int32)
        height_grid = np.zeros((h, w), dtype=np.float64)

        cols_x = xmin + (np.arange(w) + 0.5) * res
        rows_y = ymin + (np.arange(h) + 0.5) * res
        for shape in obj.get("shapes", ()):
            lab = shape["class"]
            if lab not in lab_index:
                raise ValidationError(f"shape class {lab!r} not in labels")
            hgt = float(shape.get("height", 0.0))
            kind = shape["kind"]
            if kind == "rect":
                sx0, sx1 = (float(v) for v in shape["x"])
                sy0, sy1 = (float(v) for v in shape["y"])
                mask = (
                    (cols_x[None, :] >= sx0)
                    & (cols_x[None, :] < sx1)
                    & (rows_y[:, None] >= sy0)
                    & (rows_y[:, None] < sy1)
                )
            elif kind == "disc":
                cx, cy, r = float(shape["cx"]), float(shape["cy"]), float(shape["r"])
                mask = (cols_x[None, :] - cx) ** 2 + (rows_y[:, None] - cy) ** 2 <= r * r
            else:
                raise ValidationError(f"unknown shape kind {kind!r}")
            class_grid[mask] = lab_index[lab]
            height_grid[mask] = hgt

        risk_grid = np.zeros((h, w), dtype=np.float64)
        for lab, j in lab_index.items():
            risk = class_risk.get(lab, 0.0)
            if not 0.0 <= risk <= 1.0:
                raise ValidationError(f"class risk {risk} outside [0, 1] for {lab!r}")
            risk_grid[class_grid == j] = risk

        palette = {
            str(k): tuple(int(c) for c in v) for k, v in obj.get("palette", {}).items()
        }
        agents = tuple(
            DynamicAgent(
                a["class"],
                float(a["radius"]),
                float(a["risk"]),
                float(a["height"]),
                tuple((float(t), float(x), float(y)) for t, x, y in a["trajectory"]),
            )
            for a in obj.get("agents", ())
        )
        goal_obj = obj["goal"]
        goal: Pose2D | str
        if isinstance(goal_obj, str):
            goal = goal_obj
        else:
            goal = Pose2D(float(goal_obj[0]), float(goal_obj[1]))
        beh = obj.get("behavior", {})
        behavior = BehaviorSpec(str(beh.get("text", "")), beh.get("rule"))
        start = obj["start"]
        return cls(
            name=str(obj.get("name", "scene")),
            resolution=res,
            origin=(xmin, ymin),
            labels=labels,
            class_grid=class_grid,
            risk_grid=risk_grid,
            height_grid=height_grid,
            palette=palette,
            agents=agents,
            start=Pose2D(float(start[0]), float(start[1]), float(start[2]) if len(start) > 2 else 0.0),
            goal=goal,
            behavior=behavior,
            centerline_y=obj.get("centerline_y"),
            band_halfwidth=float(obj.get("band_halfwidth", 0.5)),
            source=obj,
        )


def _as_xy(waypoints) -> np.ndarray:
    if hasattr(waypoints, "xy_array"):
        return waypoints.xy_array()
    if isinstance(waypoints, np.ndarray):
        return np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    return np.array([[p.x, p.y] if hasattr(p, "x") else [p[0], p[1]] for p in waypoints])


def _resample_midpoints(pts: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Midpoints and lengths of dense mini-segments along a polyline."""
    mids = []
    lens = []
    for a, b in zip(pts[:-1], pts[1:]):
        seg = float(np.hypot(*(b - a)))
        if seg == 0.0:
            continue
        n = max(1, int(math.ceil(seg / step)))
        ts = (np.arange(n) + 0.5) / n
        mids.append(a[None, :] + ts[:, None] * (b - a)[None, :])
        lens.append(np.full(n, seg / n))
    if not mids:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(mids), np.concatenate(lens)


# ---------------------------------------------------------------------------
# Task generators


#: Shared colors so rendered classes look consistent across tasks.
_PALETTE = {
    "pavement": (128, 128, 128),
    "grass": (64, 160, 64),
    "person": (220, 160, 120),
    "bench": (150, 100, 50),
    "cone": (255, 120, 0),
    "floor": (200, 190, 170),
    "wall": (90, 90, 110),
    "paper": (245, 245, 245),
}


def _rng_for(task: str, seed: int) -> np.random.Generator:
    digest = hashlib.sha256(f"scene:{task}:{seed}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int.from_bytes(digest, "big"))))


def _palette_for(labels) -> dict:
    return {lab: list(_PALETTE[lab]) for lab in labels}


def _footpath_obj(name: str, seed: int, behavior: dict, start_y: float, goal_y: float) -> dict:
    rng = _rng_for(name, seed)
    width = 2.0 + float(rng.uniform(-0.2, 0.2))
    return {
        "schema_version": SCHEMA_VERSION,
        "name": name,
        "seed": seed,
        "resolution": 0.1,
        "extent": [-2.0, -5.0, 24.0, 5.0],
        "labels": ["grass", "pavement"],
        "ground": "grass",
        "shapes": [
            {"kind": "rect", "class": "pavement", "x": [-2.0, 24.0], "y": [-width / 2, width / 2]}
        ],
        "class_risk": {"grass": 0.3, "pavement": 0.1},
        "palette": _palette_for(["grass", "pavement"]),
        "agents": [],
        "start": [0.5, start_y, 0.0],
        "goal": [20.5, goal_y],
        "behavior": behavior,
        "centerline_y": 0.0,
        "band_halfwidth": 0.8,
    }


def footpath_right(seed: int) -> dict:
    """20 m pavement course; keep to the right half of the path."""
    behavior = {
        "text": "stay on the right side of the footpath",
        "rule": "stay_right_of_centerline",
    }
    return _footpath_obj("footpath-right", seed, behavior, start_y=-0.5, goal_y=-0.5)


def footpath_center(seed: int) -> dict:
    """20 m pavement course; hold the center band."""
    behavior = {"text": "walk along the middle of the footpath", "rule": "stay_center_band"}
    return _footpath_obj("footpath-center", seed, behavior, start_y=0.0, goal_y=0.0)


def human_crossing(seed: int) -> dict:
    """17 m course with a scripted person crossing the corridor.

    The walker is slow enough that it reaches the robot's lane only after
    a nominal-speed robot has passed the crossing point; its painted risk
    band therefore never seals the corridor (risk cells are permanent).
    """
    rng = _rng_for("human-crossing", seed)
    x_cross = 8.5 + float(rng.uniform(-0.5, 0.5))
    speed = 0.12 + float(rng.uniform(0.0, 0.03))
    y_from, y_to = 5.0, -5.0
    duration = (y_from - y_to) / speed
    return {
        "schema_version": SCHEMA_VERSION,
        "name": "human-crossing",
        "seed": seed,
        "resolution": 0.1,
        "extent": [-2.0, -5.0, 21.0, 5.0],
        "labels": ["grass", "pavement", "person"],
        "ground": "grass",
        "shapes": [
            {"kind": "rect", "class": "pavement", "x": [-2.0, 21.0], "y": [-1.1, 1.1]}
        ],
        "class_risk": {"grass": 0.3, "pavement": 0.1, "person": 0.7},
        "palette": _palette_for(["grass", "pavement", "person"]),
        "agents": [
            {
                "class": "person",
                "radius": 0.25,
                "risk": 0.7,
                "height": 1.7,
                "trajectory": [[0.0, x_cross, y_from], [round(duration, 3), x_cross, y_to]],
            }
        ],
        "start": [0.5, 0.0, 0.0],
        "goal": [17.5, 0.0],
        "behavior": {"text": "reach the end of the footpath", "rule": "none"},
        "centerline_y": 0.0,
    }


def bench_field(seed: int) -> dict:
    """Open grass field with benches flanking the lane; goal is a cone to find.

    Benches alternate sides of the direct line to the cone so the planner
    must curve around their inflated faces but never loses the (tall,
    hence visible at range) cone from view for long.
    """
    rng = _rng_for("bench-field", seed)
    shapes = []
    for i, bx in enumerate((2.5, 4.5, 6.5, 8.0, 9.5)):
        cx = bx + float(rng.uniform(0.0, 0.6))
        side = 1.0 if i % 2 == 0 else -1.0
        cy = side * (0.9 + float(rng.uniform(0.0, 0.8)))
        shapes.append(
            {"kind": "disc", "class": "bench", "cx": round(cx, 3), "cy": round(cy, 3), "r": 0.4, "height": 0.5}
        )
    cone_x = 10.0 + float(rng.uniform(0.0, 1.5))
    cone_y = float(rng.uniform(-1.0, 1.0))
    shapes.append(
        {"kind": "disc", "class": "cone", "cx": round(cone_x, 3), "cy": round(cone_y, 3), "r": 0.2, "height": 0.3}
    )
    return {
        "schema_version": SCHEMA_VERSION,
        "name": "bench-field",
        "seed": seed,
        "resolution": 0.1,
        "extent": [-2.0, -5.0, 15.0, 5.0],
        "labels": ["grass", "bench", "cone"],
        "ground": "grass",
        "shapes": shapes,
        "class_risk": {"grass": 0.3, "bench": 0.85, "cone": 0.0},
        "palette": _palette_for(["grass", "bench", "cone"]),
        "agents": [],
        "start": [0.5, 0.0, 0.0],
        "goal": "cone",
        "behavior": {"text": "walk to the traffic cone", "rule": "none"},
        "centerline_y": 0.0,
    }


def paper_indoor(seed: int) -> dict:
    """Indoor corridor with a paper sheet on the floor to route around."""
    rng = _rng_for("paper-indoor", seed)
    px = 4.0 + float(rng.uniform(-0.3, 0.3))
    py = float(rng.uniform(-0.15, 0.15))
    return {
        "schema_version": SCHEMA_VERSION,
        "name": "paper-indoor",
        "seed": seed,
        "resolution": 0.1,
        "extent": [-1.0, -2.5, 10.0, 2.5],
        "labels": ["floor", "wall", "paper"],
        "ground": "floor",
        "shapes": [
            {"kind": "rect", "class": "wall", "x": [-1.0, 10.0], "y": [1.5, 2.5], "height": 2.0},
            {"kind": "rect", "class": "wall", "x": [-1.0, 10.0], "y": [-2.5, -1.5], "height": 2.0},
            {
                "kind": "rect",
                "class": "paper",
                "x": [round(px - 0.25, 3), round(px + 0.25, 3)],
                "y": [round(py - 0.25, 3), round(py + 0.25, 3)],
            },
        ],
        "class_risk": {"floor": 0.05, "wall": 1.0, "paper": 0.35},
        "palette": _palette_for(["floor", "wall", "paper"]),
        "agents": [],
        "start": [0.5, 0.0, 0.0],
        "goal": [7.5, 0.0],
        "behavior": {"text": "avoid walking over the paper sheet", "rule": "avoid_class:paper"},
        "centerline_y": 0.0,
    }


_GENERATORS = {
    "footpath-right": footpath_right,
    "footpath-center": footpath_center,
    "human-crossing": human_crossing,
    "bench-field": bench_field,
    "paper-indoor": paper_indoor,
}


def generate_scene(task: str, seed: int) -> Scene:
    """Build one of the named tasks, deterministically per (task, seed)."""
    if task not in _GENERATORS:
        raise ValidationError(f"unknown task {task!r}; choose from {sorted(_GENERATORS)}")
    return Scene.from_obj(_GENERATORS[task](seed))
