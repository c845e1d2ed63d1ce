"""Closed-loop episode: perceive, cache, map, plan, select, step.

Everything runs on a simulated clock (fixed ticks) so rate limiting,
selection latency, and cache rates are reproducible; (scene, config,
seed) determines the replay log bit for bit. The log is JSON lines:
a header, one record per tick with digests of every intermediate
artifact plus the verbatim provider exchanges, and a final metrics
record.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from semnav.cache import CacheConfig, NoveltyCache
from semnav.core import (
    SCHEMA_VERSION,
    CameraModel,
    CostTable,
    Observation,
    Pose2D,
    RobotModality,
    ValidationError,
    cost_table_to_obj,
)
from semnav.costmap import (
    GROUND_BAND_M,
    backproject_risk_arrays,
    build_pixel_costmap,
    camera_to_robot,
    pixel_rays,
    project_to_pixel,
    voxel_downsample_arrays,
)
from semnav.occupancy import FREE, UNKNOWN, OccupancyGrid
from semnav.planner import (
    TrrtConfig,
    generate_proposals,
    proposal_set_to_obj,
    select_frontier_subgoal,
)
from semnav.providers.base import ProviderError
from semnav.providers.mock import MockProvider, MockProviderConfig
from semnav.reasoning import Reasoner, render_overlay
from semnav.sim.robot import step_robot
from semnav.sim.render import render_observation
from semnav.sim.scene import Scene

_SEGMENT_BACKGROUNDS = ("background", "sky", "nothing")

DEFAULT_CAMERA = CameraModel(
    fx=48.0, fy=48.0, cx=48.0, cy=36.0, width=96, height=72, mount_height=0.45, pitch=0.4
)
DEFAULT_MODALITY = RobotModality(
    "small wheeled ground robot", footprint_radius=0.15, max_speed=0.75
)


@dataclass(frozen=True)
class EpisodeMetrics:
    goal_reached: bool
    dist_to_goal: float
    collisions: int
    behavior_violation_length: float
    scene_queries: int
    cache_hits: int
    sim_duration: float

    def __post_init__(self) -> None:
        if (
            self.dist_to_goal < 0
            or self.collisions < 0
            or self.behavior_violation_length < 0
            or self.scene_queries < 0
            or self.cache_hits < 0
            or self.sim_duration < 0
        ):
            raise ValidationError("episode metrics must be non-negative")

    def to_obj(self) -> dict:
        return {
            "goal_reached": self.goal_reached,
            "dist_to_goal": self.dist_to_goal,
            "collisions": self.collisions,
            "behavior_violation_length": self.behavior_violation_length,
            "scene_queries": self.scene_queries,
            "cache_hits": self.cache_hits,
            "sim_duration": self.sim_duration,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "EpisodeMetrics":
        return cls(
            bool(obj["goal_reached"]),
            float(obj["dist_to_goal"]),
            int(obj["collisions"]),
            float(obj["behavior_violation_length"]),
            int(obj["scene_queries"]),
            int(obj["cache_hits"]),
            float(obj["sim_duration"]),
        )


@dataclass(frozen=True)
class PipelineConfig:
    camera: CameraModel = DEFAULT_CAMERA
    modality: RobotModality = DEFAULT_MODALITY
    cache: CacheConfig = CacheConfig()
    trrt: TrrtConfig = TrrtConfig()
    epsilon: float = 0.1
    delta: float = 0.35
    stride: int = 4
    voxel_m: float = 0.1
    ground_band_m: float = 0.15
    grid_size_m: float = 20.0
    grid_resolution: float = 0.1
    plan_interval_s: float = 0.3
    selection_min_interval_s: float = 1.0
    selection_timeout_s: float = 10.0
    selection_history: int = 4
    selection_max_in_flight: int = 2
    selection_delay_s: float = 0.0
    tick_hz: float = 10.0
    max_duration_s: float = 90.0
    goal_threshold_m: float = 0.5
    gps_sigma_m: float = 0.0
    collision_stop: bool = False
    clearance_m: float = 0.1
    lookahead_m: float = 0.6
    max_range_m: float = 20.0

    def __post_init__(self) -> None:
        if self.tick_hz <= 0 or self.plan_interval_s <= 0:
            raise ValidationError("tick_hz and plan_interval_s must be > 0")
        if self.max_duration_s <= 0 or self.goal_threshold_m <= 0:
            raise ValidationError("max_duration_s and goal_threshold_m must be > 0")

    def to_obj(self) -> dict:
        out = dataclasses.asdict(self)
        out["schema_version"] = SCHEMA_VERSION
        return out

    @classmethod
    def from_obj(cls, obj: dict | None) -> "PipelineConfig":
        if not obj:
            return cls()
        obj = dict(obj)
        obj.pop("schema_version", None)
        kwargs: dict = {}
        if "camera" in obj:
            kwargs["camera"] = CameraModel(**obj.pop("camera"))
        if "modality" in obj:
            kwargs["modality"] = RobotModality(**obj.pop("modality"))
        if "cache" in obj:
            kwargs["cache"] = CacheConfig(**obj.pop("cache"))
        if "trrt" in obj:
            kwargs["trrt"] = TrrtConfig(**obj.pop("trrt"))
        known = {f.name for f in dataclasses.fields(cls)}
        for key, value in obj.items():
            if key not in known:
                raise ValidationError(f"unknown config key {key!r}")
            kwargs[key] = value
        return cls(**kwargs)


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    replay_text: str

    def poses(self) -> np.ndarray:
        out = []
        for line in self.replay_text.splitlines():
            rec = json.loads(line)
            if rec.get("type") == "tick":
                out.append(rec["pose"])
        return np.array(out, dtype=np.float64)


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _canonical(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, ensure_ascii=False)


def _derive_rng(seed: int, purpose: str) -> np.random.Generator:
    digest = hashlib.sha256(f"episode:{purpose}:{seed}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int.from_bytes(digest, "big"))))


def _segment_labels(table: CostTable) -> list[str]:
    labels = sorted(lab for lab in table.labels() if lab not in _SEGMENT_BACKGROUNDS)
    return labels + list(_SEGMENT_BACKGROUNDS)


#: Depth slack (m) past a column's nearest elevated return before deeper
#: samples in that column count as occluded; covers the depth spread of a
#: single vertical surface across image rows.
_OCCLUSION_SLACK_M = 0.2


def _occlusion_truncate(pts: np.ndarray, camera: CameraModel, band: float = GROUND_BAND_M) -> np.ndarray:
    """Drop points seen past the first elevated return in their image column.

    A sight line that crossed above a vertical surface observed whatever
    lies beyond it, but not the ground corridor in between; folding such
    points into the grid would ray-clear false free space through the
    surface's footprint. Deferring them keeps those cells unknown until
    a direct, ground-hugging view paints or clears them honestly.
    """
    if pts.shape[0] == 0:
        return pts
    uv, rng = project_to_pixel(camera, pts[:, :3])
    cols = np.clip(np.rint(uv[:, 0]).astype(np.int64), 0, int(camera.width) - 1)
    elevated = pts[:, 2] > band
    col_near = np.full(int(camera.width), np.inf)
    np.minimum.at(col_near, cols[elevated], rng[elevated])
    return pts[rng <= col_near[cols] + _OCCLUSION_SLACK_M]


def _points_to_world(pts_robot: np.ndarray, pose: Pose2D) -> np.ndarray:
    if pts_robot.size == 0:
        return pts_robot
    ch, sh = math.cos(pose.heading), math.sin(pose.heading)
    out = pts_robot.copy()
    out[:, 0] = pose.x + pts_robot[:, 0] * ch - pts_robot[:, 1] * sh
    out[:, 1] = pose.y + pts_robot[:, 0] * sh + pts_robot[:, 1] * ch
    return out


def _unproject_goal_pixel(
    u_norm: float, v_norm: float, obs: Observation, camera: CameraModel, pose: Pose2D
) -> Pose2D | None:
    u = min(camera.width - 1, max(0, int(u_norm * camera.width)))
    v = min(camera.height - 1, max(0, int(v_norm * camera.height)))
    d = float(obs.depth[v, u])
    if not np.isfinite(d) or d <= 0:
        return None
    ray = pixel_rays(camera, np.array([u]), np.array([v]))[0]
    rot, t_cam = camera_to_robot(camera)
    p_rob = d * (rot @ ray) + t_cam
    ch, sh = math.cos(pose.heading), math.sin(pose.heading)
    return Pose2D(
        pose.x + p_rob[0] * ch - p_rob[1] * sh,
        pose.y + p_rob[0] * sh + p_rob[1] * ch,
    )


def _clip_to_window(grid, goal: Pose2D) -> Pose2D:
    """Box-clamp a goal into the grid window with a small interior margin."""
    m = 2 * grid.resolution
    lo_x, lo_y = grid.origin.x, grid.origin.y
    hi_x = lo_x + grid.width * grid.resolution
    hi_y = lo_y + grid.height * grid.resolution
    return Pose2D(
        min(max(goal.x, lo_x + m), hi_x - m),
        min(max(goal.y, lo_y + m), hi_y - m),
        goal.heading,
    )


def _stamp_footprint(grid, pose: Pose2D, radius: float) -> None:
    """Mark unknown cells under the robot footprint as observed free.

    The camera cannot see the ground the robot stands on, yet occupancy is
    direct evidence of traversability; without this the subgoal walk would
    start on an unknown cell and idle forever. Cells already carrying risk
    are left untouched.
    """
    n = max(0, int(math.ceil(radius / grid.resolution)))
    cx, cy = grid.world_to_cell(pose.x, pose.y)
    for dy in range(-n, n + 1):
        for dx in range(-n, n + 1):
            ix, iy = cx + dx, cy + dy
            if not grid.in_bounds(ix, iy):
                continue
            px, py = grid.cell_center(ix, iy)
            if math.hypot(px - pose.x, py - pose.y) > radius + 1e-12:
                continue
            if grid.state[iy, ix] == UNKNOWN:
                grid.state[iy, ix] = FREE


def _static_contact(scene: Scene, pose: Pose2D, footprint: float, clearance: float) -> bool:
    res = scene.resolution
    x0, y0 = scene.origin
    r_lo = max(0, int(math.floor((pose.y - footprint - y0) / res)))
    r_hi = min(scene.height_cells, int(math.ceil((pose.y + footprint - y0) / res)) + 1)
    c_lo = max(0, int(math.floor((pose.x - footprint - x0) / res)))
    c_hi = min(scene.width_cells, int(math.ceil((pose.x + footprint - x0) / res)) + 1)
    if r_lo >= r_hi or c_lo >= c_hi:
        return False
    rows = y0 + (np.arange(r_lo, r_hi) + 0.5) * res
    cols = x0 + (np.arange(c_lo, c_hi) + 0.5) * res
    disc = (cols[None, :] - pose.x) ** 2 + (rows[:, None] - pose.y) ** 2 <= footprint**2
    patch = scene.height_grid[r_lo:r_hi, c_lo:c_hi]
    return bool(np.any(disc & (patch > clearance)))


def _agent_contact(scene: Scene, pose: Pose2D, t: float, footprint: float) -> bool:
    for ax, ay, radius in scene.agent_positions(t):
        if math.hypot(ax - pose.x, ay - pose.y) <= footprint + radius:
            return True
    return False


def run_episode(
    scene: Scene,
    config: PipelineConfig | None = None,
    seed: int = 0,
    provider=None,
    observer=None,
) -> EpisodeResult:
    """Run one closed-loop trial and return metrics plus the replay log.

    observer, when given, is called once per tick as observer(tick, grid,
    overlay) after mapping and planning; overlay is None on ticks that did
    not plan. Observers must treat both arguments as read-only: mutating
    the grid breaks replay fidelity.
    """
    config = config or PipelineConfig()
    if provider is None:
        fixture = tuple(sorted(scene.class_risks().items()))
        provider = MockProvider(
            MockProviderConfig(
                seed=0,
                epsilon=config.epsilon,
                selection_delay_s=config.selection_delay_s,
                risk_fixture=fixture,
            )
        )

    dt = 1.0 / config.tick_hz
    plan_every = max(1, int(round(config.plan_interval_s / dt)))
    max_ticks = int(round(config.max_duration_s / dt))
    footprint = config.modality.footprint_radius

    cache = NoveltyCache(config.cache)
    grid = OccupancyGrid.robot_window(
        scene.start.x, scene.start.y, config.grid_size_m, config.grid_resolution
    )
    reasoner = Reasoner(
        min_interval=config.selection_min_interval_s,
        history_len=config.selection_history,
        timeout_s=config.selection_timeout_s,
        max_in_flight=config.selection_max_in_flight,
    )
    # 1.5-cell margin absorbs painted-rim raster quantization (risk cells
    # anchor up to half a cell diagonal inside the true obstacle surface),
    # pure-pursuit corner cutting on tight turns, and keeps paths from
    # threading narrow unpainted arcs of partially observed obstacle rings
    trrt_base = replace(
        config.trrt,
        footprint_radius=footprint,
        safety_margin=max(config.trrt.safety_margin, 1.5 * config.grid_resolution),
    )

    goal_truth = scene.goal_truth()
    goal_est: Pose2D | None
    if isinstance(scene.goal, Pose2D):
        goal_est = scene.goal
        if config.gps_sigma_m > 0:
            noise = _derive_rng(seed, "gps").normal(0.0, config.gps_sigma_m, 2)
            goal_est = Pose2D(scene.goal.x + noise[0], scene.goal.y + noise[1])
    else:
        goal_est = None

    pose = scene.start
    table = CostTable(())
    embed_failures = 0
    collisions = 0
    in_contact = False
    violation = 0.0
    goal_reached = False
    proposal_store: dict[int, object] = {}
    lines: list[str] = []
    lines.append(
        _canonical(
            {
                "type": "header",
                "schema_version": SCHEMA_VERSION,
                "scene": scene.to_obj(),
                "scene_digest": scene.digest(),
                "config": config.to_obj(),
                "seed": seed,
            }
        )
    )

    sim_duration = 0.0
    for tick in range(max_ticks):
        t = tick * dt
        obs = render_observation(
            scene, pose, config.camera, sim_time=t, frame_id=tick, max_range=config.max_range_m
        )

        # perception: novelty gate, then either cached aggregate or a fresh query
        cache_kind = "miss"
        d_min = None
        fresh_obj = None
        try:
            emb = provider.embed_frame(obs)
        except ProviderError:
            emb = None
        if emb is None:
            embed_failures += 1
            try:
                table = provider.infer_scene_risks(obs, config.modality, table)
            except (ProviderError, ValidationError):
                pass
            cache_kind = "miss-no-insert"
        else:
            decision = cache.check_novelty(emb)
            d_min = decision.d_min if math.isfinite(decision.d_min) else None
            if decision.is_hit:
                cache_kind = "hit"
                table = decision.aggregated
            else:
                try:
                    fresh = provider.infer_scene_risks(obs, config.modality, table)
                except (ProviderError, ValidationError):
                    fresh = None
                if fresh is not None:
                    table = fresh
                    fresh_obj = cost_table_to_obj(fresh)
                    cache.insert_entry(emb, fresh)

        stack = provider.segment_classes(obs, _segment_labels(table))
        costmap = build_pixel_costmap(stack, table, config.delta)
        pts = backproject_risk_arrays(
            costmap, obs.depth, config.camera, config.stride, config.ground_band_m
        )
        pts = _occlusion_truncate(pts, config.camera, config.ground_band_m)
        pts_world = _points_to_world(pts, pose)
        vox = voxel_downsample_arrays(pts_world, config.voxel_m)
        grid.recenter(pose.x, pose.y)
        skipped = grid.update(vox, pose)
        _stamp_footprint(grid, pose, config.modality.footprint_radius)

        if isinstance(scene.goal, str):
            found = provider.detect_goal_point(obs, scene.goal)
            if found.found:
                est = _unproject_goal_pixel(found.u_norm, found.v_norm, obs, config.camera, pose)
                if est is not None:
                    goal_est = est

        nav_goal = goal_est or Pose2D(
            pose.x + 6.0 * math.cos(pose.heading), pose.y + 6.0 * math.sin(pose.heading)
        )

        plan_obj = None
        dispatch_obj = None
        overlay = None
        if tick % plan_every == 0:
            frontier = select_frontier_subgoal(grid, pose, nav_goal, trrt_base.cost_ceiling)
            if math.hypot(frontier.x - pose.x, frontier.y - pose.y) < trrt_base.step_size:
                # wedged or boxed in: aim at the goal itself and let the
                # planner's unknown-space pricing carry the tree out
                frontier = _clip_to_window(grid, nav_goal)
            cfg = replace(trrt_base, rng_seed=(seed * 1000003 + tick) % (2**31 - 1))
            proposals = generate_proposals(grid, pose, frontier, cfg, frame_id=tick)
            proposal_store[tick] = proposals
            plan_obj = proposal_set_to_obj(proposals)
            overlay = render_overlay(obs.rgb, proposals, config.camera, pose)
            if hasattr(provider, "set_selection_context"):
                provider.set_selection_context(grid, scene.behavior, scene)
            before = reasoner.dispatches
            reasoner.request_selection(
                overlay, config.modality, scene.behavior, proposals, provider, t, tick
            )
            if reasoner.dispatches > before and reasoner.last_dispatch is not None:
                digest, text = reasoner.last_dispatch
                dispatch_obj = {"request_digest": digest, "response_text": text}

        if observer is not None:
            observer(tick, grid, overlay)

        active = reasoner.poll(t)
        path = None
        if active is not None and active.choice != "none":
            ps = proposal_store.get(active.frame_id)
            if ps is not None:
                path = ps.get(active.choice)

        new_pose = step_robot(
            pose, path, dt, config.modality.max_speed, config.lookahead_m
        )
        violation += scene.violation_length(
            np.array([[pose.x, pose.y], [new_pose.x, new_pose.y]]), scene.behavior
        )
        contact = _static_contact(
            scene, new_pose, footprint, config.clearance_m
        ) or _agent_contact(scene, new_pose, t + dt, footprint)
        if contact and not in_contact:
            collisions += 1
        in_contact = contact
        pose = new_pose
        sim_duration = (tick + 1) * dt

        lines.append(
            _canonical(
                {
                    "type": "tick",
                    "tick": tick,
                    "t": t,
                    "pose": [pose.x, pose.y, pose.heading],
                    "cache": cache_kind,
                    "d_min": d_min,
                    "fresh_table": fresh_obj,
                    "embed_digest": _digest(emb.values.tobytes()) if emb is not None else None,
                    "stack_digest": _digest(stack.maps.tobytes()),
                    "points": int(vox.shape[0]),
                    "skipped_points": skipped,
                    "grid_digest": _digest(grid.state.tobytes() + grid.risk.tobytes()),
                    "goal_est": [goal_est.x, goal_est.y] if goal_est is not None else None,
                    "proposals": plan_obj,
                    "selection_dispatch": dispatch_obj,
                    "active": (
                        {"choice": active.choice, "frame_id": active.frame_id, "reason": active.reason}
                        if active is not None
                        else None
                    ),
                    "collisions": collisions,
                    "violation": violation,
                }
            )
        )

        if math.hypot(pose.x - goal_truth.x, pose.y - goal_truth.y) <= config.goal_threshold_m:
            goal_reached = True
            break
        if config.collision_stop and collisions > 0:
            break

    metrics = EpisodeMetrics(
        goal_reached=goal_reached,
        dist_to_goal=float(math.hypot(pose.x - goal_truth.x, pose.y - goal_truth.y)),
        collisions=collisions,
        behavior_violation_length=violation,
        scene_queries=cache.scene_queries + embed_failures,
        cache_hits=cache.cache_hits,
        sim_duration=sim_duration,
    )
    lines.append(_canonical({"type": "metrics", **metrics.to_obj()}))
    return EpisodeResult(metrics, "\n".join(lines) + "\n")


def compute_metrics(batch: list[EpisodeMetrics]) -> dict:
    """Aggregate trial metrics: rates in percent, means for distances."""
    if not batch:
        raise ValidationError("compute_metrics needs at least one trial")
    n = len(batch)
    return {
        "trials": n,
        "goal_reaching_pct": 100.0 * sum(m.goal_reached for m in batch) / n,
        "collision_pct": 100.0 * sum(m.collisions > 0 for m in batch) / n,
        "violation_pct": 100.0 * sum(m.behavior_violation_length > 1e-9 for m in batch) / n,
        "mean_dist_to_goal": float(np.mean([m.dist_to_goal for m in batch])),
        "mean_duration_s": float(np.mean([m.sim_duration for m in batch])),
        "mean_scene_queries": float(np.mean([m.scene_queries for m in batch])),
        "mean_cache_hits": float(np.mean([m.cache_hits for m in batch])),
    }


def metrics_from_replay(replay_text: str) -> EpisodeMetrics:
    """Pull the final metrics record back out of a replay log."""
    for line in reversed(replay_text.strip().splitlines()):
        rec = json.loads(line)
        if rec.get("type") == "metrics":
            return EpisodeMetrics.from_obj(rec)
    raise ValidationError("replay log has no metrics record")
