"""Cost-aware sampling planner over the occupancy grid.

Transition-based RRT: extensions pay a Boltzmann acceptance test on cell
cost increases, with an adaptive temperature that heats after repeated
uphill rejections and cools toward its initial value on uphill accepts.
On top of the raw planner: frontier subgoal redirection along the
start->goal ray, path refinement (shortcut / prune / resample), and
four-way proposal generation (center, displaced left/right lanes, and a
relaxed-ceiling risky path).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import SCHEMA_VERSION, Pose2D, ValidationError
from .occupancy import FREE, RISK, UNKNOWN, OccupancyGrid, bresenham_trace

PROPOSAL_PALETTE = {
    "center": (0, 255, 0),
    "left": (0, 0, 255),
    "right": (255, 255, 0),
    "risky": (255, 0, 0),
}


@dataclass(frozen=True)
class TrrtConfig:
    step_size: float = 0.3
    max_iterations: int = 5000
    goal_bias: float = 0.1
    temperature: float = 0.02  # initial T
    temp_increase_rate: float = 2.0
    nfail_max: int = 10
    cost_scale: float = 1.0  # K_B
    cost_ceiling: float = 0.5
    rng_seed: int = 0
    unknown_cost: float = 0.2
    footprint_radius: float = 0.0
    safety_margin: float = 0.0  # extra inflation to absorb follower corner-cutting
    resample_spacing: float = 0.25
    offset_b: float = 0.6
    offset_min: float = 0.05
    risky_ceiling_bump: float = 0.3
    risky_length_factor: float = 0.7
    dedupe_tol: float = 0.05
    adaptive: bool = True

    def __post_init__(self) -> None:
        if self.step_size <= 0 or self.max_iterations < 1:
            raise ValidationError("step_size and max_iterations must be positive")
        if not 0.0 <= self.goal_bias < 1.0:
            raise ValidationError("goal_bias must lie in [0, 1)")
        if self.temperature <= 0 or self.cost_scale <= 0:
            raise ValidationError("temperature and cost_scale must be positive")
        if self.temp_increase_rate <= 1.0:
            raise ValidationError("temp_increase_rate must exceed 1")
        if self.nfail_max < 1:
            raise ValidationError("nfail_max must be >= 1")
        if not 0.0 <= self.cost_ceiling <= 1.0:
            raise ValidationError("cost_ceiling must lie in [0, 1]")
        if self.safety_margin < 0:
            raise ValidationError("safety_margin must be non-negative")

    @property
    def risky_ceiling(self) -> float:
        return min(1.0, self.cost_ceiling + self.risky_ceiling_bump)


@dataclass(frozen=True)
class PlannedPath:
    waypoints: tuple[Pose2D, ...]
    total_length: float
    accumulated_cost: float
    label: str
    color: tuple[int, int, int]

    def xy_array(self) -> np.ndarray:
        return np.array([[w.x, w.y] for w in self.waypoints], dtype=np.float64)


@dataclass(frozen=True)
class ProposalSet:
    proposals: tuple[PlannedPath, ...]
    frame_id: int
    diagnostic: str = ""

    def __post_init__(self) -> None:
        labels = [p.label for p in self.proposals]
        if len(set(labels)) != len(labels):
            raise ValidationError("duplicate proposal labels")
        colors = [p.color for p in self.proposals]
        if len(set(colors)) != len(colors):
            raise ValidationError("proposal colors must be distinct")

    def get(self, label: str) -> PlannedPath | None:
        for p in self.proposals:
            if p.label == label:
                return p
        return None

    def labels(self) -> list[str]:
        return [p.label for p in self.proposals]


class TransitionTester:
    """Stateful uphill-acceptance test with the adaptive temperature schedule.

    Rejections above the cost ceiling are categorical and sit outside the
    schedule; only probabilistic uphill rejections count toward nfail.
    """

    def __init__(self, config: TrrtConfig, rng: np.random.Generator, ceiling: float | None = None):
        self.config = config
        self.rng = rng
        self.ceiling = config.cost_ceiling if ceiling is None else ceiling
        self.temperature = config.temperature
        self.nfail = 0

    def test(self, cost_from: float, cost_to: float) -> bool:
        cfg = self.config
        if cost_to > self.ceiling:
            return False
        if cost_to <= cost_from:
            return True
        p = math.exp(-(cost_to - cost_from) / (cfg.cost_scale * self.temperature))
        if self.rng.random() < p:
            if cfg.adaptive:
                self.temperature = max(cfg.temperature, self.temperature / cfg.temp_increase_rate)
                self.nfail = 0
            return True
        if cfg.adaptive:
            self.nfail += 1
            if self.nfail >= cfg.nfail_max:
                self.temperature *= cfg.temp_increase_rate
                self.nfail = 0
        return False


def transition_test(
    cost_from: float, cost_to: float, config: TrrtConfig, rng: np.random.Generator
) -> bool:
    """One-shot form of the transition test (fresh temperature state)."""
    return TransitionTester(config, rng).test(cost_from, cost_to)


# ---------------------------------------------------------------------------
# Cost fields


class _CostField:
    """Dense per-cell traversal cost snapshot of a grid, with footprint
    inflation for feasibility checks. Out-of-window cells read as unknown."""

    def __init__(self, grid: OccupancyGrid, config: TrrtConfig):
        self.grid = grid
        self.unknown_cost = config.unknown_cost
        self.ox, self.oy = grid.origin.x, grid.origin.y
        self.res = grid.resolution
        self.w, self.h = grid.width, grid.height
        cost = np.where(
            grid.state == RISK,
            grid.risk,
            np.where(grid.state == FREE, 0.0, config.unknown_cost),
        )
        self.cost = cost
        inflate_r = config.footprint_radius + config.safety_margin
        r_cells = int(math.floor(inflate_r / grid.resolution + 1e-9))
        if r_cells <= 0:
            self.inflated = cost
        else:
            infl = cost.copy()
            rr = inflate_r / grid.resolution
            for dy in range(-r_cells, r_cells + 1):
                for dx in range(-r_cells, r_cells + 1):
                    if dx * dx + dy * dy > rr * rr or (dx == 0 and dy == 0):
                        continue
                    shifted = np.full_like(cost, config.unknown_cost)
                    sy = slice(max(0, dy), min(self.h, self.h + dy))
                    ty = slice(max(0, -dy), min(self.h, self.h - dy))
                    sx = slice(max(0, dx), min(self.w, self.w + dx))
                    tx = slice(max(0, -dx), min(self.w, self.w - dx))
                    shifted[ty, tx] = cost[sy, sx]
                    np.maximum(infl, shifted, out=infl)
            self.inflated = infl

    def _cells(self, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ix = np.floor((xs - self.ox) / self.res).astype(np.int64)
        iy = np.floor((ys - self.oy) / self.res).astype(np.int64)
        inb = (ix >= 0) & (ix < self.w) & (iy >= 0) & (iy < self.h)
        return ix, iy, inb

    def cost_at(self, x: float, y: float) -> float:
        ix, iy, inb = self._cells(np.array([x]), np.array([y]))
        if not inb[0]:
            return self.unknown_cost
        return float(self.cost[iy[0], ix[0]])

    def _visit(self, ix: int, iy: int) -> float:
        if 0 <= ix < self.w and 0 <= iy < self.h:
            return float(self.inflated[iy, ix])
        return self.unknown_cost

    def max_inflated_along(self, p0: np.ndarray, p1: np.ndarray) -> float:
        """Max footprint-inflated cost over every cell segment p0->p1 crosses.

        Exact grid traversal rather than point sampling: a graze that clips
        only a corner of an infeasible cell still counts, no matter how
        short the chord. Crossing exactly through a cell corner steps
        diagonally (the side cells are touched with zero chord length).
        """
        x0 = (float(p0[0]) - self.ox) / self.res
        y0 = (float(p0[1]) - self.oy) / self.res
        x1 = (float(p1[0]) - self.ox) / self.res
        y1 = (float(p1[1]) - self.oy) / self.res
        ix, iy = int(math.floor(x0)), int(math.floor(y0))
        jx, jy = int(math.floor(x1)), int(math.floor(y1))
        out = self._visit(ix, iy)
        dx, dy = x1 - x0, y1 - y0
        sx = 1 if dx > 0 else -1
        sy = 1 if dy > 0 else -1
        tdx = abs(1.0 / dx) if dx != 0.0 else math.inf
        tdy = abs(1.0 / dy) if dy != 0.0 else math.inf
        if dx > 0:
            tmx = (math.floor(x0) + 1.0 - x0) * tdx
        elif dx < 0:
            tmx = (x0 - math.floor(x0)) * tdx
        else:
            tmx = math.inf
        if dy > 0:
            tmy = (math.floor(y0) + 1.0 - y0) * tdy
        elif dy < 0:
            tmy = (y0 - math.floor(y0)) * tdy
        else:
            tmy = math.inf
        # step cap guards against float drift near the endpoint cell
        for _ in range(abs(jx - ix) + abs(jy - iy) + 4):
            if ix == jx and iy == jy:
                return out
            if tmx < tmy:
                ix += sx
                tmx += tdx
            elif tmy < tmx:
                iy += sy
                tmy += tdy
            else:
                ix += sx
                iy += sy
                tmx += tdx
                tmy += tdy
            out = max(out, self._visit(ix, iy))
        return max(out, self._visit(jx, jy))

    def point_feasible(self, x: float, y: float, ceiling: float) -> bool:
        ix, iy, inb = self._cells(np.array([x]), np.array([y]))
        if not inb[0]:
            return self.unknown_cost <= ceiling
        return float(self.inflated[iy[0], ix[0]]) <= ceiling

    def exempt_disc(self, x: float, y: float, radius: float, ceiling: float) -> None:
        """Clamp inflated cost to the ceiling inside a disc around (x, y).

        The robot's own footprint is proven traversable by occupancy, so a
        pose the inflation would wall in (parked against an obstacle face)
        must stay escapable; without this every plan dies at the start
        check and the robot freezes for good.
        """
        if self.inflated is self.cost:
            self.inflated = self.cost.copy()
        n = int(math.ceil(radius / self.res)) + 1
        ix0 = int(math.floor((x - self.ox) / self.res))
        iy0 = int(math.floor((y - self.oy) / self.res))
        r2 = radius * radius
        for dy in range(-n, n + 1):
            for dx in range(-n, n + 1):
                ix, iy = ix0 + dx, iy0 + dy
                if not (0 <= ix < self.w and 0 <= iy < self.h):
                    continue
                cx = self.ox + (ix + 0.5) * self.res
                cy = self.oy + (iy + 0.5) * self.res
                if (cx - x) ** 2 + (cy - y) ** 2 <= r2 and self.inflated[iy, ix] > ceiling:
                    self.inflated[iy, ix] = ceiling

    def segment_feasible(self, p0: np.ndarray, p1: np.ndarray, ceiling: float) -> bool:
        return self.max_inflated_along(p0, p1) <= ceiling


def path_cost(
    waypoints, grid: OccupancyGrid, unknown_cost: float = 0.2
) -> float:
    """Line integral of cell risk along the polyline (risk x metres per cell).

    Unknown and out-of-window cells charge unknown_cost per metre.
    """
    pts = _as_xy(waypoints)
    if pts.shape[0] < 2:
        return 0.0
    cost = np.where(
        grid.state == RISK, grid.risk, np.where(grid.state == FREE, 0.0, unknown_cost)
    )
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        for ix, iy, seg_len in _segment_cell_lengths(grid, a, b):
            if 0 <= ix < grid.width and 0 <= iy < grid.height:
                total += cost[iy, ix] * seg_len
            else:
                total += unknown_cost * seg_len
    return total


def _as_xy(waypoints) -> np.ndarray:
    if isinstance(waypoints, PlannedPath):
        return waypoints.xy_array()
    if isinstance(waypoints, np.ndarray):
        return waypoints.reshape(-1, 2)
    return np.array([[w.x, w.y] for w in waypoints], dtype=np.float64)


def _segment_cell_lengths(grid: OccupancyGrid, a: np.ndarray, b: np.ndarray):
    """Exact split of segment a->b into (ix, iy, length) per crossed cell."""
    d = b - a
    seg = float(np.hypot(d[0], d[1]))
    if seg == 0.0:
        return
    ts = [0.0, 1.0]
    for axis, origin in ((0, grid.origin.x), (1, grid.origin.y)):
        if d[axis] == 0.0:
            continue
        lo = (min(a[axis], b[axis]) - origin) / grid.resolution
        hi = (max(a[axis], b[axis]) - origin) / grid.resolution
        for k in range(int(math.floor(lo)) + 1, int(math.ceil(hi))):
            t = (origin + k * grid.resolution - a[axis]) / d[axis]
            if 0.0 < t < 1.0:
                ts.append(float(t))
    ts = sorted(set(ts))
    for t0, t1 in zip(ts[:-1], ts[1:]):
        tm = 0.5 * (t0 + t1)
        x = a[0] + tm * d[0]
        y = a[1] + tm * d[1]
        ix = int(math.floor((x - grid.origin.x) / grid.resolution))
        iy = int(math.floor((y - grid.origin.y) / grid.resolution))
        yield ix, iy, (t1 - t0) * seg


def polyline_length(pts: np.ndarray) -> float:
    if pts.shape[0] < 2:
        return 0.0
    return float(np.hypot(*(pts[1:] - pts[:-1]).T).sum())


# ---------------------------------------------------------------------------
# TRRT core


def trrt_plan(
    grid: OccupancyGrid,
    start: Pose2D,
    goal: Pose2D,
    config: TrrtConfig,
    ceiling: float | None = None,
    rng: np.random.Generator | None = None,
    label: str = "center",
) -> PlannedPath | None:
    """Plan start->goal over the grid; None when no feasible tree reaches
    the goal within max_iterations or an endpoint violates the ceiling."""
    ceiling = config.cost_ceiling if ceiling is None else ceiling
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.rng_seed)))
    field = _CostField(grid, config)
    if not field.point_feasible(start.x, start.y, ceiling):
        # wedged start: free the robot's own footprint, which occupancy
        # proves traversable, so it can leave (never enter) the pocket
        field.exempt_disc(start.x, start.y, config.footprint_radius + grid.resolution, ceiling)
    if not field.point_feasible(start.x, start.y, ceiling):
        return None
    if not field.point_feasible(goal.x, goal.y, ceiling):
        return None

    goal_xy = np.array([goal.x, goal.y])
    start_xy = np.array([start.x, start.y])
    if polyline_length(np.stack([start_xy, goal_xy])) <= 1e-9:
        return _finish_path([start_xy], grid, config, label)

    cap = config.max_iterations + 2
    nodes = np.zeros((cap, 2))
    costs = np.zeros(cap)
    parents = np.full(cap, -1, dtype=np.int64)
    nodes[0] = start_xy
    costs[0] = field.cost_at(start.x, start.y)
    n = 1
    tester = TransitionTester(config, rng, ceiling=ceiling)

    lo = np.array([field.ox, field.oy])
    hi = np.array([field.ox + field.w * field.res, field.oy + field.h * field.res])

    goal_idx = -1
    for _ in range(config.max_iterations):
        if rng.random() < config.goal_bias:
            sample = goal_xy
        else:
            sample = lo + rng.random(2) * (hi - lo)
        d2 = ((nodes[:n] - sample) ** 2).sum(axis=1)
        ni = int(np.argmin(d2))
        near = nodes[ni]
        delta = sample - near
        dist = float(np.hypot(delta[0], delta[1]))
        if dist < 1e-12:
            continue
        step = min(config.step_size, dist)
        new = near + delta / dist * step
        if not field.segment_feasible(near, new, ceiling):
            continue
        c_from = costs[ni]
        c_to = field.cost_at(new[0], new[1])
        if not tester.test(c_from, c_to):
            continue
        nodes[n] = new
        costs[n] = c_to
        parents[n] = ni
        n += 1
        # goal connection: within one step and directly reachable
        gd = float(np.hypot(*(goal_xy - new)))
        if gd <= config.step_size and field.segment_feasible(new, goal_xy, ceiling):
            g_cost = field.cost_at(goal.x, goal.y)
            if tester.test(c_to, g_cost):
                nodes[n] = goal_xy
                costs[n] = g_cost
                parents[n] = n - 1
                goal_idx = n
                n += 1
                break
    if goal_idx < 0:
        return None

    chain = []
    i = goal_idx
    while i >= 0:
        chain.append(nodes[i])
        i = parents[i]
    chain.reverse()
    return _finish_path(chain, grid, config, label)


def _finish_path(xy_chain, grid: OccupancyGrid, config: TrrtConfig, label: str) -> PlannedPath:
    pts = np.array(xy_chain, dtype=np.float64).reshape(-1, 2)
    return PlannedPath(
        waypoints=_poses_from_xy(pts),
        total_length=polyline_length(pts),
        accumulated_cost=path_cost(pts, grid, config.unknown_cost),
        label=label,
        color=PROPOSAL_PALETTE[label],
    )


def _poses_from_xy(pts: np.ndarray) -> tuple[Pose2D, ...]:
    poses = []
    for i, (x, y) in enumerate(pts):
        if i + 1 < len(pts):
            dx, dy = pts[i + 1] - pts[i]
            h = math.atan2(dy, dx) if (dx or dy) else 0.0
        elif poses:
            h = poses[-1].heading
        else:
            h = 0.0
        poses.append(Pose2D(float(x), float(y), h))
    return tuple(poses)


# ---------------------------------------------------------------------------
# Frontier subgoal


def select_frontier_subgoal(
    grid: OccupancyGrid,
    start: Pose2D,
    goal: Pose2D,
    ceiling: float = 0.5,
    gap_tolerance_m: float = 1.0,
) -> Pose2D:
    """Last traversable cell along the start->goal ray before the frontier.

    A cell counts as traversable once observed with risk at or below
    ``ceiling``, so worlds where every surface carries some nonzero risk
    still produce forward subgoals. Observed above-ceiling cells are
    skipped rather than terminal, because the sampling planner routes
    around known blockers. Unknown runs up to ``gap_tolerance_m`` are also
    crossed: short pockets are occlusion shadows behind obstacles, not
    unexplored frontier, and the planner prices unknown cells so it can
    traverse them. The walk stops at the first longer unknown run. If the
    goal cell itself is reached traversable, the goal pose is returned
    verbatim; if nothing traversable precedes the frontier, the start pose
    is returned.
    """
    s_cell = grid.world_to_cell(start.x, start.y)
    g_cell = grid.world_to_cell(goal.x, goal.y)
    heading = math.atan2(goal.y - start.y, goal.x - start.x) if g_cell != s_cell else start.heading
    gap_cells = max(0, int(round(gap_tolerance_m / grid.resolution)))
    last_ok: tuple[int, int] | None = None
    unknown_run = 0
    for cell in bresenham_trace(s_cell, g_cell):
        ix, iy = cell
        if not grid.in_bounds(ix, iy):
            break
        s = int(grid.state[iy, ix])
        r = float(grid.risk[iy, ix])
        if s == UNKNOWN:
            unknown_run += 1
            if unknown_run > gap_cells:
                break
            continue
        unknown_run = 0
        if s == RISK and r > ceiling:
            continue
        last_ok = cell
        if cell == g_cell:
            return goal
    if last_ok is None:
        return start
    cx, cy = grid.cell_center(*last_ok)
    return Pose2D(cx, cy, heading)


# ---------------------------------------------------------------------------
# Refinement


def refine_path(
    path: PlannedPath,
    grid: OccupancyGrid,
    config: TrrtConfig,
    ceiling: float | None = None,
    rng: np.random.Generator | None = None,
    shortcut: bool = True,
) -> PlannedPath:
    """Shortcut, prune collinear waypoints, resample to uniform spacing.

    Shortcutting is a deterministic greedy pass: from each anchor it
    splices in the farthest straight segment that stays under the ceiling
    and does not raise the accumulated cost by more than 1%, sweeping
    until no splice helps. Refinement never lengthens a path and never
    breaks ceiling feasibility. The rng parameter is kept for call-site
    stability; refinement itself is deterministic.
    """
    ceiling = config.cost_ceiling if ceiling is None else ceiling
    pts = path.xy_array()
    if pts.shape[0] >= 3 and shortcut:
        field = _CostField(grid, config)
        cost = path_cost(pts, grid, config.unknown_cost)
        changed = True
        while changed and pts.shape[0] >= 3:
            changed = False
            i = 0
            while i < pts.shape[0] - 2:
                for j in range(pts.shape[0] - 1, i + 1, -1):
                    if not field.segment_feasible(pts[i], pts[j], ceiling):
                        continue
                    cand = np.concatenate([pts[: i + 1], pts[j:]], axis=0)
                    cand_cost = path_cost(cand, grid, config.unknown_cost)
                    if cand_cost <= cost * 1.01 + 1e-12:
                        pts = cand
                        cost = cand_cost
                        changed = True
                        break
                i += 1
    pts = _prune_collinear(pts)
    pts = _resample_uniform(pts, config.resample_spacing)
    return PlannedPath(
        waypoints=_poses_from_xy(pts),
        total_length=polyline_length(pts),
        accumulated_cost=path_cost(pts, grid, config.unknown_cost),
        label=path.label,
        color=path.color,
    )


def _prune_collinear(pts: np.ndarray) -> np.ndarray:
    if pts.shape[0] < 3:
        return pts
    keep = [0]
    for i in range(1, pts.shape[0] - 1):
        a, b, c = pts[keep[-1]], pts[i], pts[i + 1]
        cross = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if cross >= 1e-9:
            keep.append(i)
    keep.append(pts.shape[0] - 1)
    return pts[keep]


def _resample_uniform(pts: np.ndarray, spacing: float) -> np.ndarray:
    if pts.shape[0] < 2:
        return pts
    seg = np.hypot(*(pts[1:] - pts[:-1]).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= spacing:
        return np.stack([pts[0], pts[-1]])
    n_steps = int(math.floor(total / spacing))
    targets = [k * spacing for k in range(n_steps + 1)]
    if total - targets[-1] > 1e-9:
        targets.append(total)
    out = []
    for s in targets:
        k = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        t = (s - cum[k]) / seg[k] if seg[k] > 0 else 0.0
        out.append(pts[k] + t * (pts[k + 1] - pts[k]))
    out[0], out[-1] = pts[0], pts[-1]
    return np.array(out)


# ---------------------------------------------------------------------------
# Proposal generation


def _pullback_feasible(field: _CostField, start: Pose2D, goal: Pose2D, ceiling: float) -> Pose2D:
    """Nearest point to goal on the start->goal segment whose footprint fits.

    The subgoal walk clears single cells only, so a subgoal can hug an
    above-ceiling obstacle too closely for the inflated footprint and every
    plan would then die at the endpoint check. Pulling the target back
    keeps partial progress available. Returns the goal unchanged when it is
    already feasible or when no point on the segment is.
    """
    if field.point_feasible(goal.x, goal.y, ceiling):
        return goal
    dx, dy = goal.x - start.x, goal.y - start.y
    d = math.hypot(dx, dy)
    if d < 1e-12:
        return goal
    step = 0.5 * field.res
    for i in range(1, int(d / step) + 1):
        t = 1.0 - (i * step) / d
        x, y = start.x + t * dx, start.y + t * dy
        if field.point_feasible(x, y, ceiling):
            return Pose2D(x, y, goal.heading)
    return goal


def generate_proposals(
    grid: OccupancyGrid,
    start: Pose2D,
    goal: Pose2D,
    config: TrrtConfig,
    frame_id: int = 0,
) -> ProposalSet:
    """Center + displaced left/right lanes + gated relaxed-ceiling risky.

    Left/right copy the refined center displaced by +/- offset_b along the
    local normal from the second waypoint on (the first stays on the robot
    pose), shrinking each waypoint's offset by halves until feasible (or to
    zero). They are pruned and resampled without shortcutting so the
    lateral offset survives refinement. Risky is planned every cycle but
    published only when center is absent or excessively long. Degenerate
    near-duplicates are dropped, earlier labels winning.
    """
    ss = np.random.SeedSequence(config.rng_seed)
    r_center, r_risky, r_refine = [
        np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(3)
    ]
    field = _CostField(grid, config)
    if not field.point_feasible(start.x, start.y, config.cost_ceiling):
        field.exempt_disc(
            start.x, start.y, config.footprint_radius + grid.resolution, config.cost_ceiling
        )
    proposals: list[PlannedPath] = []
    diagnostic = ""

    goal_base = _pullback_feasible(field, start, goal, config.cost_ceiling)
    center_raw = trrt_plan(grid, start, goal_base, config, rng=r_center, label="center")
    center = None
    if center_raw is not None:
        center = refine_path(center_raw, grid, config, rng=r_refine)
        proposals.append(center)
        for label, sign in (("left", 1.0), ("right", -1.0)):
            lane = _displace_lane(center, sign, field, config, label)
            if lane is not None:
                lane = refine_path(lane, grid, config, rng=r_refine, shortcut=False)
                proposals.append(lane)

    goal_risky = _pullback_feasible(field, start, goal, config.risky_ceiling)
    risky_raw = trrt_plan(
        grid, start, goal_risky, config, ceiling=config.risky_ceiling, rng=r_risky, label="risky"
    )
    if risky_raw is not None:
        risky = refine_path(risky_raw, grid, config, ceiling=config.risky_ceiling, rng=r_refine)
        publish = center is None or (
            risky.total_length < config.risky_length_factor * center.total_length
        )
        if publish:
            proposals.append(risky)

    kept: list[PlannedPath] = []
    for p in proposals:
        if any(_paths_coincide(p, q, config.dedupe_tol) for q in kept):
            continue
        kept.append(p)
    if not kept:
        diagnostic = "no feasible proposals at either ceiling"
    return ProposalSet(tuple(kept), frame_id, diagnostic)


def _displace_lane(
    center: PlannedPath, sign: float, field: _CostField, config: TrrtConfig, label: str
) -> PlannedPath | None:
    pts = center.xy_array()
    if pts.shape[0] < 2:
        return None
    # local normal = left-rotated unit tangent (central differences inside)
    tangents = np.zeros_like(pts)
    tangents[0] = pts[1] - pts[0]
    tangents[-1] = pts[-1] - pts[-2]
    if pts.shape[0] > 2:
        tangents[1:-1] = pts[2:] - pts[:-2]
    norms = np.hypot(tangents[:, 0], tangents[:, 1])
    norms[norms == 0] = 1.0
    tangents /= norms[:, None]
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1) * sign

    out = [pts[0]]
    for i in range(1, pts.shape[0]):
        off = config.offset_b
        placed = None
        # chord back to the previous placed point must clear too: two
        # individually feasible vertices can still bracket an obstacle
        while off >= config.offset_min:
            cand = pts[i] + off * normals[i]
            if field.point_feasible(
                cand[0], cand[1], config.cost_ceiling
            ) and field.segment_feasible(out[-1], cand, config.cost_ceiling):
                placed = cand
                break
            off *= 0.5
        if placed is None:
            if not field.segment_feasible(out[-1], pts[i], config.cost_ceiling):
                return None
            placed = pts[i]
        out.append(placed)
    out = np.array(out)
    return PlannedPath(
        waypoints=_poses_from_xy(out),
        total_length=polyline_length(out),
        accumulated_cost=path_cost(out, field.grid, config.unknown_cost),
        label=label,
        color=PROPOSAL_PALETTE[label],
    )


def _paths_coincide(a: PlannedPath, b: PlannedPath, tol: float) -> bool:
    pa, pb = a.xy_array(), b.xy_array()
    if abs(polyline_length(pa) - polyline_length(pb)) > tol:
        return False
    sa = _resample_uniform(pa, max(polyline_length(pa) / 20.0, 1e-6))
    sb = _resample_uniform(pb, max(polyline_length(pb) / 20.0, 1e-6))
    n = min(sa.shape[0], sb.shape[0])
    if n == 0:
        return True
    d = np.hypot(*(sa[:n] - sb[:n]).T)
    return bool(d.max() <= tol)


# ---------------------------------------------------------------------------
# Serialization


def proposal_set_to_obj(ps: ProposalSet) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "frame_id": ps.frame_id,
        "diagnostic": ps.diagnostic,
        "proposals": [
            {
                "label": p.label,
                "color": list(p.color),
                "total_length": p.total_length,
                "accumulated_cost": p.accumulated_cost,
                "waypoints": [[w.x, w.y, w.heading] for w in p.waypoints],
            }
            for p in ps.proposals
        ],
    }


def proposal_set_to_text(ps: ProposalSet) -> str:
    return json.dumps(proposal_set_to_obj(ps), sort_keys=True, indent=2) + "\n"


def proposal_set_from_obj(obj: dict) -> ProposalSet:
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {obj.get('schema_version')!r}")
    props = []
    for p in obj["proposals"]:
        props.append(
            PlannedPath(
                waypoints=tuple(Pose2D(*w) for w in p["waypoints"]),
                total_length=float(p["total_length"]),
                accumulated_cost=float(p["accumulated_cost"]),
                label=p["label"],
                color=tuple(p["color"]),
            )
        )
    return ProposalSet(tuple(props), int(obj["frame_id"]), obj.get("diagnostic", ""))


def proposal_set_from_text(text: str) -> ProposalSet:
    return proposal_set_from_obj(json.loads(text))
