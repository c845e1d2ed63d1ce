"""Overlay rendering, selector dispatch with rate limiting, and response
parsing.

Proposals are drawn over the RGB observation in their palette colors; the
selector provider answers with a two-line reply (Reason / Color) naming a
path color or none. Dispatches are rate limited on the simulated clock,
responses can arrive after a delay, and stale responses (older frame than
the active selection) are discarded so the active choice's frame id never
decreases.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import BehaviorSpec, CameraModel, Pose2D, RobotModality
from .costmap import camera_to_robot
from .occupancy import OccupancyGrid, bresenham_trace
from .planner import PlannedPath, ProposalSet, path_cost

#: response color word -> proposal label
COLOR_TO_LABEL = {"green": "center", "blue": "left", "yellow": "right", "red": "risky"}
LABEL_TO_COLOR = {v: k for k, v in COLOR_TO_LABEL.items()}

#: tie-break precedence for scoring and fallbacks
LABEL_PRECEDENCE = ("center", "left", "right", "risky")

_MIN_CAMERA_Z = 0.05  # m; segments are clipped to this depth before projecting


@dataclass(frozen=True)
class OverlayImage:
    """RGB observation with proposals drawn on top."""

    pixels: np.ndarray  # H x W x 3 uint8
    legend: tuple  # of (label, color, off_view)

    def digest(self) -> str:
        return hashlib.sha256(self.pixels.tobytes()).hexdigest()

    def to_ppm(self) -> bytes:
        h, w = self.pixels.shape[:2]
        return f"P6\n{w} {h}\n255\n".encode("ascii") + self.pixels.tobytes()


@dataclass(frozen=True)
class SelectionResult:
    choice: str  # proposal label or "none"
    reason: str
    frame_id: int


@dataclass(frozen=True)
class SelectionRequest:
    """What goes to the trajectory-selector provider, verbatim-loggable.

    proposals is a convenience handle for in-process providers; it is not
    part of the wire payload and is excluded from the digest.
    """

    overlay: OverlayImage
    modality_text: str
    behavior_text: str
    history: tuple  # of (digest, SelectionResult)
    frame_id: int
    proposals: ProposalSet | None = None

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.overlay.pixels.tobytes())
        h.update(self.modality_text.encode())
        h.update(self.behavior_text.encode())
        h.update(str(self.frame_id).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class SelectionResponse:
    text: str
    delay_s: float = 0.0


# ---------------------------------------------------------------------------
# Overlay rendering


def render_overlay(
    observation: np.ndarray,
    proposals: ProposalSet,
    camera: CameraModel,
    robot_pose: Pose2D,
) -> OverlayImage:
    """Project each proposal into the image and draw it 3 px wide.

    Waypoints are grid/world coordinates; robot_pose carries them into the
    robot body frame before the camera model applies. Proposals that leave
    no pixels on screen are flagged off-view in the legend.
    """
    img = np.array(observation, dtype=np.uint8, copy=True)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"observation must be HxWx3, got {img.shape}")
    h, w = img.shape[:2]
    R, t = camera_to_robot(camera)
    legend = []
    for p in proposals.proposals:
        pts_world = p.xy_array()
        # world -> robot frame
        ch, sh = math.cos(robot_pose.heading), math.sin(robot_pose.heading)
        dx = pts_world[:, 0] - robot_pose.x
        dy = pts_world[:, 1] - robot_pose.y
        xr = ch * dx + sh * dy
        yr = -sh * dx + ch * dy
        pts_robot = np.stack([xr, yr, np.zeros_like(xr)], axis=1)
        # robot -> camera frame
        cam = (pts_robot - t) @ R
        drawn = 0
        for a, b in zip(cam[:-1], cam[1:]):
            drawn += _draw_segment(img, a, b, camera, p.color)
        legend.append((p.label, p.color, drawn == 0))
    return OverlayImage(img, tuple(legend))


def _draw_segment(img: np.ndarray, a: np.ndarray, b: np.ndarray, camera: CameraModel, color) -> int:
    """Clip camera-frame segment to the near plane and image rect, then
    rasterize 3 px wide. Returns pixels painted."""
    za, zb = a[2], b[2]
    if za < _MIN_CAMERA_Z and zb < _MIN_CAMERA_Z:
        return 0
    a, b = a.copy(), b.copy()
    if za < _MIN_CAMERA_Z:
        s = (_MIN_CAMERA_Z - za) / (zb - za)
        a = a + s * (b - a)
    elif zb < _MIN_CAMERA_Z:
        s = (_MIN_CAMERA_Z - zb) / (za - zb)
        b = b + s * (a - b)
    u0 = camera.fx * a[0] / a[2] + camera.cx
    v0 = camera.fy * a[1] / a[2] + camera.cy
    u1 = camera.fx * b[0] / b[2] + camera.cx
    v1 = camera.fy * b[1] / b[2] + camera.cy
    h, w = img.shape[:2]
    clipped = _clip_to_rect(u0, v0, u1, v1, w - 1, h - 1)
    if clipped is None:
        return 0
    (u0, v0), (u1, v1) = clipped
    p0 = (int(round(u0)), int(round(v0)))
    p1 = (int(round(u1)), int(round(v1)))
    painted = 0
    for ux, vy in bresenham_trace(p0, p1):
        lo_v, hi_v = max(0, vy - 1), min(h, vy + 2)
        lo_u, hi_u = max(0, ux - 1), min(w, ux + 2)
        if lo_v < hi_v and lo_u < hi_u:
            img[lo_v:hi_v, lo_u:hi_u] = color
            painted += 1
    return painted


def _clip_to_rect(x0, y0, x1, y1, xmax, ymax):
    """Liang-Barsky clip of segment to [0,xmax]x[0,ymax]."""
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, x0 - 0.0),
        (dx, xmax - x0),
        (-dy, y0 - 0.0),
        (dy, ymax - y0),
    ):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    return (x0 + t0 * dx, y0 + t0 * dy), (x0 + t1 * dx, y0 + t1 * dy)


# ---------------------------------------------------------------------------
# Response parsing


def parse_selection(text, proposals: ProposalSet, frame_id: int) -> SelectionResult:
    """Total parser: any byte/str input yields a SelectionResult.

    Valid replies carry a line "Color: <word>" where <word> is one of the
    submitted proposals' colors or none (case-insensitive, quoting and
    punctuation tolerated). Anything else falls back to the highest-
    precedence submitted proposal with reason "parse-failure".
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    reason = ""
    color_word = None
    for line in str(text).splitlines():
        stripped = line.strip()
        low = stripped.lower()
        if low.startswith("reason:"):
            reason = stripped[len("reason:") :].strip()
        elif low.startswith("color:") or low.startswith("colour:"):
            tail = stripped.split(":", 1)[1]
            token = tail.strip().strip("`'\"*.,;:!()[]{} ").lower()
            color_word = token.split()[0].strip("`'\"*.,;:!") if token else ""
    if color_word == "none":
        return SelectionResult("none", reason, frame_id)
    if color_word in COLOR_TO_LABEL:
        label = COLOR_TO_LABEL[color_word]
        if proposals.get(label) is not None:
            return SelectionResult(label, reason, frame_id)
    return _fallback_result(proposals, frame_id, "parse-failure")


def _fallback_result(proposals: ProposalSet, frame_id: int, why: str) -> SelectionResult:
    for label in LABEL_PRECEDENCE:
        if proposals.get(label) is not None:
            return SelectionResult(label, why, frame_id)
    return SelectionResult("none", why, frame_id)


# ---------------------------------------------------------------------------
# Reasoner state machine


@dataclass
class _Pending:
    dispatch_time: float
    ready_time: float
    frame_id: int
    text: str
    proposals: ProposalSet
    digest: str


class Reasoner:
    """Rate-limited selector client over a simulated clock.

    Dispatches at most one request per min_interval and bounds in-flight
    requests. poll() delivers responses whose simulated delay has elapsed;
    stale frames never override newer selections, and requests pending
    past the timeout fall back (previous selection, else the cheapest
    submitted proposal).
    """

    def __init__(
        self,
        min_interval: float = 1.0,
        history_len: int = 4,
        timeout_s: float = 10.0,
        max_in_flight: int = 2,
    ):
        self.min_interval = min_interval
        self.timeout_s = timeout_s
        self.max_in_flight = max_in_flight
        self.history: deque = deque(maxlen=history_len)
        self.last_query_time = -math.inf
        self.active_selection: SelectionResult | None = None
        self.pending: list[_Pending] = []
        self.dispatches = 0
        self.parse_failures = 0
        self.stale_discards = 0
        self.timeouts = 0
        self.provider_failures = 0
        # (request digest, raw response text) of the most recent dispatch
        self.last_dispatch: tuple[str, str] | None = None

    def request_selection(
        self,
        overlay: OverlayImage,
        modality: RobotModality,
        behavior: BehaviorSpec,
        proposals: ProposalSet,
        provider,
        now: float,
        frame_id: int,
    ) -> SelectionResult | None:
        """Dispatch if the rate limiter and in-flight bound allow; returns
        the active selection after polling, or None while deferred."""
        if now - self.last_query_time < self.min_interval:
            return None
        if len(self.pending) >= self.max_in_flight:
            return None
        request = SelectionRequest(
            overlay, modality.description, behavior.text, tuple(self.history), frame_id, proposals
        )
        try:
            response = provider.select_path(request)
        except Exception:
            # failed dispatch still consumed this query slot; keep last choice
            self.last_query_time = now
            self.provider_failures += 1
            return self.poll(now)
        self.last_query_time = now
        self.dispatches += 1
        self.last_dispatch = (request.digest(), response.text)
        self.pending.append(
            _Pending(
                dispatch_time=now,
                ready_time=now + max(0.0, response.delay_s),
                frame_id=frame_id,
                text=response.text,
                proposals=proposals,
                digest=request.digest(),
            )
        )
        return self.poll(now)

    def poll(self, now: float) -> SelectionResult | None:
        """Apply ready responses and expire timed-out ones; returns the
        current active selection."""
        still: list[_Pending] = []
        for p in self.pending:
            if p.ready_time <= now:
                result = parse_selection(p.text, p.proposals, p.frame_id)
                if result.reason == "parse-failure":
                    self.parse_failures += 1
                if self.active_selection is None or result.frame_id >= self.active_selection.frame_id:
                    self.active_selection = result
                    self.history.append((p.digest, result))
                else:
                    self.stale_discards += 1
            elif now - p.dispatch_time >= self.timeout_s:
                self.timeouts += 1
                if self.active_selection is None:
                    self.active_selection = _cheapest_fallback(p.proposals, p.frame_id)
            else:
                still.append(p)
        self.pending = still
        return self.active_selection


def _cheapest_fallback(proposals: ProposalSet, frame_id: int) -> SelectionResult:
    best = None
    for label in LABEL_PRECEDENCE:
        p = proposals.get(label)
        if p is None:
            continue
        if best is None or p.accumulated_cost < best.accumulated_cost:
            best = p
    if best is None:
        return SelectionResult("none", "timeout-fallback", frame_id)
    return SelectionResult(best.label, "timeout-fallback", frame_id)


# ---------------------------------------------------------------------------
# Deterministic mock selector (ground-truth scoring)


def mock_select(
    proposals: ProposalSet,
    grid: OccupancyGrid,
    behavior: BehaviorSpec,
    scene_truth=None,
    lambda_b: float = 2.0,
    unknown_cost: float = 0.2,
) -> SelectionResult:
    """Score = path cost + lambda_b x behavior-violation length; pick the
    minimum with ties broken center > left > right > risky. scene_truth
    must expose violation_length(path, behavior) when a rule is set."""
    if not proposals.proposals:
        return SelectionResult("none", "no proposals", proposals.frame_id)
    best_label, best_score = None, math.inf
    for label in LABEL_PRECEDENCE:
        p = proposals.get(label)
        if p is None:
            continue
        score = path_cost(p, grid, unknown_cost)
        if scene_truth is not None and behavior.oracle_rule not in (None, "none"):
            score += lambda_b * float(scene_truth.violation_length(p, behavior))
        if score < best_score:
            best_label, best_score = label, score
    return SelectionResult(best_label, f"lowest combined cost {best_score:.4f}", proposals.frame_id)
