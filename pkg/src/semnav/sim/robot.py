"""Unicycle kinematics with a pure-pursuit path follower.

The follower chases the point one lookahead ahead of the robot's
arc-length projection onto the active path, slowing to stop exactly at
the final waypoint. No path (selection "none") means zero velocity.
"""

from __future__ import annotations

import math

import numpy as np

from semnav.core import Pose2D, ValidationError

DEFAULT_LOOKAHEAD_M = 0.6
DEFAULT_MAX_OMEGA = 2.5

#: Target bearing beyond which the robot turns in place instead of arcing.
_TURN_IN_PLACE_RAD = 1.2


def _path_xy(path) -> np.ndarray | None:
    if path is None:
        return None
    if hasattr(path, "xy_array"):
        pts = path.xy_array()
    else:
        pts = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    return pts if len(pts) >= 2 else None


def _project_arclength(pts: np.ndarray, x: float, y: float) -> tuple[float, float]:
    """(arc length of closest point, total length) along the polyline."""
    p = np.array([x, y])
    seg = pts[1:] - pts[:-1]
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    best_d2, best_s = math.inf, 0.0
    for i in range(len(seg)):
        if seg_len[i] == 0.0:
            continue
        t = float(np.dot(p - pts[i], seg[i]) / (seg_len[i] ** 2))
        t = min(1.0, max(0.0, t))
        q = pts[i] + t * seg[i]
        d2 = float(np.sum((p - q) ** 2))
        if d2 < best_d2:
            best_d2 = d2
            best_s = cum[i] + t * seg_len[i]
    return best_s, float(cum[-1])


def _point_at(pts: np.ndarray, s: float) -> np.ndarray:
    seg = pts[1:] - pts[:-1]
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = min(max(s, 0.0), float(cum[-1]))
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(max(i, 0), len(seg) - 1)
    if seg_len[i] == 0.0:
        return pts[i]
    t = (s - cum[i]) / seg_len[i]
    return pts[i] + t * seg[i]


def step_robot(
    pose: Pose2D,
    path,
    dt: float,
    max_speed: float = 0.75,
    lookahead: float = DEFAULT_LOOKAHEAD_M,
    max_omega: float = DEFAULT_MAX_OMEGA,
) -> Pose2D:
    """One kinematic step toward the path's lookahead point."""
    if dt <= 0:
        raise ValidationError("dt must be > 0")
    pts = _path_xy(path)
    if pts is None:
        return pose

    s_here, total = _project_arclength(pts, pose.x, pose.y)
    remaining = total - s_here
    if remaining <= 1e-9:
        return pose
    target = _point_at(pts, s_here + lookahead)

    # target in the body frame
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    ox, oy = target[0] - pose.x, target[1] - pose.y
    tx = c * ox + s * oy
    ty = -s * ox + c * oy
    dist = math.hypot(tx, ty)
    if dist <= 1e-9:
        return pose
    alpha = math.atan2(ty, tx)

    if abs(alpha) > _TURN_IN_PLACE_RAD:
        v = 0.0
        omega = math.copysign(max_omega, alpha)
    else:
        v = min(max_speed, remaining / dt)
        omega = v * (2.0 * math.sin(alpha) / dist)
        if abs(omega) > max_omega:
            omega = math.copysign(max_omega, omega)

    if abs(omega) < 1e-12:
        nx = pose.x + v * math.cos(pose.heading) * dt
        ny = pose.y + v * math.sin(pose.heading) * dt
        nh = pose.heading
    else:
        r = v / omega
        nh = pose.heading + omega * dt
        nx = pose.x + r * (math.sin(nh) - math.sin(pose.heading))
        ny = pose.y - r * (math.cos(nh) - math.cos(pose.heading))
    return Pose2D(nx, ny, nh)
