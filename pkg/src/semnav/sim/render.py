"""Per-pixel analytic raycast renderer over the scene description.

Every pixel ray is intersected exactly against the scene's solids
(vertical cylinders and axis-aligned boxes, dynamic agents included)
and against the ground plane, nearest hit first. Ground hits are closed
form: a ray with downward component dz meets the plane at Euclidean
range mount_height / -dz, which is mount_height / sin(angle below
horizon). The same pixel rays drive back-projection, so rendered depth
and class agree with the lifted 3D points to machine precision. Pixels
that hit nothing are sky: a background class with an infinite depth
sentinel.
"""

from __future__ import annotations

import math

import numpy as np

from semnav.core import CameraModel, Observation, Pose2D
from semnav.costmap import camera_to_robot, pixel_rays
from semnav.sim.scene import BACKGROUND_PALETTE, Scene

#: Obstacles farther than this are not rendered (ground still is).
DEFAULT_MAX_RANGE_M = 20.0

_EPS = 1e-12


def render_observation(
    scene: Scene,
    robot_pose: Pose2D,
    camera: CameraModel,
    sim_time: float = 0.0,
    frame_id: int = 0,
    max_range: float = DEFAULT_MAX_RANGE_M,
) -> Observation:
    class_grid, _ = scene.stamped_grids(sim_time)
    labels = list(scene.labels)
    for extra in ("background", "sky"):
        if extra not in labels:
            labels.append(extra)
    bg_idx = labels.index("background")
    sky_idx = labels.index("sky")

    h, w = camera.height, camera.width
    vs, us = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rays_cam = pixel_rays(camera, us.ravel(), vs.ravel())
    rot, t_cam = camera_to_robot(camera)
    d_robot = rays_cam @ rot.T
    dx = d_robot[:, 0].reshape(h, w)
    dy = d_robot[:, 1].reshape(h, w)
    dz = d_robot[:, 2].reshape(h, w)
    z0 = float(t_cam[2])

    ch, sh = math.cos(robot_pose.heading), math.sin(robot_pose.heading)
    dwx = dx * ch - dy * sh
    dwy = dx * sh + dy * ch
    cam_x, cam_y = robot_pose.x, robot_pose.y

    depth = np.full((h, w), np.inf)
    class_map = np.full((h, w), sky_idx, dtype=np.int32)
    unassigned = np.ones((h, w), dtype=bool)

    solids = scene.solids(sim_time)
    if solids:
        _cast_solids(
            solids, depth, class_map, unassigned, (cam_x, cam_y, z0), dwx, dwy, dz, max_range
        )

    # exact per-pixel ground intersections for whatever is still open
    ground = unassigned & (dz < 0)
    t_ground = np.where(ground, z0 / np.maximum(-dz, 1e-300), np.inf)
    t_safe = np.where(ground, t_ground, 0.0)
    gx = cam_x + dwx * t_safe
    gy = cam_y + dwy * t_safe
    res = scene.resolution
    x0, y0 = scene.origin
    cols = np.floor((gx - x0) / res).astype(np.int64)
    rows = np.floor((gy - y0) / res).astype(np.int64)
    inside = (
        ground
        & (rows >= 0)
        & (rows < scene.height_cells)
        & (cols >= 0)
        & (cols < scene.width_cells)
    )
    safe_rows = np.clip(rows, 0, scene.height_cells - 1)
    safe_cols = np.clip(cols, 0, scene.width_cells - 1)
    ground_class = class_grid[safe_rows, safe_cols]
    class_map[ground] = np.where(inside, ground_class, bg_idx)[ground]
    depth[ground] = t_ground[ground]

    palette = np.zeros((len(labels), 3), dtype=np.uint8)
    merged = dict(BACKGROUND_PALETTE)
    merged.update(scene.palette)
    for j, lab in enumerate(labels):
        palette[j] = merged.get(lab, (128, 128, 128))
    rgb = palette[class_map]

    return Observation(rgb, depth, class_map, tuple(labels), frame_id)


def _slab_times(lo: float, hi: float, origin: float, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel entry/exit ray parameters for one axis slab [lo, hi]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - origin) / d
        tb = (hi - origin) / d
    near = np.fmin(ta, tb)
    far = np.fmax(ta, tb)
    flat = np.abs(d) <= _EPS
    if flat.any():
        inside = lo <= origin <= hi
        near = np.where(flat, -np.inf if inside else np.inf, near)
        far = np.where(flat, np.inf if inside else -np.inf, far)
    return near, far


def _cylinder_times(
    cx: float, cy: float, r: float, ox: float, oy: float, dwx: np.ndarray, dwy: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel entry/exit parameters for an infinite vertical cylinder."""
    bx, by = ox - cx, oy - cy
    a = dwx * dwx + dwy * dwy
    b = 2.0 * (bx * dwx + by * dwy)
    c = bx * bx + by * by - r * r
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0.0) & (a > _EPS)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    denom = np.where(a > _EPS, 2.0 * a, 1.0)
    near = np.where(ok, (-b - sq) / denom, np.inf)
    far = np.where(ok, (-b + sq) / denom, -np.inf)
    vert = a <= _EPS
    if vert.any():
        near = np.where(vert, -np.inf if c <= 0.0 else np.inf, near)
        far = np.where(vert, np.inf if c <= 0.0 else -np.inf, far)
    return near, far


def _cast_solids(
    solids: list[tuple],
    depth: np.ndarray,
    class_map: np.ndarray,
    unassigned: np.ndarray,
    origin: tuple[float, float, float],
    dwx: np.ndarray,
    dwy: np.ndarray,
    dz: np.ndarray,
    max_range: float,
) -> None:
    """Composite the nearest solid hit per pixel into depth and class."""
    ox, oy, z0 = origin
    best_t = np.full(depth.shape, np.inf)
    best_j = np.zeros(depth.shape, dtype=np.int32)
    for solid in solids:
        if solid[0] == "disc":
            _, cx, cy, r, hgt, j = solid
            near_h, far_h = _cylinder_times(cx, cy, r, ox, oy, dwx, dwy)
        else:
            _, sx0, sx1, sy0, sy1, hgt, j = solid
            nx, fx = _slab_times(sx0, sx1, ox, dwx)
            ny, fy = _slab_times(sy0, sy1, oy, dwy)
            near_h, far_h = np.maximum(nx, ny), np.minimum(fx, fy)
        near_z, far_z = _slab_times(0.0, hgt, z0, dz)
        entry = np.maximum(near_h, near_z)
        leave = np.minimum(far_h, far_z)
        t_hit = np.where((entry <= leave) & (entry > _EPS), entry, np.inf)
        closer = t_hit < best_t
        best_t = np.where(closer, t_hit, best_t)
        best_j = np.where(closer, j, best_j)
    hit = unassigned & (best_t <= max_range)
    depth[hit] = best_t[hit]
    class_map[hit] = best_j[hit]
    unassigned &= ~hit
