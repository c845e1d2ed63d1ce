"""Pixel costmap construction and risk point-cloud back-projection.

The costmap assigns each pixel the risk of its strongest non-background
class, zeroed where the winning probability is too weak. Costmap pixels
are then lifted into the robot frame along their depth rays; a voxel
filter keeps one representative (max risk) per occupied voxel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraModel, CostTable, ValidationError

#: Labels that normalize the softmax but never carry risk.
DEFAULT_BACKGROUND_LABELS = frozenset({"background", "sky", "nothing"})

#: Zero-risk back-projected points only count as observed ground within
#: this |z| band (m) in the robot frame; taller structure at zero risk is
#: treated as unclassified and dropped.
GROUND_BAND_M = 0.15


@dataclass(frozen=True)
class ClassProbabilityStack:
    """Per-class probability images, softmax-normalized across channels.

    classes orders the channels of maps (K, H, W). Background channels
    take part in normalization but are excluded from costmap argmax.
    """

    classes: tuple[str, ...]
    maps: np.ndarray
    background: frozenset = DEFAULT_BACKGROUND_LABELS

    def __post_init__(self) -> None:
        m = np.asarray(self.maps, dtype=np.float64)
        if m.ndim != 3 or m.shape[0] != len(self.classes):
            raise ValidationError(f"maps shape {m.shape} mismatches {len(self.classes)} classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValidationError("duplicate class channels")
        if m.size and (m.min() < -1e-12 or m.max() > 1.0 + 1e-12):
            raise ValidationError("probabilities outside [0, 1]")
        sums = m.sum(axis=0)
        if m.size and np.abs(sums - 1.0).max() > 1e-4:
            raise ValidationError("per-pixel probabilities do not sum to 1 within 1e-4")
        m.setflags(write=False)
        object.__setattr__(self, "maps", m)

    @property
    def height(self) -> int:
        return self.maps.shape[1]

    @property
    def width(self) -> int:
        return self.maps.shape[2]

    def non_background_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.classes) if c not in self.background]


@dataclass(frozen=True)
class PixelCostmap:
    """H×W risk-per-pixel image; zeros where no class cleared the filter."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"costmap must be 2-D, got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValidationError("costmap values outside [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RiskPoint:
    """One back-projected sample in the robot frame."""

    x: float
    y: float
    z: float
    risk: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.x) and np.isfinite(self.y) and np.isfinite(self.z)):
            raise ValidationError("risk point coordinates must be finite")
        if not 0.0 <= self.risk <= 1.0:
            raise ValidationError(f"risk {self.risk} outside [0, 1]")


def build_pixel_costmap(stack: ClassProbabilityStack, table: CostTable, delta: float) -> PixelCostmap:
    """Risk of the strongest non-background class, gated by probability.

    Per pixel the winning channel maximizes p_k * r_k over non-background
    channels; the pixel takes that channel's risk if its probability
    strictly exceeds delta, else 0. Ties go to the higher probability,
    then the lexicographically smaller label, so channel order never
    matters.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValidationError(f"delta {delta} outside [0, 1]")
    h, w = stack.height, stack.width
    nb = stack.non_background_indices()
    missing = sorted(
        stack.classes[i] for i in nb if stack.classes[i] not in set(table.labels())
    )
    if missing:
        raise ValidationError(f"classes missing from cost table: {missing}")
    if not nb:
        return PixelCostmap(np.zeros((h, w)))

    # sequential update in ascending-label order implements the tie-break
    order = sorted(nb, key=lambda i: stack.classes[i])
    best_score = np.full((h, w), -1.0)
    best_p = np.zeros((h, w))
    best_risk = np.zeros((h, w))
    for i in order:
        p = stack.maps[i]
        r = table.risk_of(stack.classes[i])
        score = p * r
        better = (score > best_score) | ((score == best_score) & (p > best_p))
        best_score = np.where(better, score, best_score)
        best_risk = np.where(better, r, best_risk)
        best_p = np.where(better, p, best_p)
    values = np.where(best_p > delta, best_risk, 0.0)
    return PixelCostmap(values)


# ---------------------------------------------------------------------------
# Camera geometry
#
# Camera frame: x right, y down, z forward. Robot frame: x forward, y left,
# z up. Depth images carry Euclidean range along the pixel ray.

#: Axis permutation mapping camera axes into the robot frame (level camera).
_R0 = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


def _pitch_matrix(pitch: float) -> np.ndarray:
    # rotation about robot +y (left); positive pitch tilts the view down
    c, s = np.cos(pitch), np.sin(pitch)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def camera_to_robot(camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation taking camera-frame points to the robot frame."""
    R = _pitch_matrix(camera.pitch) @ _R0
    t = np.array([0.0, 0.0, camera.mount_height])
    return R, t


def pixel_rays(camera: CameraModel, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Unit direction vectors in the camera frame for pixel coords (N,) -> (N, 3)."""
    x = (np.asarray(us, dtype=np.float64) - camera.cx) / camera.fx
    y = (np.asarray(vs, dtype=np.float64) - camera.cy) / camera.fy
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def project_to_pixel(camera: CameraModel, points_robot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward projection: robot-frame points (N,3) -> pixel coords and ranges."""
    R, t = camera_to_robot(camera)
    p = (np.asarray(points_robot, dtype=np.float64) - t) @ R  # R^T applied row-wise
    z = p[:, 2]
    u = camera.fx * p[:, 0] / z + camera.cx
    v = camera.fy * p[:, 1] / z + camera.cy
    return np.stack([u, v], axis=-1), np.linalg.norm(p, axis=-1)


def backproject_risk_arrays(
    costmap: PixelCostmap,
    depth: np.ndarray,
    camera: CameraModel,
    stride: int = 4,
    ground_band: float = GROUND_BAND_M,
) -> np.ndarray:
    """Strided back-projection to an (N, 4) array of [x, y, z, risk].

    Every sampled pixel with finite depth and positive cost is lifted;
    zero-cost pixels are lifted only when they land on observed ground
    (|z| <= ground_band in the robot frame) so free space still clears.
    """
    d = np.asarray(depth, dtype=np.float64)
    if d.shape != costmap.values.shape:
        raise ValidationError(f"depth shape {d.shape} != costmap shape {costmap.values.shape}")
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    vs, us = np.meshgrid(
        np.arange(0, costmap.height, stride),
        np.arange(0, costmap.width, stride),
        indexing="ij",
    )
    us, vs = us.ravel(), vs.ravel()
    dd = d[vs, us]
    risk = costmap.values[vs, us]
    finite = np.isfinite(dd) & (dd > 0)
    us, vs, dd, risk = us[finite], vs[finite], dd[finite], risk[finite]
    if us.size == 0:
        return np.zeros((0, 4))
    rays = pixel_rays(camera, us, vs)
    R, t = camera_to_robot(camera)
    pts = (dd[:, None] * rays) @ R.T + t
    keep = (risk > 0) | (np.abs(pts[:, 2]) <= ground_band)
    pts, risk = pts[keep], risk[keep]
    return np.concatenate([pts, risk[:, None]], axis=1)


def backproject_risk_points(
    costmap: PixelCostmap,
    depth: np.ndarray,
    camera: CameraModel,
    stride: int = 4,
    ground_band: float = GROUND_BAND_M,
) -> list[RiskPoint]:
    arr = backproject_risk_arrays(costmap, depth, camera, stride, ground_band)
    return [RiskPoint(*row) for row in arr]


def voxel_downsample_arrays(points: np.ndarray, voxel: float) -> np.ndarray:
    """Keep the max-risk point per occupied voxel (ties: earliest input)."""
    if voxel <= 0:
        raise ValidationError("voxel size must be positive")
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 4))
    keys = np.floor(pts[:, :3] / voxel).astype(np.int64)
    best: dict[tuple, int] = {}
    for i in range(pts.shape[0]):
        k = (keys[i, 0], keys[i, 1], keys[i, 2])
        j = best.get(k)
        if j is None or pts[i, 3] > pts[j, 3]:
            best[k] = i
    idx = sorted(best.values())
    return pts[idx]


def voxel_downsample(points: list[RiskPoint], voxel: float) -> list[RiskPoint]:
    arr = np.array([[p.x, p.y, p.z, p.risk] for p in points]).reshape(-1, 4)
    return [RiskPoint(*row) for row in voxel_downsample_arrays(arr, voxel)]
