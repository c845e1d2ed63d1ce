"""Tri-state 2D occupancy grid with max-risk collapse and ray clearing.

Cells start unknown. Observed points stamp risk (max over all
observations, so stale hazards persist); rays from the sensor to each
point clear the strictly-between cells to free, but never downgrade a
risk cell. The grid is a robot-centric scrolling window: recentering
shifts contents by whole cells and fills the new border with unknown.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import SCHEMA_VERSION, Pose2D, ValidationError

UNKNOWN, FREE, RISK = 0, 1, 2

_STATE_NAMES = {UNKNOWN: "unknown", FREE: "free", RISK: "risk"}

# PGM encoding: risk quantized to 1..100, free and unknown sentinels
_PGM_FREE = 254
_PGM_UNKNOWN = 205


def bresenham_trace(a: tuple[int, int], b: tuple[int, int]) -> list[tuple[int, int]]:
    """8-connected integer line from a to b inclusive.

    Endpoints are canonicalized (lexicographic) before walking so the
    reversed trace visits exactly the same cells: trace(a,b) is the
    reverse of trace(b,a), cell for cell.
    """
    if a <= b:
        return _bresenham_walk(a, b)
    return list(reversed(_bresenham_walk(b, a)))


def _bresenham_walk(a: tuple[int, int], b: tuple[int, int]) -> list[tuple[int, int]]:
    x0, y0 = a
    x1, y1 = b
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    cells = [(x0, y0)]
    while (x0, y0) != (x1, y1):
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
        cells.append((x0, y0))
    return cells


@dataclass
class OccupancyGrid:
    """Axis-aligned grid; origin is the world position of cell (0, 0)'s corner."""

    resolution: float
    width: int
    height: int
    origin: Pose2D
    state: np.ndarray = None  # (height, width) uint8
    risk: np.ndarray = None  # (height, width) float64

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValidationError("resolution must be positive")
        if self.width < 1 or self.height < 1:
            raise ValidationError("grid must be at least 1x1")
        if self.state is None:
            self.state = np.full((self.height, self.width), UNKNOWN, dtype=np.uint8)
        if self.risk is None:
            self.risk = np.zeros((self.height, self.width), dtype=np.float64)
        if self.state.shape != (self.height, self.width) or self.risk.shape != self.state.shape:
            raise ValidationError("state/risk array shape mismatch")
        self.skipped_points = 0

    @classmethod
    def robot_window(
        cls, center_x: float, center_y: float, size_m: float = 20.0, resolution: float = 0.1
    ) -> "OccupancyGrid":
        n = int(round(size_m / resolution))
        ox = _snap(center_x - size_m / 2.0, resolution)
        oy = _snap(center_y - size_m / 2.0, resolution)
        return cls(resolution, n, n, Pose2D(ox, oy, 0.0))

    # -- indexing ------------------------------------------------------------

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        ix = int(np.floor((x - self.origin.x) / self.resolution))
        iy = int(np.floor((y - self.origin.y) / self.resolution))
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin.x + (ix + 0.5) * self.resolution,
            self.origin.y + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def state_at(self, x: float, y: float) -> tuple[int, float]:
        """(state, risk) at a world position; out-of-window reads as unknown."""
        ix, iy = self.world_to_cell(x, y)
        if not self.in_bounds(ix, iy):
            return UNKNOWN, 0.0
        return int(self.state[iy, ix]), float(self.risk[iy, ix])

    # -- update --------------------------------------------------------------

    def update(self, points: np.ndarray, sensor_origin: Pose2D) -> int:
        """Fold an (N, 4) [x, y, z, risk] batch into the grid; returns #skipped.

        Phase 1 stamps every in-bounds point cell with the max risk seen
        (risk > 0 -> risk state, else free unless already risk). Phase 2
        clears cells strictly between the sensor cell and each point cell
        to free, except cells already carrying risk. Both phases are
        order-insensitive, so permuting the batch cannot change the result.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 4)
        o_ix, o_iy = self.world_to_cell(sensor_origin.x, sensor_origin.y)
        if not self.in_bounds(o_ix, o_iy):
            raise ValidationError("sensor origin outside grid window")
        if pts.shape[0] == 0:
            return 0

        ix = np.floor((pts[:, 0] - self.origin.x) / self.resolution).astype(np.int64)
        iy = np.floor((pts[:, 1] - self.origin.y) / self.resolution).astype(np.int64)
        ok = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        skipped = int((~ok).sum())
        self.skipped_points += skipped
        ix, iy, risk = ix[ok], iy[ok], pts[ok, 3]

        # phase 1: max-collapse point cells
        acc = np.full((self.height, self.width), -1.0)
        np.maximum.at(acc, (iy, ix), risk)
        touched = acc >= 0.0
        new_risk = np.maximum(self.risk, np.where(touched, acc, 0.0))
        self.risk = np.where(touched, new_risk, self.risk)
        self.state = np.where(
            touched, np.where(self.risk > 0.0, RISK, FREE), self.state
        ).astype(np.uint8)

        # phase 2: ray clearing (vectorized Bresenham, canonical direction)
        interior = self._trace_interiors(o_ix, o_iy, ix, iy)
        clear = interior & (self.state != RISK)
        self.state[clear] = FREE
        return skipped

    def _trace_interiors(self, o_ix: int, o_iy: int, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
        """Boolean mask of cells strictly between the origin cell and each
        endpoint cell along canonicalized Bresenham walks."""
        mask = np.zeros((self.height, self.width), dtype=bool)
        n = ix.shape[0]
        if n == 0:
            return mask
        ox = np.full(n, o_ix, dtype=np.int64)
        oy = np.full(n, o_iy, dtype=np.int64)
        # canonical direction: walk from the lexicographically smaller cell
        swap = (ix < ox) | ((ix == ox) & (iy < oy))
        x0 = np.where(swap, ix, ox)
        y0 = np.where(swap, iy, oy)
        x1 = np.where(swap, ox, ix)
        y1 = np.where(swap, oy, iy)

        dx = np.abs(x1 - x0)
        dy = -np.abs(y1 - y0)
        sx = np.where(x0 < x1, 1, -1)
        sy = np.where(y0 < y1, 1, -1)
        err = dx + dy
        x, y = x0.copy(), y0.copy()
        active = (x != x1) | (y != y1)
        while active.any():
            e2 = 2 * err
            stepx = active & (e2 >= dy)
            err = np.where(stepx, err + dy, err)
            x = np.where(stepx, x + sx, x)
            stepy = active & (e2 <= dx)
            err = np.where(stepy, err + dx, err)
            y = np.where(stepy, y + sy, y)
            active = (x != x1) | (y != y1)
            # strictly-between: skip each walk's own endpoints (another
            # ray's interior may still cross them, which is correct)
            sel = ((x != x1) | (y != y1)) & ((x != x0) | (y != y0))
            mask[y[sel], x[sel]] = True
        return mask

    # -- scrolling -----------------------------------------------------------

    def recenter(self, center_x: float, center_y: float) -> None:
        """Shift the window so its center is nearest (center_x, center_y),
        preserving overlapping cells and filling fresh cells with unknown."""
        size_x = self.width * self.resolution
        size_y = self.height * self.resolution
        new_ox = _snap(center_x - size_x / 2.0, self.resolution)
        new_oy = _snap(center_y - size_y / 2.0, self.resolution)
        kx = int(round((new_ox - self.origin.x) / self.resolution))
        ky = int(round((new_oy - self.origin.y) / self.resolution))
        if kx == 0 and ky == 0:
            return
        state = np.full_like(self.state, UNKNOWN)
        risk = np.zeros_like(self.risk)
        src_x = slice(max(0, kx), min(self.width, self.width + kx))
        dst_x = slice(max(0, -kx), min(self.width, self.width - kx))
        src_y = slice(max(0, ky), min(self.height, self.height + ky))
        dst_y = slice(max(0, -ky), min(self.height, self.height - ky))
        if src_x.start < src_x.stop and src_y.start < src_y.stop:
            state[dst_y, dst_x] = self.state[src_y, src_x]
            risk[dst_y, dst_x] = self.risk[src_y, src_x]
        self.state, self.risk = state, risk
        self.origin = Pose2D(
            self.origin.x + kx * self.resolution,
            self.origin.y + ky * self.resolution,
            0.0,
        )

    # -- snapshot ------------------------------------------------------------

    def to_pgm(self) -> tuple[bytes, str]:
        """(raster bytes, metadata JSON) for debugging and golden files.

        Risk quantizes to 1..100; free and unknown use distinct sentinels.
        """
        img = np.full((self.height, self.width), _PGM_UNKNOWN, dtype=np.uint8)
        img[self.state == FREE] = _PGM_FREE
        r = self.state == RISK
        img[r] = np.maximum(1, np.round(self.risk[r] * 100).astype(np.uint8))
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        meta = {
            "schema_version": SCHEMA_VERSION,
            "resolution": self.resolution,
            "width": self.width,
            "height": self.height,
            "origin": {"x": self.origin.x, "y": self.origin.y, "heading": self.origin.heading},
            "encoding": {"free": _PGM_FREE, "unknown": _PGM_UNKNOWN, "risk": "1..100 = risk*100"},
        }
        return header + img.tobytes(), json.dumps(meta, sort_keys=True, indent=2) + "\n"

    def save_pgm(self, path_prefix: str) -> None:
        raster, meta = self.to_pgm()
        with open(path_prefix + ".pgm", "wb") as f:
            f.write(raster)
        with open(path_prefix + ".json", "w", encoding="utf-8") as f:
            f.write(meta)

    def counts(self) -> dict:
        return {
            _STATE_NAMES[s]: int((self.state == s).sum()) for s in (UNKNOWN, FREE, RISK)
        }


def _snap(v: float, resolution: float) -> float:
    return round(v / resolution) * resolution
