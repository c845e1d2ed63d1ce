import numpy as np
import pytest

from semnav.core import Pose2D, ValidationError
from semnav.occupancy import FREE, RISK, UNKNOWN, OccupancyGrid, bresenham_trace


def textbook_bresenham(a, b):
    """Independent reference: octant-reduction formulation."""
    x0, y0 = a
    x1, y1 = b
    steep = abs(y1 - y0) > abs(x1 - x0)
    if steep:
        x0, y0, x1, y1 = y0, x0, y1, x1
    rev = x0 > x1
    if rev:
        x0, y0, x1, y1 = x1, y1, x0, y0
    dx, dy = x1 - x0, abs(y1 - y0)
    err = dx // 2
    ystep = 1 if y0 < y1 else -1
    y = y0
    cells = []
    for x in range(x0, x1 + 1):
        cells.append((y, x) if steep else (x, y))
        err -= dy
        if err < 0:
            y += ystep
            err += dx
    if rev:
        cells.reverse()
    return cells


def grid_10m():
    return OccupancyGrid(0.1, 100, 100, Pose2D(0.0, 0.0, 0.0))


def pts(*rows):
    return np.array(rows, dtype=float).reshape(-1, 4)


def test_bresenham_degenerate_and_axis():
    assert bresenham_trace((0, 0), (0, 0)) == [(0, 0)]
    assert bresenham_trace((0, 0), (3, 0)) == [(0, 0), (1, 0), (2, 0), (3, 0)]
    assert bresenham_trace((0, 0), (0, 3)) == [(0, 0), (0, 1), (0, 2), (0, 3)]


def test_bresenham_matches_textbook_forward():
    got = bresenham_trace((0, 0), (5, 3))
    assert got[0] == (0, 0) and got[-1] == (5, 3)
    assert got == textbook_bresenham((0, 0), (5, 3))


def test_bresenham_reversal_symmetry():
    rng = np.random.default_rng(17)
    for _ in range(200):
        a = tuple(rng.integers(-20, 20, size=2).tolist())
        b = tuple(rng.integers(-20, 20, size=2).tolist())
        fwd = bresenham_trace(a, b)
        rev = bresenham_trace(b, a)
        assert fwd == list(reversed(rev))
        assert set(fwd) == set(rev)


def test_bresenham_eight_connected_and_endpoints():
    rng = np.random.default_rng(23)
    for _ in range(100):
        a = tuple(rng.integers(-15, 15, size=2).tolist())
        b = tuple(rng.integers(-15, 15, size=2).tolist())
        cells = bresenham_trace(a, b)
        assert cells[0] == a and cells[-1] == b
        assert len(set(cells)) == len(cells)
        for (x0, y0), (x1, y1) in zip(cells, cells[1:]):
            assert max(abs(x1 - x0), abs(y1 - y0)) == 1


def test_update_max_collapse_same_cell():
    g = grid_10m()
    g.update(pts([5.05, 5.05, 0, 0.2], [5.07, 5.02, 0, 0.7]), Pose2D(5.0, 5.0))
    s, r = g.state_at(5.05, 5.05)
    assert s == RISK and r == 0.7


def test_update_zero_risk_ray_clears_to_free():
    g = grid_10m()
    g.update(pts([5.0 + 1.05, 5.05, 0, 0.0]), Pose2D(5.05, 5.05))
    # endpoint becomes free, strictly-between cells become free
    s_end, _ = g.state_at(6.05, 5.05)
    assert s_end == FREE
    for k in range(1, 10):
        s, _ = g.state_at(5.05 + 0.1 * k, 5.05)
        assert s == FREE
    # origin cell untouched
    assert g.state_at(5.05, 5.05)[0] == UNKNOWN
    # off-ray cells untouched
    assert g.state_at(5.05, 5.35)[0] == UNKNOWN


def test_update_ray_cells_match_trace_oracle():
    g = grid_10m()
    origin = Pose2D(0.05, 0.05)
    g.update(pts([0.65, 0.25, 0, 0.0]), origin)  # cells (0,0) -> (6,2)
    expected_interior = bresenham_trace((0, 0), (6, 2))[1:-1]
    for ix in range(12):
        for iy in range(12):
            s = g.state[iy, ix]
            if (ix, iy) in expected_interior:
                assert s == FREE
            elif (ix, iy) == (6, 2):
                assert s == FREE  # endpoint free via phase 1 (zero risk)
            else:
                assert s == UNKNOWN


def test_update_never_downgrades_risk():
    g = grid_10m()
    g.update(pts([5.55, 5.05, 0, 0.8]), Pose2D(5.05, 5.05))
    assert g.state_at(5.55, 5.05)[0] == RISK
    # ray passing straight through the risk cell
    g.update(pts([6.55, 5.05, 0, 0.0]), Pose2D(5.05, 5.05))
    s, r = g.state_at(5.55, 5.05)
    assert s == RISK and r == 0.8
    # even a same-batch zero point cannot downgrade
    g.update(pts([5.55, 5.05, 0, 0.0]), Pose2D(5.05, 5.05))
    s, r = g.state_at(5.55, 5.05)
    assert s == RISK and r == 0.8


def test_update_same_batch_risk_protected_from_clearing():
    g = grid_10m()
    # far point's ray passes through near point's cell
    g.update(
        pts([5.55, 5.05, 0, 0.6], [6.55, 5.05, 0, 0.0]),
        Pose2D(5.05, 5.05),
    )
    assert g.state_at(5.55, 5.05)[0] == RISK


def test_update_out_of_bounds_skipped_with_counter():
    g = grid_10m()
    skipped = g.update(pts([50.0, 50.0, 0, 0.5], [5.55, 5.05, 0, 0.5]), Pose2D(5.05, 5.05))
    assert skipped == 1
    assert g.skipped_points == 1
    assert g.state_at(5.55, 5.05)[0] == RISK


def test_update_sensor_origin_must_be_in_grid():
    g = grid_10m()
    with pytest.raises(ValidationError):
        g.update(pts([5.0, 5.0, 0, 0.1]), Pose2D(-5.0, 0.0))


def test_update_permutation_insensitive():
    rng = np.random.default_rng(31)
    batches = []
    for _ in range(20):
        n = rng.integers(1, 40)
        xyz = rng.uniform(0.5, 9.5, size=(n, 3))
        xyz[:, 2] = 0.0
        risk = np.where(rng.random(n) < 0.4, 0.0, rng.uniform(0, 1, n))
        batches.append(np.concatenate([xyz, risk[:, None]], axis=1))
    origin = Pose2D(5.05, 5.05)

    g1 = grid_10m()
    for b in batches:
        g1.update(b, origin)
    g2 = grid_10m()
    for b in batches:
        g2.update(b[np.random.default_rng(1).permutation(b.shape[0])], origin)
    assert np.array_equal(g1.state, g2.state)
    assert np.array_equal(g1.risk, g2.risk)


def test_update_interiors_match_per_ray_oracle():
    rng = np.random.default_rng(37)
    g = grid_10m()
    origin = Pose2D(5.05, 5.05)
    n = 60
    xyz = np.concatenate(
        [rng.uniform(0.5, 9.5, size=(n, 2)), np.zeros((n, 1))], axis=1
    )
    batch = np.concatenate([xyz, np.zeros((n, 1))], axis=1)  # all zero risk
    g.update(batch, origin)

    oracle = OccupancyGrid(0.1, 100, 100, Pose2D(0.0, 0.0, 0.0))
    o_cell = oracle.world_to_cell(origin.x, origin.y)
    for row in batch:
        c = oracle.world_to_cell(row[0], row[1])
        oracle.state[c[1], c[0]] = FREE
        for ix, iy in bresenham_trace(o_cell, c)[1:-1]:
            if oracle.state[iy, ix] != RISK:
                oracle.state[iy, ix] = FREE
    assert np.array_equal(g.state, oracle.state)


def test_recenter_preserves_overlap_and_fills_unknown():
    g = OccupancyGrid.robot_window(5.0, 5.0, size_m=4.0, resolution=0.1)
    g.update(pts([5.55, 5.05, 0, 0.9]), Pose2D(5.05, 5.05))
    assert g.state_at(5.55, 5.05)[0] == RISK
    g.recenter(6.0, 5.0)
    s, r = g.state_at(5.55, 5.05)
    assert s == RISK and r == 0.9
    # freshly exposed cells are unknown
    assert g.state_at(7.9, 5.0)[0] == UNKNOWN
    # cells that scrolled out read as unknown
    assert g.state_at(4.05, 5.05)[0] == UNKNOWN


def test_recenter_noop_when_close():
    g = OccupancyGrid.robot_window(5.0, 5.0, size_m=4.0, resolution=0.1)
    before = g.origin
    g.recenter(5.01, 5.01)
    assert g.origin == before


def test_state_at_out_of_bounds_reads_unknown():
    g = grid_10m()
    assert g.state_at(-1.0, 50.0) == (UNKNOWN, 0.0)


def test_pgm_export_shape_and_values():
    g = grid_10m()
    g.update(pts([5.55, 5.05, 0, 0.8], [5.85, 5.05, 0, 0.0]), Pose2D(5.05, 5.05))
    raster, meta = g.to_pgm()
    assert raster.startswith(b"P5\n100 100\n255\n")
    body = np.frombuffer(raster[len(b"P5\n100 100\n255\n") :], dtype=np.uint8).reshape(100, 100)
    ix, iy = g.world_to_cell(5.55, 5.05)
    assert body[iy, ix] == 80
    assert (body == 205).sum() > 0 and (body == 254).sum() > 0
    assert '"resolution": 0.1' in meta
