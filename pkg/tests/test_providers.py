import threading
import time

import numpy as np
import pytest

from semnav.core import (
    CostTable,
    Observation,
    ppm_to_rgb,
    RiskEntry,
    RobotModality,
    BehaviorSpec,
    Pose2D,
    ValidationError,
    cost_table_to_obj,
    embedding_to_b64,
    normalize_embedding,
    rgb_to_ppm,
)
from semnav.costmap import build_pixel_costmap
from semnav.occupancy import FREE, OccupancyGrid
from semnav.planner import PROPOSAL_PALETTE, PlannedPath, ProposalSet
from semnav.providers import (
    GoalPointResponse,
    MockProvider,
    MockProviderConfig,
    ProviderEndpointConfig,
    ProviderError,
    RemoteProvider,
    SceneProvider,
)
from semnav.reasoning import OverlayImage, SelectionRequest

MODALITY = RobotModality("small wheeled robot", footprint_radius=0.15, max_speed=0.75)


def make_observation(rows, labels, frame_id=0):
    """rows: list of label names, one per image row (16 cols each)."""
    h, w = len(rows), 16
    cmap = np.zeros((h, w), dtype=np.int32)
    for i, lab in enumerate(rows):
        cmap[i, :] = labels.index(lab)
    rgb = (cmap[..., None] * np.array([40, 80, 120])).astype(np.uint8)
    depth = np.full((h, w), 3.0)
    return Observation(rgb, depth, cmap, tuple(labels), frame_id)


# ---------------------------------------------------------------------------
# mock embedder


def test_embed_deterministic_and_unit_norm():
    p = MockProvider()
    obs = make_observation(["grass"] * 8 + ["path"] * 8, ["grass", "path"])
    e1 = p.embed_frame(obs)
    e2 = p.embed_frame(obs)
    assert np.array_equal(e1.values, e2.values)
    assert abs(np.linalg.norm(e1.values) - 1.0) <= 1e-9


def test_embed_depends_only_on_class_histogram():
    p = MockProvider()
    a = make_observation(["grass"] * 4 + ["path"] * 4, ["grass", "path"])
    b = make_observation(["path"] * 4 + ["grass"] * 4, ["path", "grass"])
    assert np.array_equal(p.embed_frame(a).values, p.embed_frame(b).values)


def test_embed_minor_class_difference_below_03():
    # oracle: construction gives distance ~ ||h1/||v1|| - h2/||v2|||| in the
    # per-label basis; a 5% newcomer stays well under 0.3
    p = MockProvider()
    base = ["grass"] * 10 + ["path"] * 9
    a = make_observation(base + ["path"], ["grass", "path", "cone"])
    b = make_observation(base + ["cone"], ["grass", "path", "cone"])
    d = p.embed_frame(a).distance_to(p.embed_frame(b))
    assert 0.0 < d < 0.3


def test_embed_disjoint_class_sets_at_least_10():
    p = MockProvider()
    a = make_observation(["grass"] * 8 + ["path"] * 8, ["grass", "path"])
    b = make_observation(["rubble"] * 8 + ["sand"] * 8, ["rubble", "sand"])
    assert p.embed_frame(a).distance_to(p.embed_frame(b)) >= 1.0


def test_embed_background_excluded_from_histogram():
    p = MockProvider()
    half_sky = make_observation(["sky"] * 8 + ["grass"] * 8, ["sky", "grass"])
    no_sky = make_observation(["grass"] * 16, ["sky", "grass"])
    assert np.array_equal(p.embed_frame(half_sky).values, p.embed_frame(no_sky).values)


def test_embed_cache_metric_contract_fixture_suite():
    p = MockProvider()
    gamma = 0.55
    same_a = make_observation(["grass"] * 9 + ["path"] * 7, ["grass", "path"])
    same_b = make_observation(["grass"] * 8 + ["path"] * 8, ["grass", "path"])
    cross = make_observation(["lobby"] * 8 + ["carpet"] * 8, ["lobby", "carpet"])
    d_same = p.embed_frame(same_a).distance_to(p.embed_frame(same_b))
    d_cross = p.embed_frame(same_a).distance_to(p.embed_frame(cross))
    assert d_same < gamma < d_cross


def test_embed_all_background_frame_still_embeds():
    p = MockProvider()
    obs = make_observation(["sky"] * 16, ["sky"])
    assert abs(np.linalg.norm(p.embed_frame(obs).values) - 1.0) <= 1e-9


# ---------------------------------------------------------------------------
# mock segmentation


def test_segment_true_class_probability_and_sum():
    p = MockProvider(MockProviderConfig(epsilon=0.1))
    obs = make_observation(["grass"] * 8 + ["path"] * 8, ["grass", "path"])
    stack = p.segment_classes(obs, ["grass", "path", "background", "sky", "nothing"])
    assert np.allclose(stack.maps.sum(axis=0), 1.0, atol=1e-12)
    g = stack.classes.index("grass")
    assert np.allclose(stack.maps[g][:8, :], 0.9)
    assert np.allclose(stack.maps[g][8:, :], 0.1 / 4)


def test_segment_absent_label_channel_uniform_share():
    p = MockProvider(MockProviderConfig(epsilon=0.1))
    obs = make_observation(["grass"] * 16, ["grass"])
    stack = p.segment_classes(obs, ["grass", "person", "background"])
    person = stack.classes.index("person")
    assert np.allclose(stack.maps[person], 0.1 / 2)


def test_segment_noise_free_recovers_exact_costmap():
    p = MockProvider(MockProviderConfig(epsilon=0.0))
    rows = ["pavement"] * 6 + ["grass"] * 6 + ["person"] * 2 + ["sky"] * 2
    labels = ["pavement", "grass", "person", "sky"]
    obs = make_observation(rows, labels)
    stack = p.segment_classes(obs, ["pavement", "grass", "person", "background", "sky", "nothing"])
    table = CostTable(
        (RiskEntry("grass", 0.3), RiskEntry("pavement", 0.1), RiskEntry("person", 0.7))
    )
    m = build_pixel_costmap(stack, table, delta=0.35)
    truth = {"pavement": 0.1, "grass": 0.3, "person": 0.7, "sky": 0.0}
    expected = np.array([[truth[lab]] * 16 for lab in rows])
    assert np.array_equal(m.values, expected)


def test_segment_single_label_degenerate():
    p = MockProvider(MockProviderConfig(epsilon=0.1))
    obs = make_observation(["grass"] * 4, ["grass"])
    stack = p.segment_classes(obs, ["grass"])
    assert np.allclose(stack.maps, 1.0)


def test_segment_true_class_outside_requested_set_uniform():
    p = MockProvider(MockProviderConfig(epsilon=0.1))
    obs = make_observation(["cone"] * 4, ["cone"])
    stack = p.segment_classes(obs, ["grass", "path"])
    assert np.allclose(stack.maps, 0.5)


def test_segment_bit_identical_repeat():
    p = MockProvider()
    obs = make_observation(["grass"] * 8 + ["path"] * 8, ["grass", "path"])
    s1 = p.segment_classes(obs, ["grass", "path", "background"])
    s2 = p.segment_classes(obs, ["grass", "path", "background"])
    assert s1.maps.tobytes() == s2.maps.tobytes()


# ---------------------------------------------------------------------------
# mock scene risk


def test_scene_risk_fixture_values():
    p = MockProvider()
    rows = ["pavement"] * 6 + ["grass"] * 6 + ["person"] * 4
    obs = make_observation(rows, ["pavement", "grass", "person"])
    table = p.infer_scene_risks(obs, MODALITY, CostTable(()))
    assert table.as_dict() == {"pavement": 0.1, "grass": 0.3, "person": 0.7}
    assert all(e.curiosity == 0.5 for e in table.entries)
    assert table.source == "fresh_query"


def test_scene_risk_retains_prior_classes():
    p = MockProvider()
    obs = make_observation(["grass"] * 16, ["grass"])
    prior = CostTable((RiskEntry("bench", 0.6),))
    table = p.infer_scene_risks(obs, MODALITY, prior)
    assert table.as_dict() == {"bench": 0.6, "grass": 0.3}


def test_scene_risk_prior_value_wins_over_fixture():
    p = MockProvider()
    obs = make_observation(["grass"] * 16, ["grass"])
    prior = CostTable((RiskEntry("grass", 0.45),))
    table = p.infer_scene_risks(obs, MODALITY, prior)
    assert table.as_dict() == {"grass": 0.45}


def test_scene_risk_empty_scene_empty_table():
    p = MockProvider()
    obs = make_observation(["sky"] * 8, ["sky"])
    table = p.infer_scene_risks(obs, MODALITY, CostTable(()))
    assert table.entries == ()


def test_scene_risk_unknown_label_deterministic_in_range():
    p = MockProvider()
    obs = make_observation(["rubble"] * 8, ["rubble"])
    t1 = p.infer_scene_risks(obs, MODALITY, CostTable(()))
    t2 = p.infer_scene_risks(obs, MODALITY, CostTable(()))
    r = t1.risk_of("rubble")
    assert t2.risk_of("rubble") == r
    assert 0.0 <= r <= 1.0


# ---------------------------------------------------------------------------
# mock goal point


def test_goal_point_centroid_normalized():
    labels = ["ground", "cone"]
    cmap = np.zeros((480, 640), dtype=np.int32)
    cmap[230:250, 310:330] = 1  # block centered at (320, 240)
    rgb = np.zeros((480, 640, 3), dtype=np.uint8)
    obs = Observation(rgb, np.full((480, 640), 2.0), cmap, tuple(labels))
    r = MockProvider().detect_goal_point(obs, "cone")
    assert r.found
    assert r.u_norm == pytest.approx(0.5, abs=1e-3)
    assert r.v_norm == pytest.approx(0.5, abs=1e-3)


def test_goal_point_absent_class():
    obs = make_observation(["grass"] * 8, ["grass"])
    r = MockProvider().detect_goal_point(obs, "cone")
    assert not r.found


def test_goal_point_corner_region_within_bounds():
    labels = ["ground", "door"]
    cmap = np.zeros((60, 80), dtype=np.int32)
    cmap[0:10, 70:80] = 1
    obs = Observation(
        np.zeros((60, 80, 3), dtype=np.uint8), np.full((60, 80), 2.0), cmap, tuple(labels)
    )
    r = MockProvider().detect_goal_point(obs, "door")
    assert r.found
    assert 70 / 80 <= r.u_norm <= 1.0
    assert 0.0 <= r.v_norm <= 10 / 60


# ---------------------------------------------------------------------------
# mock trajectory selection


def free_grid():
    g = OccupancyGrid(0.1, 100, 100, Pose2D(0.0, 0.0, 0.0))
    g.state[:] = FREE
    return g


def straight(label, y=5.0, cost=0.0):
    return PlannedPath(
        (Pose2D(1.0, y), Pose2D(4.0, y)), 3.0, cost, label, PROPOSAL_PALETTE[label]
    )


def selection_request(proposals):
    overlay = OverlayImage(np.zeros((4, 4, 3), dtype=np.uint8), ())
    return SelectionRequest(overlay, "robot", "go", (), proposals.frame_id, proposals)


def test_select_path_two_line_format():
    p = MockProvider()
    p.set_selection_context(free_grid(), BehaviorSpec("go", None))
    ps = ProposalSet((straight("center"), straight("left", y=6.0)), 0)
    resp = p.select_path(selection_request(ps))
    lines = resp.text.splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("Reason: lowest combined cost")
    assert lines[1] == "Color: green"


def test_select_path_empty_proposals_none():
    p = MockProvider()
    p.set_selection_context(free_grid(), BehaviorSpec("go", None))
    resp = p.select_path(selection_request(ProposalSet((), 3)))
    assert resp.text.splitlines()[1] == "Color: none"


def test_select_path_without_context_none():
    p = MockProvider()
    resp = p.select_path(selection_request(ProposalSet((straight("center"),), 0)))
    assert resp.text.endswith("Color: none")


def test_mock_provider_satisfies_protocol():
    assert isinstance(MockProvider(), SceneProvider)


# ---------------------------------------------------------------------------
# config types


def test_endpoint_config_validation():
    ProviderEndpointConfig("http://localhost:9000")
    with pytest.raises(ValidationError):
        ProviderEndpointConfig("http://x", timeout_s=0.0)
    with pytest.raises(ValidationError):
        ProviderEndpointConfig("http://x", retry_count=-1)
    with pytest.raises(ValidationError):
        ProviderEndpointConfig("   ")


def test_goal_point_response_invariant():
    GoalPointResponse(0.5, 0.5, True)
    GoalPointResponse(9.0, 9.0, False)  # coordinates ignored when not found
    with pytest.raises(ValidationError):
        GoalPointResponse(1.5, 0.5, True)


# ---------------------------------------------------------------------------
# remote client against a scripted transport


class FakeResponse:
    def __init__(self, status_code, payload):
        self.status_code = status_code
        self._payload = payload

    def json(self):
        return self._payload


class FakeSession:
    """Scripted POST transport; records calls, optionally stalls."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []
        self.concurrent = 0
        self.max_concurrent = 0
        self.stall_s = 0.0
        self._lock = threading.Lock()

    def post(self, url, json=None, timeout=None, headers=None):
        with self._lock:
            self.concurrent += 1
            self.max_concurrent = max(self.max_concurrent, self.concurrent)
            self.calls.append((url, json, headers))
        try:
            if self.stall_s:
                time.sleep(self.stall_s)
            step = self.script.pop(0) if self.script else self.script_default
            if isinstance(step, Exception):
                raise step
            return step
        finally:
            with self._lock:
                self.concurrent -= 1

    def get(self, url, timeout=None):
        return FakeResponse(200, {"status": "ok"})


def remote(script, retry_count=2, max_in_flight=2, api_key_env=None):
    cfg = ProviderEndpointConfig(
        "http://adapter.test", timeout_s=1.0, retry_count=retry_count, api_key_env=api_key_env
    )
    return RemoteProvider(cfg, max_in_flight=max_in_flight, session=FakeSession(script))


def test_remote_embed_round_trip():
    emb = normalize_embedding(np.arange(1.0, 769.0))
    r = remote([FakeResponse(200, {"frame_id": 7, "embedding_b64": embedding_to_b64(emb)})])
    obs = make_observation(["grass"] * 4, ["grass"], frame_id=7)
    got = r.embed_frame(obs)
    assert np.array_equal(got.values, emb.values)
    url, body, _ = r.session.calls[0]
    assert url.endswith("/embed")
    assert body["schema_version"] == 1 and body["frame_id"] == 7
    rgb = ppm_to_rgb(__import__("base64").b64decode(body["image_b64"]))
    assert np.array_equal(rgb, obs.rgb)


def test_remote_retries_then_single_error():
    import requests as _requests

    r = remote(
        [
            _requests.ConnectionError("down"),
            FakeResponse(500, {}),
            _requests.ConnectionError("down again"),
        ],
        retry_count=2,
    )
    obs = make_observation(["grass"] * 4, ["grass"])
    with pytest.raises(ProviderError):
        r.embed_frame(obs)
    assert len(r.session.calls) == 3


def test_remote_client_error_not_retried():
    r = remote([FakeResponse(400, {})], retry_count=5)
    obs = make_observation(["grass"] * 4, ["grass"])
    with pytest.raises(ProviderError):
        r.embed_frame(obs)
    assert len(r.session.calls) == 1


def test_remote_frame_id_echo_enforced():
    emb = normalize_embedding(np.ones(768))
    r = remote([FakeResponse(200, {"frame_id": 99, "embedding_b64": embedding_to_b64(emb)})])
    obs = make_observation(["grass"] * 4, ["grass"], frame_id=1)
    with pytest.raises(ProviderError):
        r.embed_frame(obs)


def test_remote_segment_fallback_within_two_frames():
    stack_payload = _stack_payload(frame_id=10)
    r = remote([FakeResponse(200, stack_payload), FakeResponse(500, {}), FakeResponse(500, {})], retry_count=0)
    obs10 = make_observation(["grass"] * 4, ["grass"], frame_id=10)
    obs12 = make_observation(["grass"] * 4, ["grass"], frame_id=12)
    s1 = r.segment_classes(obs10, ["grass", "background"])
    s2 = r.segment_classes(obs12, ["grass", "background"])
    assert np.array_equal(s1.maps, s2.maps)


def test_remote_segment_fallback_expires_after_two_frames():
    r = remote(
        [FakeResponse(200, _stack_payload(frame_id=10))]
        + [FakeResponse(500, {})] * 4,
        retry_count=0,
    )
    obs10 = make_observation(["grass"] * 4, ["grass"], frame_id=10)
    obs13 = make_observation(["grass"] * 4, ["grass"], frame_id=13)
    r.segment_classes(obs10, ["grass", "background"])
    with pytest.raises(ProviderError):
        r.segment_classes(obs13, ["grass", "background"])


def _stack_payload(frame_id):
    import base64 as _b64

    maps = np.full((2, 4, 16), 0.5)
    return {
        "frame_id": frame_id,
        "labels": ["grass", "background"],
        "height": 4,
        "width": 16,
        "stack_b64": _b64.b64encode(maps.astype("<f8").tobytes()).decode("ascii"),
    }


def test_remote_scene_risk_parses_table_and_malformed_raises():
    table = CostTable((RiskEntry("grass", 0.3),))
    ok = FakeResponse(200, {"frame_id": 0, "table": cost_table_to_obj(table)})
    bad = FakeResponse(200, {"frame_id": 0, "table": {"schema_version": 1, "entries": [{"label": "grass", "risk": 7.0}]}})
    r = remote([ok, bad], retry_count=0)
    obs = make_observation(["grass"] * 4, ["grass"])
    got = r.infer_scene_risks(obs, MODALITY, CostTable(()))
    assert got.as_dict() == {"grass": 0.3}
    with pytest.raises(ValidationError):
        r.infer_scene_risks(obs, MODALITY, CostTable(()))


def test_remote_goal_point_failure_means_not_found():
    r = remote([FakeResponse(500, {})], retry_count=0)
    obs = make_observation(["grass"] * 4, ["grass"])
    assert r.detect_goal_point(obs, "cone") == GoalPointResponse(found=False)


def test_remote_select_path_sends_history_and_returns_text():
    r = remote([FakeResponse(200, {"frame_id": 4, "text": "Reason: ok\nColor: green"})])
    ps = ProposalSet((straight("center"),), 4)
    overlay = OverlayImage(np.zeros((4, 4, 3), dtype=np.uint8), ())
    req = SelectionRequest(overlay, "robot", "go", (("abc", _fake_result()),), 4, ps)
    resp = r.select_path(req)
    assert resp.text == "Reason: ok\nColor: green"
    _, body, _ = r.session.calls[0]
    assert body["history"] == [{"digest": "abc", "choice": "center", "frame_id": 2}]


def _fake_result():
    from semnav.reasoning import SelectionResult

    return SelectionResult("center", "ok", 2)


def test_remote_api_key_from_environment(monkeypatch):
    monkeypatch.setenv("ADAPTER_KEY", "sekrit")
    emb = normalize_embedding(np.ones(768))
    r = remote(
        [FakeResponse(200, {"frame_id": 0, "embedding_b64": embedding_to_b64(emb)})],
        api_key_env="ADAPTER_KEY",
    )
    obs = make_observation(["grass"] * 4, ["grass"])
    r.embed_frame(obs)
    _, _, headers = r.session.calls[0]
    assert headers == {"Authorization": "Bearer sekrit"}


def test_remote_missing_api_key_is_error(monkeypatch):
    monkeypatch.delenv("ADAPTER_KEY", raising=False)
    r = remote([], api_key_env="ADAPTER_KEY")
    obs = make_observation(["grass"] * 4, ["grass"])
    with pytest.raises(ProviderError):
        r.embed_frame(obs)
    assert r.session.calls == []


def test_remote_in_flight_bound_two():
    emb = normalize_embedding(np.ones(768))
    payload = FakeResponse(200, {"frame_id": 0, "embedding_b64": embedding_to_b64(emb)})
    r = remote([payload] * 8, max_in_flight=2)
    r.session.stall_s = 0.05
    obs = make_observation(["grass"] * 4, ["grass"])
    threads = [threading.Thread(target=lambda: r.embed_frame(obs)) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert r.session.max_concurrent <= 2
    assert len(r.session.calls) == 6
