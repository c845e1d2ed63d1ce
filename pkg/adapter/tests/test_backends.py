import json
import re
from pathlib import Path

import numpy as np
import pytest

import semnav_adapter
from semnav_adapter.backends import BackendUnavailable, make_backend
from semnav_adapter.backends.base import ReasonerCall
from semnav_adapter.backends.offline import OfflineBackend
from semnav_adapter.config import AdapterConfig
from semnav_adapter.prompts import PRIOR_TABLE_HEADER

from conftest import make_image

DATA = Path(__file__).parent / "data"


def test_embed_is_deterministic_and_image_sensitive():
    b = OfflineBackend()
    img = make_image(seed=11)
    v1, v2 = b.embed(img), b.embed(img)
    assert np.array_equal(v1, v2)
    other = b.embed(make_image(seed=12))
    assert not np.array_equal(v1, other)


def test_embed_is_locally_smooth():
    b = OfflineBackend()
    img = make_image(seed=13, h=48, w=64)
    tweaked = img.copy()
    tweaked[5, 5] = 255 - tweaked[5, 5]

    def unit(v):
        return v / np.linalg.norm(v)

    d = float(np.linalg.norm(unit(b.embed(img)) - unit(b.embed(tweaked))))
    assert d < 0.05


def test_embed_defined_on_flat_image():
    b = OfflineBackend()
    v = b.embed(np.full((24, 32, 3), 128, dtype=np.uint8))
    assert np.linalg.norm(v) > 0


def test_embed_matches_golden_vector():
    b = OfflineBackend()
    golden = json.loads((DATA / "golden_embed.json").read_text())
    img = make_image(seed=golden["image_seed"], h=golden["h"], w=golden["w"])
    vec = b.embed(img)
    vec = vec / np.linalg.norm(vec)
    ref = np.array(golden["embedding"])
    ref = ref / np.linalg.norm(ref)
    assert float(vec @ ref) >= 1.0 - 1e-4


def test_segment_argmax_matches_golden_mask():
    b = OfflineBackend()
    meta = json.loads((DATA / "golden_mask.json").read_text())
    img = make_image(seed=meta["image_seed"], h=meta["h"], w=meta["w"])
    logits = b.segment_logits(img, tuple(meta["prompts"]))
    got = logits.argmax(axis=0)
    ref = np.array(meta["argmax"])
    assert got.shape == ref.shape
    assert (got == ref).mean() >= 0.95


def test_flat_image_scores_every_prompt_equally():
    b = OfflineBackend()
    img = np.full((40, 40, 3), 77, dtype=np.uint8)
    logits = b.segment_logits(img, ("grass", "background", "sky", "nothing"))
    assert np.allclose(logits, 0.0, atol=1e-12)


def test_scene_risk_merges_prior_and_stays_parseable():
    b = OfflineBackend()
    prior = {
        "schema_version": 1,
        "scene_description": "",
        "source": "fresh_query",
        "entries": [{"label": "bench", "risk": 0.85, "curiosity": 0.2}],
    }
    call = ReasonerCall(
        "scene_risk",
        make_image(seed=4),
        ("prompt", PRIOR_TABLE_HEADER + " " + json.dumps(prior)),
    )
    text = b.complete(call)
    assert text.startswith("```json")
    doc = json.loads(text.split("\n", 1)[1].rsplit("```", 1)[0])
    names = {o["name"]: o for o in doc["objects"]}
    assert names["bench"]["risk"] == 0.85
    assert "ground" in names


def test_goal_point_found_on_saturated_blob_only():
    b = OfflineBackend()
    gray = np.full((30, 40, 3), 90, dtype=np.uint8)
    assert json.loads(b.complete(ReasonerCall("goal_point", gray, ()))) == {
        "found": False
    }
    marked = gray.copy()
    marked[10:13, 30:33] = (250, 60, 0)
    reply = json.loads(b.complete(ReasonerCall("goal_point", marked, ())))
    assert reply["found"] is True
    assert 30 / 39 - 0.1 <= reply["u"] <= 32 / 39 + 0.1
    assert 0.0 <= reply["v"] <= 1.0


def test_selector_prefers_green_then_precedence():
    b = OfflineBackend()
    img = np.full((30, 40, 3), 90, dtype=np.uint8)
    img[5:9, 0:10] = (255, 0, 0)
    assert b.complete(ReasonerCall("select_path", img, ())).endswith("Color: red")
    img[20:24, 0:10] = (0, 255, 0)
    assert b.complete(ReasonerCall("select_path", img, ())).endswith("Color: green")
    blank = np.full((30, 40, 3), 90, dtype=np.uint8)
    assert b.complete(ReasonerCall("select_path", blank, ())).endswith("Color: none")


def test_selector_ignores_sub_stroke_speckles():
    b = OfflineBackend()
    img = np.full((30, 40, 3), 90, dtype=np.uint8)
    img[0, 0] = (0, 255, 0)  # single stray pixel, far below stroke size
    assert b.complete(ReasonerCall("select_path", img, ())).endswith("Color: none")


def test_offline_identifiers_are_pinned_strings():
    ids = OfflineBackend().identifiers()
    assert set(ids) == {"embedder", "segmenter", "reasoner", "device"}
    assert all(isinstance(v, str) and v for v in ids.values())


def test_hf_backend_requires_reasoner_url():
    with pytest.raises(BackendUnavailable):
        make_backend(AdapterConfig(backend="hf"))


def test_hf_module_imports_without_heavy_deps():
    import semnav_adapter.backends.hf  # noqa: F401 -- import must stay cheap


def test_adapter_never_imports_the_engine():
    root = Path(semnav_adapter.__file__).parent
    pattern = re.compile(r"^\s*(import|from)\s+semnav\b", re.M)
    offenders = [
        str(py) for py in root.rglob("*.py") if pattern.search(py.read_text())
    ]
    assert offenders == []
