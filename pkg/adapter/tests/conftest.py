import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from semnav_adapter.config import AdapterConfig
from semnav_adapter.service import build_app
from semnav_adapter.wire import rgb_to_ppm


def make_image(seed=0, h=24, w=32):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def image_b64(img) -> str:
    return base64.b64encode(rgb_to_ppm(img)).decode("ascii")


def make_client(backend=None, **cfg) -> TestClient:
    config = AdapterConfig(**cfg)
    return TestClient(build_app(config, backend=backend))


def valid_bodies(b64: str) -> dict:
    """One well-formed request per endpoint, frame_id 7 throughout."""
    return {
        "/embed": {"schema_version": 1, "frame_id": 7, "image_b64": b64},
        "/segment": {
            "schema_version": 1,
            "frame_id": 7,
            "image_b64": b64,
            "labels": ["grass", "bench"],
        },
        "/scene_risk": {
            "schema_version": 1,
            "frame_id": 7,
            "image_b64": b64,
            "modality": "a wheeled robot, 0.3 m ground clearance",
            "prior_table": {
                "schema_version": 1,
                "scene_description": "",
                "source": "fresh_query",
                "entries": [{"label": "bench", "risk": 0.85, "curiosity": 0.2}],
            },
        },
        "/goal_point": {
            "schema_version": 1,
            "frame_id": 7,
            "image_b64": b64,
            "goal_text": "cone",
        },
        "/select_path": {
            "schema_version": 1,
            "frame_id": 7,
            "overlay_b64": b64,
            "modality": "a wheeled robot",
            "behavior": "stay to the right",
            "history": [{"digest": "ab12", "choice": "center", "frame_id": 3}],
        },
    }


@pytest.fixture
def client():
    return make_client()


@pytest.fixture
def test_image():
    return make_image(seed=3)
