"""HTTP adapter exposing model backends to the semnav engine.

Five POST endpoints (embed, segment, scene_risk, goal_point, select_path)
plus GET /health. Every response is canonical JSON validated against a
versioned schema; record mode captures responses to fixture files keyed by
request digest, and replay mode serves them back byte-identically without
loading any model.
"""

from semnav_adapter.config import AdapterConfig
from semnav_adapter.service import build_app

__all__ = ["AdapterConfig", "build_app"]
