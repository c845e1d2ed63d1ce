"""Service configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

DEFAULT_EMBEDDER = "openai/clip-vit-large-patch14"
DEFAULT_SEGMENTER = "CIDAS/clipseg-rd64-refined"
DEFAULT_REASONER = "gemini-3.0-flash"

MODES = ("off", "record", "replay")
BACKENDS = ("offline", "hf")

DEFAULT_MAX_IMAGE_BYTES = 4 * 1024 * 1024


@dataclass(frozen=True)
class AdapterConfig:
    """What to serve, where, and how model calls are satisfied.

    mode "record" captures every successful response to fixture_dir;
    "replay" serves only from fixture_dir and never constructs a backend.
    response_cache short-circuits repeat requests from the fixture store
    while recording (off by default; the service is otherwise stateless).
    """

    backend: str = "offline"
    mode: str = "off"
    fixture_dir: str | None = None
    host: str = "127.0.0.1"
    port: int = 8700
    device: str = "cpu"
    embedder_id: str = DEFAULT_EMBEDDER
    segmenter_id: str = DEFAULT_SEGMENTER
    reasoner_id: str = DEFAULT_REASONER
    reasoner_url: str | None = None
    api_key_env: str | None = None
    timeout_s: float = 30.0
    endpoint_timeout_s: dict = field(default_factory=dict)
    response_cache: bool = False
    max_image_bytes: int = DEFAULT_MAX_IMAGE_BYTES

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode {self.mode!r} not one of {MODES}")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend {self.backend!r} not one of {BACKENDS}")
        if self.mode in ("record", "replay") and not self.fixture_dir:
            raise ValueError(f"mode {self.mode!r} requires fixture_dir")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.max_image_bytes < 1:
            raise ValueError("max_image_bytes must be positive")

    def timeout_for(self, endpoint: str) -> float:
        return float(self.endpoint_timeout_s.get(endpoint, self.timeout_s))
