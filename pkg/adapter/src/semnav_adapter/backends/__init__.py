"""Backend registry."""

from __future__ import annotations

from semnav_adapter.backends.base import (
    BackendError,
    BackendRefusal,
    BackendUnavailable,
    ModelBackend,
    ReasonerCall,
)


def make_backend(config) -> ModelBackend:
    if config.backend == "offline":
        from semnav_adapter.backends.offline import OfflineBackend

        return OfflineBackend()
    if config.backend == "hf":
        from semnav_adapter.backends.hf import HfBackend

        return HfBackend(config)
    raise BackendUnavailable(f"unknown backend {config.backend!r}")


__all__ = [
    "BackendError",
    "BackendRefusal",
    "BackendUnavailable",
    "ModelBackend",
    "ReasonerCall",
    "make_backend",
]
