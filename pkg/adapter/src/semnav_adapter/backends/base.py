"""Backend protocol: the three model capabilities behind the endpoints."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np


class BackendError(RuntimeError):
    """Model-side failure; surfaces as a retryable 500-class response."""


class BackendRefusal(BackendError):
    """The reasoner declined to answer (safety block, empty completion)."""


class BackendUnavailable(BackendError):
    """Raised at startup when a backend's models cannot be resolved."""


@dataclass(frozen=True)
class ReasonerCall:
    """One assembled multimodal query.

    kind routes rule-based backends ("scene_risk", "goal_point",
    "select_path"); live backends forward text_parts and the image as-is.
    """

    kind: str
    image: np.ndarray
    text_parts: tuple[str, ...]
    temperature: float = 0.0


@runtime_checkable
class ModelBackend(Protocol):
    def identifiers(self) -> dict:
        """Pinned model ids plus device, reported by /health."""
        ...

    def embed(self, rgb: np.ndarray) -> np.ndarray:
        """(H, W, 3) uint8 -> (768,) float64, normalized by the service."""
        ...

    def segment_logits(self, rgb: np.ndarray, prompts: tuple[str, ...]) -> np.ndarray:
        """Low-resolution logit maps, one channel per prompt: (K, h, w)."""
        ...

    def complete(self, call: ReasonerCall) -> str:
        """Free-text reply to a multimodal query."""
        ...
