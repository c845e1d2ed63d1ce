"""Provider protocol and endpoint configuration.

A provider answers the four model-backed questions the pipeline asks
(frame embedding, class segmentation, scene risk table, goal point) plus
trajectory selection. Implementations must be safe for concurrent calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

from semnav.core import (
    CostTable,
    Embedding,
    Observation,
    RobotModality,
    ValidationError,
)
from semnav.costmap import ClassProbabilityStack
from semnav.reasoning import SelectionRequest, SelectionResponse


class ProviderError(RuntimeError):
    """A provider failed after exhausting its retries."""


@dataclass(frozen=True)
class ProviderEndpointConfig:
    """Where and how to reach a remote provider.

    api_key_env names an environment variable holding the credential;
    config files carry only the variable name, never the secret itself.
    """

    base_url: str
    timeout_s: float = 10.0
    retry_count: int = 2
    api_key_env: str | None = None

    def __post_init__(self) -> None:
        if not self.base_url.strip():
            raise ValidationError("base_url must be non-empty")
        if self.timeout_s <= 0:
            raise ValidationError("timeout_s must be > 0")
        if self.retry_count < 0:
            raise ValidationError("retry_count must be >= 0")


@dataclass(frozen=True)
class GoalPointResponse:
    """Normalized image-space goal location; found gates the coordinates."""

    u_norm: float = 0.0
    v_norm: float = 0.0
    found: bool = False

    def __post_init__(self) -> None:
        if self.found and not (0.0 <= self.u_norm <= 1.0 and 0.0 <= self.v_norm <= 1.0):
            raise ValidationError(
                f"goal point ({self.u_norm}, {self.v_norm}) outside [0, 1]^2"
            )


@runtime_checkable
class SceneProvider(Protocol):
    def embed_frame(self, observation: Observation) -> Embedding: ...

    def segment_classes(
        self, observation: Observation, labels: Sequence[str]
    ) -> ClassProbabilityStack: ...

    def infer_scene_risks(
        self,
        observation: Observation,
        modality: RobotModality,
        prior_table: CostTable,
    ) -> CostTable: ...

    def detect_goal_point(
        self, observation: Observation, goal_text: str
    ) -> GoalPointResponse: ...

    def select_path(self, request: SelectionRequest) -> SelectionResponse: ...
