"""Uniform interfaces to the model-backed capabilities.

Deterministic in-process mocks live in mock, an HTTP client speaking the
adapter protocol lives in remote. Both satisfy the SceneProvider protocol
in base.
"""

from semnav.providers.base import (
    GoalPointResponse,
    ProviderEndpointConfig,
    ProviderError,
    SceneProvider,
)
from semnav.providers.mock import MockProvider, MockProviderConfig, MockSelectionContext
from semnav.providers.remote import RemoteProvider

__all__ = [
    "GoalPointResponse",
    "ProviderEndpointConfig",
    "ProviderError",
    "SceneProvider",
    "MockProvider",
    "MockProviderConfig",
    "MockSelectionContext",
    "RemoteProvider",
]
