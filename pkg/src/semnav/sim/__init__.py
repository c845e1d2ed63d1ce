"""Deterministic 2.5D raycast world, robot kinematics, and episode loop."""

from semnav.sim.scene import DynamicAgent, Scene, generate_scene, TASK_NAMES
from semnav.sim.render import render_observation
from semnav.sim.robot import step_robot
from semnav.sim.episode import (
    EpisodeMetrics,
    EpisodeResult,
    PipelineConfig,
    compute_metrics,
    run_episode,
)

__all__ = [
    "DynamicAgent",
    "Scene",
    "generate_scene",
    "TASK_NAMES",
    "render_observation",
    "step_robot",
    "EpisodeMetrics",
    "EpisodeResult",
    "PipelineConfig",
    "compute_metrics",
    "run_episode",
]
