"""Deterministic in-process providers driven by scene truth.

Every answer is a pure function of (observation, config); repeated calls
are bit-identical. The embedder maps the frame's class-visibility
histogram through per-label seeded unit directions, which gives scenes
sharing their class mix nearby embeddings and scenes with disjoint class
sets near-orthogonal ones; the cache ablations lean on that structure.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from semnav.core import (
    CostTable,
    Embedding,
    Observation,
    RiskEntry,
    RobotModality,
    ValidationError,
    normalize_embedding,
    EMBEDDING_DIM,
)
from semnav.costmap import DEFAULT_BACKGROUND_LABELS, ClassProbabilityStack
from semnav.occupancy import OccupancyGrid
from semnav.providers.base import GoalPointResponse
from semnav.reasoning import (
    LABEL_TO_COLOR,
    SelectionRequest,
    SelectionResponse,
    mock_select,
)
from semnav.core import BehaviorSpec

#: Risk values handed out for these classes in every mock scene table.
DEFAULT_RISK_FIXTURE = (
    ("grass", 0.3),
    ("pavement", 0.1),
    ("person", 0.7),
)

MOCK_CURIOSITY = 0.5


def _seeded_uniform(tag: str) -> float:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / float(1 << 64)


def _label_direction(label: str, seed: int) -> np.ndarray:
    """Fixed unit vector for one label; the projection column it owns."""
    digest = hashlib.sha256(f"embed:{seed}:{label}".encode("utf-8")).digest()
    ss = np.random.SeedSequence(int.from_bytes(digest, "big"))
    rng = np.random.Generator(np.random.PCG64(ss))
    v = rng.standard_normal(EMBEDDING_DIM)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class MockProviderConfig:
    seed: int = 0
    epsilon: float = 0.1
    selection_delay_s: float = 0.0
    risk_fixture: tuple[tuple[str, float], ...] = DEFAULT_RISK_FIXTURE

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon < 1.0:
            raise ValidationError("epsilon must be in [0, 1)")
        if self.selection_delay_s < 0:
            raise ValidationError("selection_delay_s must be >= 0")


@dataclass
class MockSelectionContext:
    """Per-tick state the mock selector scores proposals against."""

    grid: OccupancyGrid
    behavior: BehaviorSpec
    scene_truth: object | None = None


@dataclass
class MockProvider:
    config: MockProviderConfig = field(default_factory=MockProviderConfig)

    def __post_init__(self) -> None:
        self._dirs: dict[str, np.ndarray] = {}
        self._dirs_lock = threading.Lock()
        self._selection_ctx: MockSelectionContext | None = None

    # -- embedding ---------------------------------------------------------

    def _direction(self, label: str) -> np.ndarray:
        with self._dirs_lock:
            d = self._dirs.get(label)
            if d is None:
                d = _label_direction(label, self.config.seed)
                self._dirs[label] = d
            return d

    def embed_frame(self, observation: Observation) -> Embedding:
        fractions = observation.label_fractions()
        content = {
            lab: f for lab, f in fractions.items() if lab not in DEFAULT_BACKGROUND_LABELS
        }
        if not content:
            content = fractions
        v = np.zeros(EMBEDDING_DIM)
        for lab in sorted(content):
            v += content[lab] * self._direction(lab)
        return normalize_embedding(v)

    # -- segmentation --------------------------------------------------------

    def segment_classes(
        self, observation: Observation, labels: Sequence[str]
    ) -> ClassProbabilityStack:
        labels = tuple(labels)
        if not labels:
            raise ValidationError("segmentation needs at least one label")
        k = len(labels)
        eps = self.config.epsilon
        h, w = observation.class_map.shape
        idx_of = {lab: i for i, lab in enumerate(labels)}
        true_idx = np.full((h, w), -1, dtype=np.int32)
        for j, lab in enumerate(observation.labels):
            ch = idx_of.get(lab)
            if ch is not None:
                true_idx[observation.class_map == j] = ch
        base = eps / (k - 1) if k > 1 else 0.0
        hit = 1.0 - eps if k > 1 else 1.0
        maps = np.full((k, h, w), base)
        known = true_idx >= 0
        for ch in range(k):
            maps[ch][known & (true_idx == ch)] = hit
        # pixel's true class not among the requested labels: no signal
        maps[:, ~known] = 1.0 / k
        return ClassProbabilityStack(labels, maps)

    # -- scene risk ----------------------------------------------------------

    def _risk_for(self, label: str) -> float:
        fixture = dict(self.config.risk_fixture)
        if label in fixture:
            return fixture[label]
        u = _seeded_uniform(f"risk:{self.config.seed}:{label}")
        return round(0.1 + 0.8 * u, 4)

    def infer_scene_risks(
        self,
        observation: Observation,
        modality: RobotModality,
        prior_table: CostTable,
    ) -> CostTable:
        visible = sorted(
            lab
            for lab in observation.label_fractions()
            if lab not in DEFAULT_BACKGROUND_LABELS
        )
        entries = {e.label: e for e in prior_table.entries}
        for lab in visible:
            if lab not in entries:
                entries[lab] = RiskEntry(lab, self._risk_for(lab), MOCK_CURIOSITY)
        ordered = tuple(entries[lab] for lab in sorted(entries))
        if ordered:
            desc = f"{len(visible)} classes in view"
        else:
            desc = "no content classes in view"
        return CostTable(ordered, desc[:40], "fresh_query")

    # -- goal point ------------------------------------------------------------

    def detect_goal_point(
        self, observation: Observation, goal_text: str
    ) -> GoalPointResponse:
        target = goal_text.strip().lower()
        try:
            j = observation.labels.index(target)
        except ValueError:
            return GoalPointResponse(found=False)
        rows, cols = np.nonzero(observation.class_map == j)
        if rows.size == 0:
            return GoalPointResponse(found=False)
        h, w = observation.class_map.shape
        # pixel centers sit at +0.5, so a symmetric blob lands exactly mid-image
        return GoalPointResponse(
            u_norm=(float(cols.mean()) + 0.5) / w,
            v_norm=(float(rows.mean()) + 0.5) / h,
            found=True,
        )

    # -- trajectory selection -----------------------------------------------

    def set_selection_context(
        self,
        grid: OccupancyGrid,
        behavior: BehaviorSpec,
        scene_truth: object | None = None,
    ) -> None:
        self._selection_ctx = MockSelectionContext(grid, behavior, scene_truth)

    def select_path(self, request: SelectionRequest) -> SelectionResponse:
        ctx = self._selection_ctx
        if ctx is None or request.proposals is None:
            return SelectionResponse(
                "Reason: no selection context\nColor: none", self.config.selection_delay_s
            )
        result = mock_select(
            request.proposals, ctx.grid, ctx.behavior, ctx.scene_truth
        )
        color = LABEL_TO_COLOR.get(result.choice, "none")
        text = f"Reason: {result.reason}\nColor: {color}"
        return SelectionResponse(text, self.config.selection_delay_s)
