"""Visuosemantic cache: novelty gating over embeddings with k-NN aggregation.

A frame's embedding is compared against the stored history; if the nearest
stored embedding is within the novelty threshold the frame is redundant and
its cost table is synthesized from the neighbors instead of a fresh provider
round-trip. Misses are the caller's cue to query and insert.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .core import (
    SCHEMA_VERSION,
    CostTable,
    Embedding,
    RiskEntry,
    ValidationError,
    cost_table_from_obj,
    cost_table_to_obj,
    embedding_from_b64,
    embedding_to_b64,
    normalize_embedding,
)


@dataclass(frozen=True)
class CacheEntry:
    embedding: Embedding
    table: CostTable
    insert_index: int

    def __post_init__(self) -> None:
        if self.table.source != "fresh_query":
            raise ValidationError("cache entries must hold fresh_query tables")


@dataclass(frozen=True)
class CacheConfig:
    """k neighbors, novelty threshold gamma in [0,2], optional FIFO capacity."""

    k: int = 5
    gamma: float = 0.55
    capacity: int | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if not 0.0 <= self.gamma <= 2.0:
            raise ValidationError("gamma must lie in [0, 2]")
        if self.capacity is not None and self.capacity < 1:
            raise ValidationError("capacity must be >= 1 when set")


@dataclass(frozen=True)
class CacheDecision:
    kind: str  # "hit" | "miss"
    d_min: float
    neighbors: tuple[CacheEntry, ...]
    aggregated: CostTable | None

    @property
    def is_hit(self) -> bool:
        return self.kind == "hit"


def aggregate_tables(neighbors: list[CostTable]) -> CostTable:
    """Per-class mean over only the tables that contain each class.

    Output covers the union of classes. Curiosity likewise averages over
    the tables where it is present; absent everywhere -> None. The scene
    description is the first (nearest) neighbor's.
    """
    if not neighbors:
        raise ValidationError("aggregate_tables needs at least one neighbor")

    def exact_mean(vals: list[float]) -> float:
        # all-equal short circuit keeps aggregation exactly idempotent;
        # fsum makes the general case independent of neighbor order
        if min(vals) == max(vals):
            return vals[0]
        return math.fsum(vals) / len(vals)

    risks: dict[str, list[float]] = {}
    curios: dict[str, list[float]] = {}
    for t in neighbors:
        for e in t.entries:
            risks.setdefault(e.label, []).append(e.risk)
            if e.curiosity is not None:
                curios.setdefault(e.label, []).append(e.curiosity)
    entries = []
    for label in sorted(risks):
        cur = exact_mean(curios[label]) if label in curios else None
        entries.append(RiskEntry(label, exact_mean(risks[label]), cur))
    return CostTable(tuple(entries), neighbors[0].scene_description, "cache_aggregate")


class NoveltyCache:
    """Thread-safe embedding store with novelty gating and usage counters.

    Lookups are exact k-NN by linear scan (store stays small in-session).
    Counters: every check_novelty call is a frame; misses are scene queries
    (the caller is expected to follow up with insert_entry), hits are cache
    hits. Rates are computed against a caller-supplied clock span.
    """

    def __init__(self, config: CacheConfig | None = None):
        self.config = config or CacheConfig()
        self._entries: list[CacheEntry] = []
        self._next_index = 0
        self._lock = threading.Lock()
        self.frames = 0
        self.scene_queries = 0
        self.cache_hits = 0

    def __len__(self) -> int:
        return len(self._entries)

    def knn_lookup(self, query: Embedding, k: int) -> list[tuple[CacheEntry, float]]:
        """min(k, N) entries sorted by ascending distance, ties by insert order."""
        with self._lock:
            entries = list(self._entries)
        if not entries:
            return []
        mat = np.stack([e.embedding.values for e in entries])
        d = np.linalg.norm(mat - query.values, axis=1)
        order = sorted(range(len(entries)), key=lambda i: (d[i], entries[i].insert_index))
        return [(entries[i], float(d[i])) for i in order[:k]]

    def check_novelty(self, query: Embedding) -> CacheDecision:
        """Gate a frame: hit iff the nearest stored embedding is within gamma."""
        found = self.knn_lookup(query, self.config.k)
        with self._lock:
            self.frames += 1
            if not found:
                self.scene_queries += 1
                return CacheDecision("miss", math.inf, (), None)
            d_min = found[0][1]
            if d_min <= self.config.gamma:
                self.cache_hits += 1
                hit = True
            else:
                self.scene_queries += 1
                hit = False
        if not hit:
            return CacheDecision("miss", d_min, tuple(e for e, _ in found), None)
        agg = aggregate_tables([e.table for e, _ in found])
        return CacheDecision("hit", d_min, tuple(e for e, _ in found), agg)

    def insert_entry(self, embedding: Embedding, table: CostTable) -> int:
        """Append a fresh observation; renormalizes the embedding. Returns N."""
        if table.source != "fresh_query":
            raise ValidationError(f"refusing to insert table with source {table.source!r}")
        emb = normalize_embedding(embedding.values)
        with self._lock:
            self._entries.append(CacheEntry(emb, table, self._next_index))
            self._next_index += 1
            cap = self.config.capacity
            if cap is not None and len(self._entries) > cap:
                # FIFO: drop the lowest insert_index
                self._entries.sort(key=lambda e: e.insert_index)
                self._entries = self._entries[len(self._entries) - cap :]
            return len(self._entries)

    def cache_stats(self, elapsed_s: float | None = None) -> dict:
        with self._lock:
            out = {
                "frames": self.frames,
                "scene_queries": self.scene_queries,
                "cache_hits": self.cache_hits,
                "cache_rate_per_s": 0.0,
                "query_rate_per_s": 0.0,
            }
        if elapsed_s and elapsed_s > 0:
            out["cache_rate_per_s"] = out["cache_hits"] / elapsed_s
            out["query_rate_per_s"] = out["scene_queries"] / elapsed_s
        return out

    def reset_stats(self) -> None:
        with self._lock:
            self.frames = 0
            self.scene_queries = 0
            self.cache_hits = 0

    # -- snapshot persistence ------------------------------------------------

    def snapshot_text(self) -> str:
        """Canonical structured-text form of the store (for replay)."""
        with self._lock:
            entries = sorted(self._entries, key=lambda e: e.insert_index)
            obj = {
                "schema_version": SCHEMA_VERSION,
                "config": {
                    "k": self.config.k,
                    "gamma": self.config.gamma,
                    "capacity": self.config.capacity,
                },
                "entries": [
                    {
                        "insert_index": e.insert_index,
                        "embedding_b64": embedding_to_b64(e.embedding),
                        "table": cost_table_to_obj(e.table),
                    }
                    for e in entries
                ],
            }
        return json.dumps(obj, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_snapshot_text(cls, text: str) -> "NoveltyCache":
        obj = json.loads(text)
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(f"unsupported snapshot version {obj.get('schema_version')!r}")
        cfg = obj["config"]
        cache = cls(CacheConfig(cfg["k"], cfg["gamma"], cfg.get("capacity")))
        for item in obj["entries"]:
            emb = embedding_from_b64(item["embedding_b64"])
            table = cost_table_from_obj(item["table"])
            cache._entries.append(CacheEntry(emb, table, int(item["insert_index"])))
        if cache._entries:
            cache._next_index = max(e.insert_index for e in cache._entries) + 1
        return cache

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.snapshot_text())

    @classmethod
    def load(cls, path: str) -> "NoveltyCache":
        with open(path, encoding="utf-8") as f:
            return cls.from_snapshot_text(f.read())
