"""Service configuration: JSON file plus ``PROTOREC_*`` environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .ann import DEFAULT_LEAF_CAPACITY, DEFAULT_MAX_NODES, DEFAULT_N_TREES
from .metadata import DEFAULT_RERANK_GAP

ENV_PREFIX = "PROTOREC_"


@dataclass
class ServiceConfig:
    dim: int = 64
    metric: str = "euclidean"
    l2: bool = True
    certain_threshold: float = 0.6
    unknown_threshold: float = 1.2
    k: int = 10
    rerank: bool = False
    rerank_gap: float = DEFAULT_RERANK_GAP
    n_trees: int = DEFAULT_N_TREES
    max_nodes: int = DEFAULT_MAX_NODES
    leaf_capacity: int = DEFAULT_LEAF_CAPACITY
    seed: int = 0
    log_path: str = "mirlog.v1"
    snapshot_dir: str = "snapshots"
    taxonomy_path: str | None = None  # None -> packaged fixture
    messages_path: str | None = None  # None -> packaged catalog
    embedding_source: str = "external"
    admin_token: str | None = None
    token_ttl_hours: float = 24.0
    max_image_bytes: int = 8 * 1024 * 1024
    rebuild_on_start: bool = True

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ServiceConfig":
        values: dict = {}
        if path is not None:
            values.update(json.loads(Path(path).read_text(encoding="utf-8")))
        config = cls(**values)
        config._apply_env()
        return config

    def _apply_env(self) -> None:
        for f in fields(self):
            raw = os.environ.get(ENV_PREFIX + f.name.upper())
            if raw is None:
                continue
            current = getattr(self, f.name)
            if isinstance(current, bool) or f.type == "bool":
                value: object = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int) and not isinstance(current, bool):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = raw
            setattr(self, f.name, value)
