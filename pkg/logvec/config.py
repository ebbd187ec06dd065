"""
Module: config.py

Role of this file
-----------------
Typed engine configuration. Every tunable of the engine lives in one
EngineConfig object made of small sections; defaults come from
models/rules.py. Invalid values fail at load time with a
pydantic.ValidationError.

On disk the configuration is a JSON file (storage/json_io.py); every key is
optional, missing keys keep their default:

    {
      "segments": {"seal_rows": 4096, "seal_bytes": 1048576, "slice_rows": 256},
      "log": {"tick_interval_ms": 50},
      "consistency": {"default_tau_ms": 0.0},
      "index": {"kind": "hnsw", "m": 16, "ef_construction": 200, "ef_search": 64},
      "coordination": {"autoscale": true, "autoscale_low_ms": 100, "autoscale_high_ms": 150},
      "bucket": {"cap_bytes": 4096},
      "checkpoint": {"every_entries": 1000}
    }

Who uses this file
------------------
- cluster.py wires every component from one EngineConfig.
- cli/main.py loads it from --config or <root>/config.json.
"""

from __future__ import annotations

import math
import os
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from logvec.models import rules
from logvec.storage.json_io import load_json, save_json


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SegmentSettings(_Section):
    seal_rows: int = Field(rules.SEAL_ROWS, ge=1)
    seal_bytes: int = Field(rules.SEAL_BYTES, ge=1)
    inactivity_ms: int = Field(rules.SEAL_INACTIVITY_MS, ge=1)
    slice_rows: int = Field(rules.SLICE_ROWS, ge=1)
    temp_index_nlist: int = Field(rules.TEMP_INDEX_NLIST, ge=1)
    merge_min_segments: int = Field(rules.MERGE_MIN_SEGMENTS, ge=2)
    merge_small_fraction: float = Field(rules.MERGE_SMALL_FRACTION, gt=0, le=1)
    auto_merge: bool = True


class LogSettings(_Section):
    tick_interval_ms: int = Field(rules.TICK_INTERVAL_VIRTUAL_MS, gt=0)
    wall_tick_interval_ms: int = Field(rules.TICK_INTERVAL_WALL_MS, gt=0)


class ConsistencySettings(_Section):
    default_tau_ms: float = Field(rules.DEFAULT_TAU_MS, ge=0)
    node_timeout_ms: int = Field(rules.NODE_TIMEOUT_VIRTUAL_MS, gt=0)
    wall_node_timeout_ms: int = Field(rules.NODE_TIMEOUT_WALL_MS, gt=0)
    wait_step_ms: int = Field(rules.WAIT_STEP_MS, gt=0)


class IndexSettings(_Section):
    kind: Literal["flat", "ivf_flat", "hnsw"] = "flat"
    quantization: Literal["none", "sq8"] = "none"
    nlist: int = Field(rules.IVF_NLIST, ge=1)
    nprobe: int = Field(rules.IVF_NPROBE, ge=1)
    m: int = Field(rules.HNSW_M, ge=2)
    ef_construction: int = Field(rules.HNSW_EF_CONSTRUCTION, ge=1)
    ef_search: int = Field(rules.HNSW_EF_SEARCH, ge=1)
    kmeans_max_iters: int = Field(rules.KMEANS_MAX_ITERS, ge=1)
    seed: int = rules.DEFAULT_SEED
    rebuild_threshold: float = Field(rules.REBUILD_THRESHOLD, gt=0, le=1)
    filter_oversample: int = Field(rules.FILTER_OVERSAMPLE, ge=1)

    @model_validator(mode="after")
    def _check_probe(self) -> "IndexSettings":
        if self.nprobe > self.nlist:
            raise ValueError("nprobe must not exceed nlist")
        return self


class BucketSettings(_Section):
    cap_bytes: int = Field(rules.BUCKET_CAP_BYTES, ge=64)
    replicas: int = Field(1, ge=1)
    nprobe: int = Field(8, ge=1)
    center_hnsw_min_centers: int = Field(rules.CENTER_HNSW_MIN_CENTERS, ge=1)

    @model_validator(mode="after")
    def _check_block(self) -> "BucketSettings":
        # 4 KB or a multiple of it for large vectors
        if self.cap_bytes % 512 != 0:
            raise ValueError("bucket cap must be a multiple of 512 bytes")
        return self


class NodeSettings(_Section):
    loggers: int = Field(1, ge=1)
    data_nodes: int = Field(1, ge=1)
    index_nodes: int = Field(1, ge=0)
    query_nodes: int = Field(1, ge=1)
    ring_buckets: int = Field(64, ge=1)
    ring_vnodes: int = Field(16, ge=1)
    default_shards: int = Field(2, ge=1)
    batching: bool = True


class CoordinationSettings(_Section):
    heartbeat_interval_ms: int = Field(rules.HEARTBEAT_INTERVAL_MS, gt=0)
    heartbeat_misses: int = Field(rules.HEARTBEAT_MISSES, ge=1)
    rebalance_ratio: float = Field(rules.REBALANCE_RATIO, ge=1.0)
    autoscale: bool = False
    autoscale_low_ms: float = Field(rules.AUTOSCALE_LOW_MS, ge=0)
    autoscale_high_ms: float = Field(rules.AUTOSCALE_HIGH_MS, ge=0)
    autoscale_max_nodes: int = Field(rules.AUTOSCALE_MAX_NODES, ge=1)
    autoscale_window: int = Field(rules.AUTOSCALE_WINDOW, ge=1)
    index_task_retries: int = Field(rules.INDEX_TASK_RETRIES, ge=1)
    index_node_idle_ms: int = Field(rules.INDEX_NODE_IDLE_MS, gt=0)

    @model_validator(mode="after")
    def _check_band(self) -> "CoordinationSettings":
        if self.autoscale_low_ms > self.autoscale_high_ms:
            raise ValueError("autoscale low threshold must not exceed the high threshold")
        return self


class CheckpointSettings(_Section):
    every_entries: int = Field(rules.CHECKPOINT_EVERY_ENTRIES, ge=1)
    every_ms: int = Field(rules.CHECKPOINT_EVERY_MS, ge=1)
    expiration_ms: float = Field(math.inf, gt=0)


class CostSettings(_Section):
    query_base_ms: float = Field(rules.QUERY_BASE_COST_MS, ge=0)
    query_ms_per_row: float = Field(rules.QUERY_COST_MS_PER_ROW, ge=0)
    index_ms_per_row: float = Field(rules.INDEX_BUILD_MS_PER_ROW, ge=0)


class EngineConfig(_Section):
    segments: SegmentSettings = Field(default_factory=SegmentSettings)
    log: LogSettings = Field(default_factory=LogSettings)
    consistency: ConsistencySettings = Field(default_factory=ConsistencySettings)
    index: IndexSettings = Field(default_factory=IndexSettings)
    bucket: BucketSettings = Field(default_factory=BucketSettings)
    nodes: NodeSettings = Field(default_factory=NodeSettings)
    coordination: CoordinationSettings = Field(default_factory=CoordinationSettings)
    checkpoint: CheckpointSettings = Field(default_factory=CheckpointSettings)
    cost: CostSettings = Field(default_factory=CostSettings)


def load_config(path: str | os.PathLike) -> EngineConfig:
    return EngineConfig.model_validate(load_json(path))


def save_config(path: str | os.PathLike, config: EngineConfig) -> None:
    save_json(path, config.model_dump())
