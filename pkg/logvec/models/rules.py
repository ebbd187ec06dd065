"""
Module: rules.py

Role of this file
-----------------
Thresholds and policies of the engine, in one place:
- when a growing segment is sealed,
- when small sealed segments are merged,
- when an index is rebuilt because of deletes,
- when a query may run under delta consistency,
- how the query coordinator scales and balances query nodes.

No computation beyond simple decisions happens here. The values below are
the defaults of config.EngineConfig; the helpers take the configured values
as arguments so tests can exercise them directly.

Who uses this file
------------------
- config.py: every default comes from a constant defined here.
- nodes/segment_buffer.py, nodes/wal_logger.py: seal decisions.
- nodes/query_node.py: consistency guard, rebuild decision.
- coordinators/: merge, rebalance and autoscale policies.
"""

from __future__ import annotations

import math
from typing import Dict, Iterable, List, Optional

from logvec.models.segment import SealTrigger, SegmentDescriptor
from logvec.models.timestamps import HlcTimestamp, staleness_ms


# -----------------------------------------------------------
# 1. Segment lifecycle
# -----------------------------------------------------------

SEAL_ROWS: int = 4096
SEAL_BYTES: int = 1 << 20
SEAL_INACTIVITY_MS: int = 10_000
SLICE_ROWS: int = 256
TEMP_INDEX_NLIST: int = 16

# merge when this many sealed segments of a shard are each below the fraction
MERGE_MIN_SEGMENTS: int = 4
MERGE_SMALL_FRACTION: float = 0.25


# -----------------------------------------------------------
# 2. Log backbone and consistency
# -----------------------------------------------------------

TICK_INTERVAL_VIRTUAL_MS: int = 50
TICK_INTERVAL_WALL_MS: int = 100
DEFAULT_TAU_MS: float = 0.0
NODE_TIMEOUT_VIRTUAL_MS: int = 1000
NODE_TIMEOUT_WALL_MS: int = 5000
# granularity of a waiting proxy on the virtual clock
WAIT_STEP_MS: int = 5


# -----------------------------------------------------------
# 3. Index engine
# -----------------------------------------------------------

REBUILD_THRESHOLD: float = 0.2
FILTER_OVERSAMPLE: int = 4
KMEANS_MAX_ITERS: int = 25
KMEANS_TOL: float = 1e-4
DEFAULT_SEED: int = 42
IVF_NLIST: int = 64
IVF_NPROBE: int = 8
HNSW_M: int = 16
HNSW_EF_CONSTRUCTION: int = 200
HNSW_EF_SEARCH: int = 64

BUCKET_CAP_BYTES: int = 4096
BUCKET_ROW_ID_BYTES: int = 8
BUCKET_COUNT_BYTES: int = 2
CENTER_HNSW_MIN_CENTERS: int = 100_000


# -----------------------------------------------------------
# 4. Coordination
# -----------------------------------------------------------

HEARTBEAT_INTERVAL_MS: int = 500
HEARTBEAT_MISSES: int = 3
REBALANCE_RATIO: float = 1.5
AUTOSCALE_LOW_MS: float = 100.0
AUTOSCALE_HIGH_MS: float = 150.0
AUTOSCALE_MAX_NODES: int = 16
AUTOSCALE_WINDOW: int = 20
INDEX_TASK_RETRIES: int = 3
INDEX_NODE_IDLE_MS: int = 30_000

CHECKPOINT_EVERY_ENTRIES: int = 1000
CHECKPOINT_EVERY_MS: int = 10_000


# -----------------------------------------------------------
# 5. Virtual cost model (simulator only)
# -----------------------------------------------------------

QUERY_BASE_COST_MS: float = 0.2
QUERY_COST_MS_PER_ROW: float = 0.002
INDEX_BUILD_MS_PER_ROW: float = 0.05


# -----------------------------------------------------------
# 6. Policy helpers
# -----------------------------------------------------------

def size_seal_trigger(row_count: int, byte_size: int, seal_rows: int, seal_bytes: int) -> Optional[SealTrigger]:
    """SIZE once either threshold is reached (whichever first)."""
    if row_count >= seal_rows or byte_size >= seal_bytes:
        return SealTrigger.SIZE
    return None


def is_inactive(last_insert: Optional[HlcTimestamp], tick: HlcTimestamp, inactivity_ms: int) -> bool:
    """True if no insert reached the segment for `inactivity_ms` before `tick`."""
    if last_insert is None:
        return False
    return tick.physical - last_insert.physical >= inactivity_ms


def guard_allows(issue_ts: HlcTimestamp, consumed: Optional[HlcTimestamp], tau_ms: float) -> bool:
    """Delta-consistency guard: proceed iff issue minus consumed time is below tau (equality waits)."""
    if math.isinf(tau_ms):
        return True
    if consumed is None:
        return False
    return staleness_ms(issue_ts, consumed) < tau_ms


def should_rebuild_fraction(deleted_count: int, row_count: int, threshold: float = REBUILD_THRESHOLD) -> bool:
    if row_count <= 0 or deleted_count <= 0:
        return False
    return deleted_count / row_count >= threshold


def select_merge_candidates(
    descriptors: Iterable[SegmentDescriptor],
    seal_rows: int,
    min_segments: int = MERGE_MIN_SEGMENTS,
    small_fraction: float = MERGE_SMALL_FRACTION,
) -> Dict[int, List[SegmentDescriptor]]:
    """
    shard_id -> sealed live segments to merge. A shard qualifies when at least
    `min_segments` of its sealed segments each hold fewer than
    small_fraction * seal_rows rows.
    """
    limit = small_fraction * seal_rows
    per_shard: Dict[int, List[SegmentDescriptor]] = {}
    for d in descriptors:
        if d.is_sealed and d.is_live and d.row_count < limit:
            per_shard.setdefault(d.shard_id, []).append(d)
    return {
        shard: sorted(ds, key=lambda d: d.segment_id)
        for shard, ds in sorted(per_shard.items())
        if len(ds) >= min_segments
    }


def autoscale_target(
    mean_latency_ms: float,
    nodes: int,
    low_ms: float = AUTOSCALE_LOW_MS,
    high_ms: float = AUTOSCALE_HIGH_MS,
    max_nodes: int = AUTOSCALE_MAX_NODES,
) -> int:
    """Halve below `low_ms` (min 1), double above `high_ms` (max cap)."""
    if mean_latency_ms < low_ms:
        return max(1, nodes // 2)
    if mean_latency_ms > high_ms:
        return min(max_nodes, max(1, nodes * 2))
    return nodes


def is_balanced(hosted_rows: Dict[str, int], ratio: float = REBALANCE_RATIO) -> bool:
    """max/min hosted-row ratio within `ratio`. An empty node counts as 0 rows."""
    if len(hosted_rows) < 2:
        return True
    lo = min(hosted_rows.values())
    hi = max(hosted_rows.values())
    if hi == 0:
        return True
    if lo == 0:
        return False
    return hi / lo <= ratio
