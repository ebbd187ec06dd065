"""
Module: index_node.py

Role of this file
-----------------
Index nodes build the index of one vector field of one sealed segment per
task. A build reads only that field's binlog, builds the index with the
collection's parameters and writes it to

    collection/{cid}/segment/{sid}/index/{field_id}

The index coordinator decides what to build, where and when; an index node
is stateless apart from its virtual busy time.

Who uses this file
------------------
- coordinators/index.py dispatches IndexTasks to IndexNodes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

from loguru import logger

from logvec.algorithms.index_io import index_to_bytes
from logvec.algorithms.segment_index import IndexParams, SegmentIndex
from logvec.models.errors import IndexBuildError
from logvec.models.schema import Schema
from logvec.storage.binlog import read_field
from logvec.storage.object_store import ObjectStore, segment_key
from logvec.utils.retry import with_retries


def index_key(collection_id: int, segment_id: int, field_id: int) -> str:
    return segment_key(collection_id, segment_id, f"index/{field_id}")


@dataclass
class IndexTask:
    task_id: int
    collection_id: int
    segment_id: int
    field_name: str
    params: Dict[str, Any]
    rows: int
    state: str = "pending"  # pending | running | done | failed
    node: Optional[str] = None
    attempts: int = 0
    submitted_ms: int = 0
    started_ms: Optional[int] = None
    due_ms: Optional[int] = None
    finished_ms: Optional[int] = None
    path: Optional[str] = None
    error: Optional[str] = None

    @property
    def build_ms(self) -> Optional[int]:
        if self.started_ms is None or self.finished_ms is None:
            return None
        return self.finished_ms - self.started_ms

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "IndexTask":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class IndexNode:
    def __init__(self, node_id: str, store: ObjectStore, started_ms: int = 0) -> None:
        self.node_id = node_id
        self.store = store
        # virtual time until which the node is busy with assigned tasks
        self.busy_until_ms = started_ms
        self.last_active_ms = started_ms
        self.running = 0
        self.built = 0
        # failure injection: the next `fail_builds` builds raise
        self.fail_builds = 0

    def build(self, task: IndexTask, schema: Schema, binlog_paths: Dict[str, str]) -> str:
        if self.fail_builds > 0:
            self.fail_builds -= 1
            raise IndexBuildError(f"index node {self.node_id} failed building segment {task.segment_id}")
        field_def = schema.vector_field(task.field_name)
        path = binlog_paths.get(str(field_def.field_id))
        if path is None:
            raise IndexBuildError(f"segment {task.segment_id} has no binlog for {task.field_name!r}")
        vectors = read_field(self.store, path, field_def).values
        params = IndexParams.from_dict(task.params)
        index = SegmentIndex.build(params, vectors)
        key = index_key(task.collection_id, task.segment_id, field_def.field_id)
        payload = index_to_bytes(index)
        with_retries(lambda: self.store.put(key, payload), what=f"index {key}")
        self.built += 1
        logger.debug(f"index node {self.node_id}: {params.kind} over {len(vectors)} rows of segment {task.segment_id}")
        return key
