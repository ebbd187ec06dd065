"""
Module: index.py

Role of this file
-----------------
Index coordinator: batch indexing of sealed segments.

- Every segment_sealed announcement of a collection whose index kind is not
  FLAT becomes one IndexTask per vector field. create_index on an existing
  collection queues tasks for all of its live sealed segments.
- A task goes to the least busy index node. Builds take virtual time
  (rows * index_ms_per_row); the index is built and announced
  (index_built) once that time is reached.
- A failed build is retried on any node up to `index_task_retries` times,
  then marked failed; the segment stays searchable through exact search.
- Index nodes idle for `index_node_idle_ms` are released; one is
  provisioned again when work arrives and none is left.

Metastore keys
--------------
    index_task/{task_id}     IndexTask.to_dict()

Who uses this file
------------------
- cluster.py pumps it and asks for the next completion time in settle().
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional

from loguru import logger

from logvec.algorithms.segment_index import IndexParams
from logvec.backbone.broker import LogBroker
from logvec.config import CoordinationSettings
from logvec.coordinators.data import DataCoordinator
from logvec.models.errors import LogvecError
from logvec.models.log_entry import LogEntry
from logvec.models.segment import SegmentDescriptor
from logvec.models.timestamps import Tso
from logvec.nodes.index_node import IndexNode, IndexTask
from logvec.storage.metastore import MetaStore
from logvec.utils.clock import Clock
from logvec.utils.constants import COORD_CHANNEL, DDL_CHANNEL


def task_key(task_id: int) -> str:
    return f"index_task/{task_id}"


class IndexCoordinator:
    def __init__(
        self,
        meta: MetaStore,
        broker: LogBroker,
        tso: Tso,
        data_coord: DataCoordinator,
        clock: Clock,
        node_factory: Callable[[str], IndexNode],
        settings: Optional[CoordinationSettings] = None,
        ms_per_row: float = 0.05,
    ) -> None:
        self.meta = meta
        self.broker = broker
        self.tso = tso
        self.data_coord = data_coord
        self.clock = clock
        self.node_factory = node_factory
        self.settings = settings or CoordinationSettings()
        self.ms_per_row = ms_per_row
        self.nodes: Dict[str, IndexNode] = {}
        self.tasks: Dict[int, IndexTask] = {}
        for value in meta.list("index_task/").values():
            task = IndexTask.from_dict(value)
            if task.state == "running":
                # the build did not finish before the restart
                task.state, task.node, task.due_ms = "pending", None, None
            self.tasks[task.task_id] = task
        self._coord = broker.subscribe(COORD_CHANNEL, broker.end_offset(COORD_CHANNEL))
        self._ddl = broker.subscribe(DDL_CHANNEL, broker.end_offset(DDL_CHANNEL))

    # ------------------------------------------------------------------
    # Nodes
    # ------------------------------------------------------------------

    def add_node(self, node: IndexNode) -> None:
        self.nodes[node.node_id] = node
        logger.info(f"index node {node.node_id} joined ({len(self.nodes)} nodes)")

    def remove_node(self, node_id: str) -> None:
        """Drop a node; its running tasks go back to the queue."""
        self.nodes.pop(node_id, None)
        for task in self.tasks.values():
            if task.state == "running" and task.node == node_id:
                task.state, task.node, task.due_ms = "pending", None, None
                self._save(task)

    def _provision(self) -> IndexNode:
        node = self.node_factory(f"index-{self.meta.next_id('index_node')}")
        node.busy_until_ms = node.last_active_ms = self.clock.now_ms()
        self.add_node(node)
        return node

    def reap_idle(self) -> List[str]:
        now = self.clock.now_ms()
        reaped = []
        for node_id, node in list(self.nodes.items()):
            if node.running == 0 and now - node.last_active_ms >= self.settings.index_node_idle_ms:
                del self.nodes[node_id]
                reaped.append(node_id)
                logger.info(f"index node {node_id} released after {now - node.last_active_ms} ms idle")
        return reaped

    # ------------------------------------------------------------------
    # Tasks
    # ------------------------------------------------------------------

    def _save(self, task: IndexTask) -> None:
        self.meta.put(task_key(task.task_id), task.to_dict())

    def submit(self, desc: SegmentDescriptor, params: Dict) -> List[IndexTask]:
        collection = self.data_coord.collections.get(desc.collection_id)
        if collection is None or IndexParams.from_dict(params).kind == "flat":
            return []
        out: List[IndexTask] = []
        for f in collection.schema.vector_fields:
            task = IndexTask(
                task_id=self.meta.next_id("index_task"),
                collection_id=desc.collection_id,
                segment_id=desc.segment_id,
                field_name=f.name,
                params=dict(params),
                rows=desc.row_count,
                submitted_ms=self.clock.now_ms(),
            )
            self.tasks[task.task_id] = task
            self._save(task)
            out.append(task)
        return out

    def pending(self) -> List[IndexTask]:
        return [t for _, t in sorted(self.tasks.items()) if t.state == "pending"]

    def running(self) -> List[IndexTask]:
        return [t for _, t in sorted(self.tasks.items()) if t.state == "running"]

    def in_flight(self) -> bool:
        return any(t.state in ("pending", "running") for t in self.tasks.values())

    def next_completion_ms(self) -> Optional[int]:
        due = [t.due_ms for t in self.tasks.values() if t.state == "running" and t.due_ms is not None]
        return min(due) if due else None

    def completed(self) -> List[IndexTask]:
        return sorted((t for t in self.tasks.values() if t.state == "done"), key=lambda t: t.finished_ms or 0)

    def _dispatch(self) -> int:
        queue = self.pending()
        if not queue:
            return 0
        if not self.nodes:
            self._provision()
        now = self.clock.now_ms()
        for task in queue:
            node = min(self.nodes.values(), key=lambda n: (max(n.busy_until_ms, now), n.node_id))
            start = max(node.busy_until_ms, now)
            node.busy_until_ms = start + int(round(task.rows * self.ms_per_row))
            node.running += 1
            node.last_active_ms = now
            task.state, task.node = "running", node.node_id
            task.started_ms, task.due_ms = start, node.busy_until_ms
            self._save(task)
        return len(queue)

    def _complete_due(self) -> int:
        now = self.clock.now_ms()
        done = 0
        for task in self.running():
            if task.due_ms is None or task.due_ms > now:
                continue
            node = self.nodes.get(task.node or "")
            if node is None:
                task.state, task.node, task.due_ms = "pending", None, None
                self._save(task)
                continue
            node.running -= 1
            node.last_active_ms = now
            self._finish(task, node)
            done += 1
        return done

    def _finish(self, task: IndexTask, node: IndexNode) -> None:
        desc = self.data_coord.get(task.segment_id)
        collection = self.data_coord.collections.get(task.collection_id)
        if desc is None or collection is None or not desc.is_live:
            task.state, task.finished_ms, task.error = "done", self.clock.now_ms(), "segment gone"
            self._save(task)
            return
        try:
            path = node.build(task, collection.schema, desc.binlog_paths)
        except (LogvecError, OSError) as exc:
            task.attempts += 1
            task.error = str(exc)
            if task.attempts >= self.settings.index_task_retries:
                task.state = "failed"
                logger.error(f"index task {task.task_id} failed after {task.attempts} attempts: {exc}")
            else:
                task.state, task.node, task.due_ms = "pending", None, None
                logger.warning(f"index task {task.task_id} failed (attempt {task.attempts}), retrying")
            self._save(task)
            return
        task.state, task.path, task.finished_ms = "done", path, self.clock.now_ms()
        self._save(task)
        self.data_coord.add_index_path(task.segment_id, task.field_name, path)
        self.broker.publish_stamped(
            COORD_CHANNEL,
            self.tso,
            lambda ts: LogEntry.coord(
                ts,
                "index_built",
                collection=task.collection_id,
                segment=task.segment_id,
                field=task.field_name,
                path=path,
            ),
        )
        logger.info(f"index of segment {task.segment_id}/{task.field_name} built on {node.node_id}")

    # ------------------------------------------------------------------
    # Pumping
    # ------------------------------------------------------------------

    def pump(self) -> int:
        handled = 0
        for _, entry in self._coord.poll():
            handled += 1
            if entry.message_type != "segment_sealed":
                continue
            desc = SegmentDescriptor.from_dict(entry.payload["segment"])
            collection = self.data_coord.collections.get(desc.collection_id)
            if collection is not None and collection.index_params:
                self.submit(desc, collection.index_params)
        for _, entry in self._ddl.poll():
            handled += 1
            if entry.message_type != "create_index":
                continue
            cid = int(entry.payload["collection_id"])
            for desc in self.data_coord.live_sealed(cid):
                self.submit(desc, entry.payload["params"])
        handled += self._complete_due()
        self.reap_idle()
        handled += self._dispatch()
        return handled
