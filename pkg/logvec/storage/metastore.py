"""
Module: metastore.py

Role of this file
-----------------
Embedded key-value metadata store for the coordinators (collections,
segment descriptors, index tasks, id counters, GC floors).

Every mutation is serialized by one lock and appended to `meta/wal.jsonl`
before it is applied in memory, so an acknowledged write survives a restart.
compact() folds the write-ahead records into `meta/snapshot.json`.
Without a root directory the store lives in memory only.

Values must be JSON-compatible.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Dict, Optional

from loguru import logger

from logvec.models.errors import StorageError
from logvec.storage.json_io import load_json, save_json


class MetaStore:
    def __init__(self, root: Optional[str | os.PathLike] = None) -> None:
        self._data: Dict[str, Any] = {}
        self._lock = threading.RLock()
        self._dir = None if root is None else Path(root) / "meta"
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            self._recover()

    @property
    def _wal_path(self) -> Path:
        assert self._dir is not None
        return self._dir / "wal.jsonl"

    @property
    def _snapshot_path(self) -> Path:
        assert self._dir is not None
        return self._dir / "snapshot.json"

    def _recover(self) -> None:
        if self._snapshot_path.exists():
            self._data = dict(load_json(self._snapshot_path).get("data", {}))
        replayed = 0
        if self._wal_path.exists():
            with self._wal_path.open("r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError:
                        logger.warning("metastore: ignoring torn record at end of wal")
                        break
                    self._apply(record)
                    replayed += 1
        if self._data:
            logger.debug(f"metastore: recovered {len(self._data)} keys ({replayed} wal records)")

    def _apply(self, record: Dict[str, Any]) -> None:
        if record["op"] == "put":
            self._data[record["key"]] = record["value"]
        elif record["op"] == "delete":
            self._data.pop(record["key"], None)

    def _log(self, record: Dict[str, Any]) -> None:
        if self._dir is None:
            return
        line = json.dumps(record, sort_keys=True, separators=(",", ":"))
        try:
            with self._wal_path.open("a", encoding="utf-8") as f:
                f.write(line + "\n")
                f.flush()
        except OSError as exc:
            raise StorageError(f"metastore write failed: {exc}") from exc

    # ------------------------------------------------------------------
    # Key-value operations
    # ------------------------------------------------------------------

    def put(self, key: str, value: Any) -> None:
        # round-trip through JSON so callers can't keep references into the store
        value = json.loads(json.dumps(value))
        with self._lock:
            record = {"op": "put", "key": key, "value": value}
            self._log(record)
            self._apply(record)

    def get(self, key: str, default: Any = None) -> Any:
        with self._lock:
            if key not in self._data:
                return default
            return json.loads(json.dumps(self._data[key]))

    def delete(self, key: str) -> bool:
        with self._lock:
            if key not in self._data:
                return False
            record = {"op": "delete", "key": key}
            self._log(record)
            self._apply(record)
            return True

    def list(self, prefix: str = "") -> Dict[str, Any]:
        with self._lock:
            return {k: json.loads(json.dumps(v)) for k, v in sorted(self._data.items()) if k.startswith(prefix)}

    def next_id(self, counter: str = "id") -> int:
        """Monotonic id allocator, starting at 1, durable like any other key."""
        with self._lock:
            key = f"counter/{counter}"
            value = int(self._data.get(key, 0)) + 1
            self.put(key, value)
            return value

    def compact(self) -> None:
        if self._dir is None:
            return
        with self._lock:
            save_json(self._snapshot_path, {"data": self._data})
            self._wal_path.write_text("", encoding="utf-8")
            logger.debug(f"metastore: compacted {len(self._data)} keys")
