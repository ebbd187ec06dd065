"""
Module: object_store.py

Role of this file
-----------------
Local-filesystem object store with the put/get/list/delete surface of a
cloud object store. Keys are '/'-separated strings mapped to files under
`<root>/objects/`.

put() is atomic: the bytes go to a temp file that is then renamed over the
key, so concurrent readers see either the old object or the new one. Writes
to the same key are last-writer-wins.

Key layout
----------
    collection/{cid}/segment/{sid}/binlog/{field_id}
    collection/{cid}/segment/{sid}/delta
    collection/{cid}/segment/{sid}/index/{field_id}
    collection/{cid}/shard/{shard}/map/run-{n}
    collection/{cid}/shard/{shard}/map/manifest
    collection/{cid}/checkpoint/checkpoint-{ts}.json
    collection/{cid}/bucket/{name}

Who uses this file
------------------
data node (binlogs, deltas), index node (index objects), loggers (sorted
runs), the data coordinator (checkpoints), query nodes (loads) and the
bucket index (range reads of aligned blocks).
"""

from __future__ import annotations

import os
import threading
import uuid
from pathlib import Path
from typing import List

from loguru import logger

from logvec.models.errors import ObjectNotFoundError, StorageError


def segment_key(collection_id: int, segment_id: int, kind: str) -> str:
    return f"collection/{collection_id}/segment/{segment_id}/{kind}"


def segment_prefix(collection_id: int, segment_id: int) -> str:
    return f"collection/{collection_id}/segment/{segment_id}/"


class ObjectStore:
    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root) / "objects"
        self.root.mkdir(parents=True, exist_ok=True)
        self.bytes_read = 0
        self.bytes_written = 0
        self._stats_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        if not key or key.startswith("/") or ".." in key.split("/") or key.endswith("/"):
            raise ValueError(f"invalid object key: {key!r}")
        return self.root / key

    # ------------------------------------------------------------------
    # Writes
    # ------------------------------------------------------------------

    def put(self, key: str, data: bytes) -> None:
        target = self._path(key)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(f".{target.name}.{uuid.uuid4().hex}.tmp")
        try:
            with tmp.open("wb") as f:
                f.write(data)
            tmp.replace(target)
        except OSError as exc:
            raise StorageError(f"put {key} failed: {exc}") from exc
        finally:
            if tmp.exists():
                try:
                    tmp.unlink()
                except OSError:
                    pass
        with self._stats_lock:
            self.bytes_written += len(data)
        logger.debug(f"object store: put {key} ({len(data)} bytes)")

    def delete(self, key: str) -> bool:
        path = self._path(key)
        try:
            path.unlink()
        except FileNotFoundError:
            return False
        return True

    def delete_prefix(self, prefix: str) -> List[str]:
        keys = self.list(prefix)
        for key in keys:
            self.delete(key)
        return keys

    # ------------------------------------------------------------------
    # Reads
    # ------------------------------------------------------------------

    def exists(self, key: str) -> bool:
        return self._path(key).is_file()

    def get(self, key: str) -> bytes:
        path = self._path(key)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise ObjectNotFoundError(key) from None
        with self._stats_lock:
            self.bytes_read += len(data)
        return data

    def read_range(self, key: str, offset: int, length: int) -> bytes:
        path = self._path(key)
        try:
            with path.open("rb") as f:
                f.seek(offset)
                data = f.read(length)
        except FileNotFoundError:
            raise ObjectNotFoundError(key) from None
        with self._stats_lock:
            self.bytes_read += len(data)
        return data

    def size(self, key: str) -> int:
        try:
            return self._path(key).stat().st_size
        except FileNotFoundError:
            raise ObjectNotFoundError(key) from None

    def list(self, prefix: str = "") -> List[str]:
        """Sorted keys starting with `prefix`. Temp files are never listed."""
        base = self.root
        keys: List[str] = []
        for path in base.rglob("*"):
            if not path.is_file() or path.name.startswith("."):
                continue
            key = path.relative_to(base).as_posix()
            if key.startswith(prefix):
                keys.append(key)
        return sorted(keys)

    def reset_counters(self) -> None:
        with self._stats_lock:
            self.bytes_read = 0
            self.bytes_written = 0
