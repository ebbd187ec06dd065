"""
Module: json_io.py

Role of this file
-----------------
JSON persistence helpers. Files are written atomically (temp file, then
replace) so a reader never sees a half-written document.

Two flavours:
- save_json / load_json: pretty-printed files on disk (config, manifests).
- canonical_json / parse_json: compact, sorted-key bytes, used wherever the
  bytes themselves must be stable (log payloads, checkpoints, object store).

Who uses this file
------------------
- config.py (load_config / save_config)
- storage/checkpoint.py, storage/metastore.py, backbone/codec.py
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, Mapping


def save_json(path: str | os.PathLike, data: Mapping[str, Any]) -> None:
    if data is None:
        raise ValueError("data must not be None.")
    if not isinstance(data, Mapping):
        raise TypeError("data must be a dict-like object (Mapping).")

    target = Path(path)
    if target.suffix.lower() != ".json":
        raise ValueError(f"Invalid file extension: '{target.suffix}'. Expected '.json'.")

    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)

    tmp_path = target.with_suffix(target.suffix + ".tmp")
    try:
        with tmp_path.open("w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write("\n")
        tmp_path.replace(target)
    finally:
        if tmp_path.exists():
            try:
                tmp_path.unlink()
            except OSError:
                pass


def load_json(path: str | os.PathLike) -> Dict[str, Any]:
    source = Path(path)

    if not source.exists():
        raise FileNotFoundError(f"JSON file not found: {source}")

    if source.suffix.lower() != ".json":
        raise ValueError(f"Invalid file extension: '{source.suffix}'. Expected '.json'.")

    try:
        with source.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid JSON in '{source}': {e}") from e

    if not isinstance(data, dict):
        raise ValueError("JSON root must be an object/dict.")
    return data


def canonical_json(data: Any) -> bytes:
    """Sorted keys, no whitespace, UTF-8. Equal data gives equal bytes."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def parse_json(raw: bytes) -> Any:
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"invalid JSON payload: {e}") from e
