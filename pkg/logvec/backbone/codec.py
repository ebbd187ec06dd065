"""
Wire format of a log channel file.

    file   := frame*
    frame  := u32 length | record          (length = len(record))
    record := u8 kind | u64 timestamp | payload (canonical JSON, UTF-8)

Little-endian throughout. A frame cut short by a crash at the end of the file
is dropped on read; anything malformed before the tail is an error.
"""

from __future__ import annotations

import struct
from typing import List, Tuple

from loguru import logger

from logvec.models.errors import BrokerStorageError
from logvec.models.log_entry import EntryKind, LogEntry
from logvec.models.timestamps import HlcTimestamp
from logvec.storage.json_io import canonical_json, parse_json

FRAME_HEADER = struct.Struct("<I")
RECORD_HEADER = struct.Struct("<BQ")


def encode_record(entry: LogEntry) -> bytes:
    return RECORD_HEADER.pack(int(entry.kind), entry.timestamp.encode()) + canonical_json(entry.payload)


def decode_record(record: bytes) -> LogEntry:
    if len(record) < RECORD_HEADER.size:
        raise BrokerStorageError(f"record too short: {len(record)} bytes")
    kind, ts = RECORD_HEADER.unpack_from(record, 0)
    payload = parse_json(record[RECORD_HEADER.size:]) if len(record) > RECORD_HEADER.size else {}
    return LogEntry(EntryKind(kind), HlcTimestamp.decode(ts), payload)


def encode_frame(entry: LogEntry) -> bytes:
    record = encode_record(entry)
    return FRAME_HEADER.pack(len(record)) + record


def decode_frames(data: bytes, source: str = "<memory>") -> Tuple[List[LogEntry], int]:
    """
    Decode every complete frame. Returns (entries, valid_length); bytes past
    valid_length are a torn tail and should be truncated by the caller.
    """
    entries: List[LogEntry] = []
    pos = 0
    end = len(data)
    while pos < end:
        if pos + FRAME_HEADER.size > end:
            break
        (length,) = FRAME_HEADER.unpack_from(data, pos)
        if pos + FRAME_HEADER.size + length > end:
            break
        start = pos + FRAME_HEADER.size
        try:
            entries.append(decode_record(data[start:start + length]))
        except (ValueError, BrokerStorageError) as exc:
            raise BrokerStorageError(f"corrupt record at byte {pos} of {source}: {exc}") from exc
        pos = start + length
    if pos < end:
        logger.warning(f"dropping torn tail of {end - pos} bytes in {source}")
    return entries, pos
