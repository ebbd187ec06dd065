"""
Module: constants.py

Role of this file
-----------------
Global constants shared by the whole engine. Values here do not belong to a
single subsystem (backbone, storage, index engine, nodes): they are the wire
and on-disk formats and the bit layout of timestamps.

What lives here
---------------
- hybrid logical clock bit widths
- magic numbers and versions of every binary file format
- reserved field ids for system columns
- well-known channel names and environment variables

Thresholds and tunables (seal sizes, tick intervals, autoscale band) are NOT
here; they are in models/rules.py.
"""

# Hybrid logical clock packing: physical milliseconds in the high bits,
# logical counter in the low 18 bits.
LOGICAL_BITS = 18
PHYSICAL_BITS = 46
LOGICAL_MASK = (1 << LOGICAL_BITS) - 1
MAX_PHYSICAL_MS = (1 << PHYSICAL_BITS) - 1

# Binary formats (all little-endian)
BINLOG_MAGIC = b"MBL1"
BINLOG_VERSION = 1
SORTED_RUN_MAGIC = b"MSR1"
INDEX_MAGIC = b"MIX1"
INDEX_VERSION = 1
BUCKET_MAGIC = b"MBK1"
DELTA_MAGIC = b"MDL1"

# Reserved field ids. User fields start at 100.
LSN_FIELD_ID = 1
FIRST_USER_FIELD_ID = 100

# Sorted-run segment id used to mark a deleted pk
TOMBSTONE_SEGMENT = (1 << 64) - 1

# Channels
DDL_CHANNEL = "ddl"
COORD_CHANNEL = "coord"
WAL_CHANNEL_PREFIX = "wal"

# Environment
ROOT_ENV_VAR = "LOGVEC_ROOT"
