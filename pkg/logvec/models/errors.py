"""
Exception hierarchy of the engine.

Input problems also derive from ValueError and lookups from KeyError, so code
that only knows the builtin types keeps working.
"""

from __future__ import annotations

from typing import Any, List


class LogvecError(Exception):
    """Base class for every error raised by the engine."""


# ---------------------------------------------------------------------------
# Log backbone
# ---------------------------------------------------------------------------

class UnknownChannelError(LogvecError, KeyError):
    pass


class ChannelOrderError(LogvecError, ValueError):
    """An entry would break the per-channel timestamp order."""


class LogGapError(LogvecError, AssertionError):
    """A subscriber observed a non-contiguous offset."""


class BrokerStorageError(LogvecError, OSError):
    pass


# ---------------------------------------------------------------------------
# Schema / write path
# ---------------------------------------------------------------------------

class SchemaError(LogvecError, ValueError):
    """The schema itself is malformed."""


class SchemaViolationError(LogvecError, ValueError):
    """An entity does not match its collection schema."""

    def __init__(self, violations: List[Any]) -> None:
        self.violations = list(violations)
        text = "; ".join(getattr(v, "message", str(v)) for v in self.violations)
        super().__init__(f"entity rejected: {text}")


class DuplicatePrimaryKeyError(LogvecError, ValueError):
    pass


class UnknownPrimaryKeyError(LogvecError, KeyError):
    pass


class NotOwnerError(LogvecError, ValueError):
    """A logger received a request for a shard it does not own."""


class EmptyRingError(LogvecError, LookupError):
    pass


class SegmentSealedError(LogvecError, ValueError):
    pass


class UnknownSegmentError(LogvecError, KeyError):
    pass


# ---------------------------------------------------------------------------
# Index engine
# ---------------------------------------------------------------------------

class DimensionMismatchError(LogvecError, ValueError):
    pass


class ZeroVectorError(LogvecError, ValueError):
    pass


class IndexBuildError(LogvecError, ValueError):
    pass


class FilterError(LogvecError, ValueError):
    """Malformed filter expression or type mismatch against the schema."""


class ConfigurationError(LogvecError, ValueError):
    pass


# ---------------------------------------------------------------------------
# Storage / time travel
# ---------------------------------------------------------------------------

class StorageError(LogvecError, OSError):
    pass


class ObjectNotFoundError(LogvecError, KeyError):
    pass


class HistoryExpiredError(LogvecError):
    """The requested point in time is older than the retained history."""


class NoCheckpointError(LogvecError, LookupError):
    """No checkpoint exists at or before the requested time."""


# ---------------------------------------------------------------------------
# Coordination / read path
# ---------------------------------------------------------------------------

class CollectionNotFoundError(LogvecError, KeyError):
    pass


class CollectionExistsError(LogvecError, ValueError):
    pass


class UnavailableError(LogvecError):
    """No healthy node can serve the collection."""


class PartialResultError(LogvecError):
    """Some query nodes did not answer before the deadline."""

    def __init__(self, message: str, missing_nodes: List[str]) -> None:
        super().__init__(message)
        self.missing_nodes = list(missing_nodes)
        self.partial_coverage = True


class DatasetError(LogvecError, ValueError):
    """A dataset file is malformed or inconsistent."""
