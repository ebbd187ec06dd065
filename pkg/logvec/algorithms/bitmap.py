from __future__ import annotations

import threading
from typing import Iterable, Optional

import numpy as np

from logvec.models.rules import REBUILD_THRESHOLD, should_rebuild_fraction


class DeleteBitmap:
    """
    One bit per row of a segment. Bits are only ever set; reset() is the
    only way back, and is used when the segment's index is rebuilt.
    """

    def __init__(self, segment_id: int, size: int = 0) -> None:
        self.segment_id = segment_id
        self._bits = np.zeros(int(size), dtype=bool)
        self._count = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return int(self._bits.shape[0])

    @property
    def deleted_count(self) -> int:
        return self._count

    @property
    def mask(self) -> np.ndarray:
        """Boolean array, True = deleted. Read only."""
        view = self._bits.view()
        view.flags.writeable = False
        return view

    def grow(self, size: int) -> None:
        with self._lock:
            if size > self._bits.shape[0]:
                self._bits = np.concatenate([self._bits, np.zeros(size - self._bits.shape[0], dtype=bool)])

    def set(self, row: int) -> bool:
        """Mark `row` deleted. Returns True if it was live before."""
        with self._lock:
            if row >= self._bits.shape[0]:
                self._bits = np.concatenate([self._bits, np.zeros(row + 1 - self._bits.shape[0], dtype=bool)])
            if self._bits[row]:
                return False
            self._bits[row] = True
            self._count += 1
            return True

    def set_many(self, rows: Iterable[int]) -> int:
        return sum(1 for r in rows if self.set(int(r)))

    def is_deleted(self, row: int) -> bool:
        return bool(row < self._bits.shape[0] and self._bits[row])

    def live_rows(self, upto: Optional[int] = None) -> np.ndarray:
        bits = self._bits if upto is None else self._bits[:upto]
        return np.flatnonzero(~bits)

    def reset(self, size: int) -> None:
        with self._lock:
            self._bits = np.zeros(int(size), dtype=bool)
            self._count = 0


def should_rebuild(bitmap: DeleteBitmap, row_count: int, threshold_fraction: float = REBUILD_THRESHOLD) -> bool:
    """True iff deleted / rows >= threshold (boundary inclusive)."""
    return should_rebuild_fraction(bitmap.deleted_count, row_count, threshold_fraction)
