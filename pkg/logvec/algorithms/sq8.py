"""
Scalar quantization to one byte per dimension.

    q_i = round((x_i - min_i) * 255 / (max_i - min_i)), clamped to [0, 255]

Rounding is half away from zero. A degenerate dimension (max == min)
encodes to 0 and decodes to min. Decoding maps q back to
min_i + q_i * (max_i - min_i) / 255, so the per-dimension error of a value
inside the trained range is at most half a quantization step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from logvec.models.errors import DimensionMismatchError, IndexBuildError


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class Sq8Codec:
    mins: np.ndarray
    maxs: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.mins.shape[0])

    @property
    def code_size(self) -> int:
        return self.dim

    @classmethod
    def train(cls, vectors: np.ndarray) -> "Sq8Codec":
        m = np.asarray(vectors, dtype=np.float32)
        if m.ndim != 2 or m.shape[0] == 0:
            raise IndexBuildError("SQ8 training needs at least one vector")
        return cls(mins=m.min(axis=0).astype(np.float32), maxs=m.max(axis=0).astype(np.float32))

    def _check(self, m: np.ndarray) -> None:
        if m.shape[-1] != self.dim:
            raise DimensionMismatchError(f"codec dim {self.dim}, got {m.shape[-1]}")

    def encode(self, vectors: np.ndarray) -> np.ndarray:
        """(n, dim) floats -> (n, dim) uint8. A single vector gives a 1-d array."""
        m = np.asarray(vectors, dtype=np.float64)
        self._check(m)
        lo = self.mins.astype(np.float64)
        span = self.maxs.astype(np.float64) - lo
        degenerate = span <= 0
        safe = np.where(degenerate, 1.0, span)
        q = _round_half_away((m - lo) * 255.0 / safe)
        q = np.clip(q, 0, 255)
        q = np.where(degenerate, 0, q)
        return q.astype(np.uint8)

    def decode(self, codes: np.ndarray) -> np.ndarray:
        q = np.asarray(codes, dtype=np.float64)
        self._check(q)
        lo = self.mins.astype(np.float64)
        span = self.maxs.astype(np.float64) - lo
        out = lo + q * np.where(span > 0, span, 0.0) / 255.0
        return out.astype(np.float32)

    def encode_bytes(self, vector: np.ndarray) -> bytes:
        return self.encode(np.asarray(vector).reshape(1, -1))[0].tobytes()

    def decode_bytes(self, raw: bytes) -> np.ndarray:
        return self.decode(np.frombuffer(raw, dtype=np.uint8).reshape(1, -1))[0]

    def to_bytes(self) -> bytes:
        return self.mins.astype("<f4").tobytes() + self.maxs.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, dim: int) -> "Sq8Codec":
        arr = np.frombuffer(raw, dtype="<f4", count=2 * dim)
        return cls(mins=arr[:dim].astype(np.float32), maxs=arr[dim:].astype(np.float32))


def sq8_encode(codec: Sq8Codec, vector: np.ndarray) -> bytes:
    return codec.encode_bytes(vector)


def sq8_decode(codec: Sq8Codec, raw: bytes) -> np.ndarray:
    return codec.decode_bytes(raw)
