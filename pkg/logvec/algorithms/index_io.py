"""
Persisted form of a segment index.

    magic "MIX1" | u16 version | u8 kind | u32 params length | params (canonical JSON)
    FLAT: no body
    IVF:  u32 nlist, u32 dim, centroids (nlist x dim f32),
          per list: u32 length, row ids (i64),
          u8 has_codec [codec mins/maxs f32, codes (rows x dim u8)]
    HNSW: i64 entry point, u32 node count, levels (u8 per node),
          u32 layer count, per layer: u32 node count,
          per node: i64 id, u32 degree, neighbor ids (i64)

Little-endian throughout. Vectors are not stored: loading needs the
segment's vector column, read from its binlog.
"""

from __future__ import annotations

import struct
from typing import Dict, List

import numpy as np

from logvec.algorithms.flat import FlatIndex
from logvec.algorithms.hnsw import HnswIndex
from logvec.algorithms.ivf import IvfFlatIndex
from logvec.algorithms.segment_index import IndexParams, SegmentIndex
from logvec.algorithms.sq8 import Sq8Codec
from logvec.models.errors import IndexBuildError
from logvec.storage.json_io import canonical_json, parse_json
from logvec.utils.constants import INDEX_MAGIC, INDEX_VERSION

_HEAD = struct.Struct("<4sHBI")
_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")

_KIND_CODES = {"flat": 0, "ivf_flat": 1, "hnsw": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class _Reader:
    def __init__(self, data: bytes, offset: int) -> None:
        self.data = data
        self.pos = offset

    def unpack(self, st: struct.Struct) -> tuple:
        if self.pos + st.size > len(self.data):
            raise IndexBuildError("truncated index object")
        out = st.unpack_from(self.data, self.pos)
        self.pos += st.size
        return out

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.data):
            raise IndexBuildError("truncated index object")
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos).copy()
        self.pos += size
        return out


def index_to_bytes(index: SegmentIndex) -> bytes:
    params = canonical_json(index.params.to_dict())
    out = [_HEAD.pack(INDEX_MAGIC, INDEX_VERSION, _KIND_CODES[index.kind], len(params)), params]
    body = index.index

    if isinstance(body, IvfFlatIndex):
        dim = int(body.centroids.shape[1])
        out.append(_U32.pack(body.nlist) + _U32.pack(dim))
        out.append(body.centroids.astype("<f4").tobytes())
        for lst in body.lists:
            out.append(_U32.pack(lst.shape[0]))
            out.append(lst.astype("<i8").tobytes())
        if body.codec is not None and body.codes is not None:
            out.append(b"\x01")
            out.append(body.codec.to_bytes())
            out.append(np.asarray(body.codes, dtype=np.uint8).tobytes())
        else:
            out.append(b"\x00")
    elif isinstance(body, HnswIndex):
        out.append(_I64.pack(-1 if body.entry_point is None else body.entry_point))
        out.append(_U32.pack(len(body.levels)))
        out.append(np.asarray(body.levels, dtype=np.uint8).tobytes())
        out.append(_U32.pack(len(body.layers)))
        for layer in body.layers:
            out.append(_U32.pack(len(layer)))
            for node in sorted(layer):
                links = layer[node]
                out.append(_I64.pack(node) + _U32.pack(len(links)))
                out.append(np.asarray(links, dtype="<i8").tobytes())
    return b"".join(out)


def index_from_bytes(data: bytes, vectors: np.ndarray) -> SegmentIndex:
    if len(data) < _HEAD.size:
        raise IndexBuildError("truncated index object")
    magic, version, kind_code, params_len = _HEAD.unpack_from(data, 0)
    if magic != INDEX_MAGIC:
        raise IndexBuildError(f"bad index magic {magic!r}")
    if version != INDEX_VERSION:
        raise IndexBuildError(f"unsupported index version {version}")
    kind = _KIND_NAMES.get(kind_code)
    if kind is None:
        raise IndexBuildError(f"unknown index kind code {kind_code}")
    start = _HEAD.size
    params = IndexParams.from_dict(parse_json(data[start:start + params_len]))
    reader = _Reader(data, start + params_len)
    vectors = np.asarray(vectors, dtype=np.float32)
    metric = params.metric_enum

    if kind == "flat":
        return SegmentIndex(params, FlatIndex(vectors, metric))

    if kind == "ivf_flat":
        nlist, = reader.unpack(_U32)
        dim, = reader.unpack(_U32)
        centroids = reader.array("<f4", nlist * dim).reshape(nlist, dim)
        lists: List[np.ndarray] = []
        for _ in range(nlist):
            length, = reader.unpack(_U32)
            lists.append(reader.array("<i8", length).astype(np.int64))
        has_codec = reader.array("u1", 1)[0]
        codec = codes = None
        if has_codec:
            raw = reader.array("u1", 8 * dim).tobytes()
            codec = Sq8Codec.from_bytes(raw, dim)
            codes = reader.array("u1", vectors.shape[0] * dim).reshape(vectors.shape[0], dim)
        return SegmentIndex(params, IvfFlatIndex(centroids, lists, vectors, metric, codec, codes))

    hnsw = HnswIndex(vectors, metric, params.m, params.ef_construction, params.seed)
    entry, = reader.unpack(_I64)
    count, = reader.unpack(_U32)
    hnsw.levels = [int(x) for x in reader.array("u1", count)]
    n_layers, = reader.unpack(_U32)
    layers: List[Dict[int, List[int]]] = []
    for _ in range(n_layers):
        size, = reader.unpack(_U32)
        layer: Dict[int, List[int]] = {}
        for _ in range(size):
            node, = reader.unpack(_I64)
            degree, = reader.unpack(_U32)
            layer[int(node)] = [int(x) for x in reader.array("<i8", degree)]
        layers.append(layer)
    hnsw.layers = layers
    hnsw.entry_point = None if entry < 0 else int(entry)
    return SegmentIndex(params, hnsw)
