"""Binary cache for a partitioned graph.

Layout (all integers little-endian, documented field by field in
docs/FORMATS.md):

  file    := magic 'FGPC' | u32 version=1 | u16 num_clients
             | graph_block | client_block * num_clients
  array   := u8 dtype_code | u8 ndim | u64 shape[ndim] | raw bytes (C order)
  dtype codes: 1 = float64, 2 = int64, 3 = uint8 (bool masks)

The same array encoding is reused by the weight and controller checkpoints.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import CacheError
from .graph import Graph
from .partition import ClientGraph

MAGIC = b"FGPC"
VERSION = 1

_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("<u1")}
_CODES = {np.dtype("<f8"): 1, np.dtype("<i8"): 2, np.dtype("<u1"): 3}


def write_array(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype("<u1")
    dt = arr.dtype.newbyteorder("<")
    arr = arr.astype(dt, copy=False)
    if dt not in _CODES:
        raise CacheError(f"unsupported dtype {arr.dtype}")
    fh.write(struct.pack("<BB", _CODES[dt], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def read_array(fh) -> np.ndarray:
    head = fh.read(2)
    if len(head) != 2:
        raise CacheError("truncated array header")
    code, ndim = struct.unpack("<BB", head)
    if code not in _DTYPES:
        raise CacheError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
    dt = _DTYPES[code]
    count = int(np.prod(shape)) if ndim else 1
    buf = fh.read(count * dt.itemsize)
    if len(buf) != count * dt.itemsize:
        raise CacheError("truncated array data")
    return np.frombuffer(buf, dtype=dt).reshape(shape).copy()


def read_mask(fh) -> np.ndarray:
    return read_array(fh).astype(bool)


_GRAPH_ARRAYS = ("indptr", "indices", "features", "labels",
                 "labeled_mask", "train_mask", "val_mask", "test_mask")
_CLIENT_ARRAYS = ("global_ids", "features", "labels",
                  "labeled_mask", "train_mask", "val_mask", "test_mask",
                  "int_indptr", "int_indices", "int_qw", "d_tilde",
                  "bnd_indptr", "bnd_client", "bnd_gid", "bnd_qw",
                  "bnd_remote_dtilde")


def save_partition(path: str, graph: Graph, clients: list[ClientGraph]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IH", VERSION, len(clients)))
        fh.write(struct.pack("<QI", graph.n, graph.num_classes))
        for name in _GRAPH_ARRAYS:
            write_array(fh, getattr(graph, name))
        for cg in clients:
            fh.write(struct.pack("<HI", cg.client_id, cg.num_classes))
            for name in _CLIENT_ARRAYS:
                write_array(fh, getattr(cg, name))
            fh.write(struct.pack("<H", len(cg.incoming)))
            for req in sorted(cg.incoming):
                fh.write(struct.pack("<H", req))
                write_array(fh, cg.incoming[req])


def load_partition(path: str) -> tuple[Graph, list[ClientGraph]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CacheError(f"{path}: not a partition cache")
        version, num_clients = struct.unpack("<IH", fh.read(6))
        if version != VERSION:
            raise CacheError(f"{path}: unsupported cache version {version}")
        n, num_classes = struct.unpack("<QI", fh.read(12))
        fields = {}
        for name in _GRAPH_ARRAYS:
            fields[name] = read_array(fh)
        for name in ("labeled_mask", "train_mask", "val_mask", "test_mask"):
            fields[name] = fields[name].astype(bool)
        graph = Graph(n=int(n), num_classes=int(num_classes), **fields)
        clients = []
        for _ in range(num_clients):
            cid, ncls = struct.unpack("<HI", fh.read(6))
            cfields = {}
            for name in _CLIENT_ARRAYS:
                cfields[name] = read_array(fh)
            for name in ("labeled_mask", "train_mask", "val_mask", "test_mask"):
                cfields[name] = cfields[name].astype(bool)
            n_inc = struct.unpack("<H", fh.read(2))[0]
            incoming = {}
            for _ in range(n_inc):
                req = struct.unpack("<H", fh.read(2))[0]
                incoming[req] = read_array(fh)
            clients.append(ClientGraph(client_id=int(cid), num_classes=int(ncls),
                                       incoming=incoming, **cfields))
    return graph, clients
