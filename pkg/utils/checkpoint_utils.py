# utils/checkpoint_utils.py
"""
Little-endian binary envelopes for nets, target buffers and Adam state.

Net     : b"CORRNET1", u32 layers, per layer (u32 fan_in, u32 fan_out),
          then per layer f64 weights (fan_out x fan_in, row-major) and f64 biases.
Buffer  : b"CORRBUF1", u64 N, u32 D, f64 rows (N x D), u64 refresh step per row.
Adam    : b"CORRADM1", u64 step, f64 lr, beta1, beta2, eps, u32 tensors,
          per tensor (u32 rows, u32 cols; rows = 0 for vectors), then per tensor f64 m and f64 v.
"""

import logging
import os
import struct
from typing import List, Tuple

import numpy as np

logger = logging.getLogger(__name__)

NET_MAGIC = b"CORRNET1"
BUFFER_MAGIC = b"CORRBUF1"
ADAM_MAGIC = b"CORRADM1"

_F64 = np.dtype("<f8")
_U64 = np.dtype("<u8")


class _Reader:
    """Cursor over a checkpoint payload."""

    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ValueError(f"truncated checkpoint: {self.path}")
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values

    def array(self, dtype: np.dtype, count: int, shape) -> np.ndarray:
        size = dtype.itemsize * count
        if self.pos + size > len(self.data):
            raise ValueError(f"truncated checkpoint: {self.path}")
        arr = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos)
        self.pos += size
        return arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True)


def _read_checked(path: str, magic: bytes) -> _Reader:
    with open(path, "rb") as f:
        data = f.read()
    if data[:len(magic)] != magic:
        raise ValueError(f"{path} is not a {magic.decode()} checkpoint")
    reader = _Reader(data, path)
    reader.pos = len(magic)
    return reader


def _write(path: str, chunks: List[bytes]) -> None:
    dir_path = os.path.dirname(path)
    if dir_path:
        os.makedirs(dir_path, exist_ok=True)
    with open(path, "wb") as f:
        for chunk in chunks:
            f.write(chunk)
    logger.info(f"Wrote checkpoint {path}")


def save_net_checkpoint(path: str, weights: List[np.ndarray], biases: List[np.ndarray]) -> None:
    chunks = [NET_MAGIC, struct.pack("<I", len(weights))]
    for w in weights:
        fan_out, fan_in = w.shape
        chunks.append(struct.pack("<II", fan_in, fan_out))
    for w, b in zip(weights, biases):
        chunks.append(np.ascontiguousarray(w, dtype=_F64).tobytes())
        chunks.append(np.ascontiguousarray(b, dtype=_F64).tobytes())
    _write(path, chunks)


def load_net_checkpoint(path: str) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    reader = _read_checked(path, NET_MAGIC)
    (n_layers,) = reader.unpack("<I")
    dims = [reader.unpack("<II") for _ in range(n_layers)]
    weights, biases = [], []
    for fan_in, fan_out in dims:
        weights.append(reader.array(_F64, fan_in * fan_out, (fan_out, fan_in)))
        biases.append(reader.array(_F64, fan_out, (fan_out,)))
    return weights, biases


def save_buffer_checkpoint(path: str, rows: np.ndarray, refresh_steps: np.ndarray) -> None:
    n, d = rows.shape
    _write(path, [
        BUFFER_MAGIC,
        struct.pack("<QI", n, d),
        np.ascontiguousarray(rows, dtype=_F64).tobytes(),
        np.ascontiguousarray(refresh_steps, dtype=_U64).tobytes(),
    ])


def load_buffer_checkpoint(path: str) -> Tuple[np.ndarray, np.ndarray]:
    reader = _read_checked(path, BUFFER_MAGIC)
    n, d = reader.unpack("<QI")
    rows = reader.array(_F64, n * d, (n, d))
    steps = reader.array(_U64, n, (n,)).astype(np.int64)
    return rows, steps


def save_adam_checkpoint(path: str, step: int, hyper: Tuple[float, float, float, float],
                         m: List[np.ndarray], v: List[np.ndarray]) -> None:
    chunks = [ADAM_MAGIC, struct.pack("<Q", step), struct.pack("<dddd", *hyper),
              struct.pack("<I", len(m))]
    for t in m:
        # rows = 0 marks a 1-D tensor
        rows, cols = (0, t.shape[0]) if t.ndim == 1 else t.shape
        chunks.append(struct.pack("<II", rows, cols))
    for mt, vt in zip(m, v):
        chunks.append(np.ascontiguousarray(mt, dtype=_F64).tobytes())
        chunks.append(np.ascontiguousarray(vt, dtype=_F64).tobytes())
    _write(path, chunks)


def load_adam_checkpoint(path: str):
    """Returns (step, (lr, beta1, beta2, eps), m, v)."""
    reader = _read_checked(path, ADAM_MAGIC)
    (step,) = reader.unpack("<Q")
    hyper = reader.unpack("<dddd")
    (count,) = reader.unpack("<I")
    shapes = [reader.unpack("<II") for _ in range(count)]
    m, v = [], []
    for rows, cols in shapes:
        shape = (cols,) if rows == 0 else (rows, cols)
        size = cols if rows == 0 else rows * cols
        m.append(reader.array(_F64, size, shape))
        v.append(reader.array(_F64, size, shape))
    return step, hyper, m, v
