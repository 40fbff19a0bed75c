# core/buffer.py
"""
The stale target-embedding cache B.

Rows are written only by init_from_encoder and refresh; every write counts
towards reembed_counter, the cost metric the experiments compare on.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from core.errors import ShapeError
from core.net import MlpNet
from core.numkernel import as_matrix, check_finite, ordered_sum
from utils.checkpoint_utils import load_buffer_checkpoint, save_buffer_checkpoint

logger = logging.getLogger(__name__)

RowSelection = Union[str, Iterable[int]]


class TargetBuffer:
    """Cached target embeddings plus refresh bookkeeping. Many readers or one writer."""

    def __init__(self, embeddings: np.ndarray, last_refresh_step: Optional[np.ndarray] = None,
                 reembed_counter: int = 0):
        self.embeddings = np.array(embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ShapeError("buffer embeddings must be 2-D", self.embeddings.shape)
        check_finite("buffer", self.embeddings)
        n = self.embeddings.shape[0]
        self.last_refresh_step = (np.zeros(n, dtype=np.int64) if last_refresh_step is None
                                  else np.asarray(last_refresh_step, dtype=np.int64).copy())
        self.reembed_counter = int(reembed_counter)
        self._lock = threading.RLock()

    @classmethod
    def from_matrix(cls, embeddings: np.ndarray, step: int = 0) -> "TargetBuffer":
        """Wrap precomputed embeddings as if one full encoding pass produced them."""
        emb = np.asarray(embeddings, dtype=np.float64)
        return cls(emb, np.full(emb.shape[0], step, dtype=np.int64), reembed_counter=emb.shape[0])

    @property
    def n_rows(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def rows(self, indices=None) -> np.ndarray:
        """Snapshot of the requested rows (all rows when indices is None)."""
        with self._lock:
            if indices is None:
                return self.embeddings.copy()
            return self.embeddings[np.asarray(indices, dtype=np.int64)]

    def save(self, path: str) -> None:
        with self._lock:
            save_buffer_checkpoint(path, self.embeddings, self.last_refresh_step)


def init_from_encoder(g: MlpNet, targets_raw) -> TargetBuffer:
    """B_y = g(y; Θ_0) for every target; reembed_counter starts at N."""
    targets_raw = np.asarray(targets_raw, dtype=np.float64)
    if targets_raw.ndim != 2 or targets_raw.shape[1] != g.spec.in_dim:
        raise ShapeError("targets do not match encoder input", targets_raw.shape, (None, g.spec.in_dim))
    if targets_raw.shape[0] == 0:
        return TargetBuffer(np.zeros((0, g.spec.out_dim)))
    buffer = TargetBuffer.from_matrix(g(targets_raw), step=0)
    logger.info(f"Initialized buffer with {buffer.n_rows} rows (dim {buffer.dim})")
    return buffer


def _resolve_rows(rows: RowSelection, n: int) -> np.ndarray:
    if isinstance(rows, str):
        if rows != "all":
            raise ValueError(f"rows must be 'all' or an index list, got {rows!r}")
        return np.arange(n)
    idx = np.asarray(list(rows), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise IndexError(f"row index {int(bad)} out of range for buffer of {n} rows")
    return idx


def refresh(buffer: TargetBuffer, g: MlpNet, targets_raw, rows: RowSelection = "all",
            step: int = 0) -> TargetBuffer:
    """Re-encode the selected rows with the current encoder and update the counters."""
    idx = _resolve_rows(rows, buffer.n_rows)
    if idx.size == 0:
        return buffer
    fresh = g(np.asarray(targets_raw, dtype=np.float64)[idx])
    with buffer._lock:
        buffer.embeddings[idx] = fresh
        buffer.last_refresh_step[idx] = step
        buffer.reembed_counter += int(idx.size)
    logger.info(f"Refreshed {idx.size} buffer rows at step {step} "
                f"(reembed_counter={buffer.reembed_counter})")
    return buffer


@dataclass
class StalenessReport:
    per_row: np.ndarray
    mean: float
    max: float


def staleness_l1(buffer: TargetBuffer, g: MlpNet, targets_raw) -> StalenessReport:
    """‖B_y − g(y)‖₁ for every row, plus mean and max."""
    targets_raw = np.asarray(targets_raw, dtype=np.float64)
    if targets_raw.shape[0] != buffer.n_rows:
        raise ShapeError("targets and buffer row counts differ", targets_raw.shape, buffer.embeddings.shape)
    if buffer.n_rows == 0:
        return StalenessReport(np.zeros(0), 0.0, 0.0)
    fresh = g(targets_raw)
    return staleness_against(buffer, fresh)


def staleness_against(buffer: TargetBuffer, fresh) -> StalenessReport:
    fresh = as_matrix("fresh", fresh, buffer.dim)
    if fresh.shape != buffer.embeddings.shape:
        raise ShapeError("fresh embeddings do not match buffer", fresh.shape, buffer.embeddings.shape)
    gaps = ordered_sum(np.abs(buffer.rows() - fresh), axis=1)
    return StalenessReport(gaps, float(ordered_sum(gaps) / gaps.size) if gaps.size else 0.0,
                           float(gaps.max()) if gaps.size else 0.0)


def save_buffer(buffer: TargetBuffer, path: str) -> None:
    buffer.save(path)


def load_buffer(path: str, reembed_counter: int = 0) -> TargetBuffer:
    rows, steps = load_buffer_checkpoint(path)
    return TargetBuffer(rows, steps, reembed_counter)
