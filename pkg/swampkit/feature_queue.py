"""Bounded FIFO of paired embeddings over which the transport problems are solved."""

from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np

from .errors import ContractError, DimensionError
from .ndmath import Matrix, as_matrix

_log = logging.getLogger(__name__)


class FeatureQueue:
    """Ring buffer holding index-aligned rows for modality A and modality B.

    Rows are copied on insertion, so nothing in the queue is linked to the
    encoder that produced it. With ``capacity == 0`` the queue retains
    nothing and :meth:`snapshot` returns the most recent batch alone.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 0:
            raise ContractError(f"queue capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self._buf_a = np.zeros((capacity, dim))
        self._buf_b = np.zeros((capacity, dim))
        self._ids = np.full(capacity, -1, dtype=np.int64)
        self._head = 0  # next write position
        self._count = 0
        self._last: Optional[Tuple[Matrix, Matrix, np.ndarray]] = None

    def __len__(self) -> int:
        return self._count

    @property
    def is_full(self) -> bool:
        return self._count == self.capacity

    def push(self, rows_a, rows_b, pair_ids=None) -> int:
        """Append a batch; returns how many of the oldest rows were evicted."""
        rows_a, rows_b = as_matrix(rows_a).copy(), as_matrix(rows_b).copy()
        b = rows_a.shape[0]
        if rows_b.shape[0] != b:
            raise ContractError(f"modality batches differ in size: {b} vs {rows_b.shape[0]}")
        if rows_a.shape[1] != self.dim or rows_b.shape[1] != self.dim:
            raise DimensionError(f"expected rows of dim {self.dim}, got {rows_a.shape[1]} and {rows_b.shape[1]}")
        if self.capacity and b > self.capacity:
            raise ContractError(f"batch of {b} rows exceeds queue capacity {self.capacity}")
        ids = np.arange(b, dtype=np.int64) if pair_ids is None else np.asarray(pair_ids, dtype=np.int64)
        if ids.shape != (b,):
            raise ContractError(f"expected {b} pair ids, got shape {ids.shape}")
        self._last = (rows_a, rows_b, ids)
        if self.capacity == 0:
            return 0

        evicted = max(0, self._count + b - self.capacity)
        slots = (self._head + np.arange(b)) % self.capacity
        self._buf_a[slots] = rows_a
        self._buf_b[slots] = rows_b
        self._ids[slots] = ids
        self._head = (self._head + b) % self.capacity
        self._count = min(self.capacity, self._count + b)
        if evicted:
            _log.debug(f"Queue evicted {evicted} oldest rows")
        return evicted

    def _order(self) -> np.ndarray:
        start = (self._head - self._count) % self.capacity
        return (start + np.arange(self._count)) % self.capacity

    def snapshot(self) -> Tuple[Matrix, Matrix, np.ndarray]:
        """All retained rows, oldest first, plus the row indices of the latest batch."""
        if self._last is None:
            raise ContractError("snapshot() called before any push")
        batch = self._last[0].shape[0]
        if self.capacity == 0:
            if batch == 0:
                raise ContractError("snapshot() with an empty queue and an empty batch")
            rows_a, rows_b, _ = self._last
            return rows_a.copy(), rows_b.copy(), np.arange(batch)
        if self._count == 0:
            raise ContractError("snapshot() of an empty queue")
        order = self._order()
        return self._buf_a[order].copy(), self._buf_b[order].copy(), np.arange(self._count - batch, self._count)

    def pair_ids(self) -> np.ndarray:
        """Pair ids of the retained rows, oldest first."""
        if self.capacity == 0:
            return np.empty(0, dtype=np.int64)
        return self._ids[self._order()].copy()
