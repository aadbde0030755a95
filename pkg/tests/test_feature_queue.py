# tests/test_feature_queue.py
import numpy as np
import pytest

from swampkit.errors import ContractError, DimensionError
from swampkit.feature_queue import FeatureQueue


def _batch(ids, dim=3):
    ids = np.asarray(ids, dtype=float)
    return np.tile(ids[:, None], (1, dim)), -np.tile(ids[:, None], (1, dim))


def test_fills_in_order():
    queue = FeatureQueue(4, 3)
    queue.push(*_batch([0, 1]), pair_ids=[0, 1])
    evicted = queue.push(*_batch([2, 3]), pair_ids=[2, 3])
    assert evicted == 0
    assert len(queue) == 4 and queue.is_full
    a, b, rows = queue.snapshot()
    np.testing.assert_array_equal(a[:, 0], [0, 1, 2, 3])
    np.testing.assert_array_equal(b[:, 0], [0, -1, -2, -3])
    np.testing.assert_array_equal(rows, [2, 3])


def test_evicts_oldest_first():
    queue = FeatureQueue(4, 3)
    queue.push(*_batch([0, 1]), pair_ids=[0, 1])
    queue.push(*_batch([2, 3]), pair_ids=[2, 3])
    assert queue.push(*_batch([4, 5]), pair_ids=[4, 5]) == 2
    np.testing.assert_array_equal(queue.pair_ids(), [2, 3, 4, 5])
    a, _, rows = queue.snapshot()
    np.testing.assert_array_equal(a[:, 0], [2, 3, 4, 5])
    np.testing.assert_array_equal(rows, [2, 3])


def test_full_eviction():
    queue = FeatureQueue(2, 3)
    queue.push(*_batch([0, 1]), pair_ids=[0, 1])
    queue.push(*_batch([2, 3]), pair_ids=[2, 3])
    a, _, rows = queue.snapshot()
    assert a.shape == (2, 3)
    np.testing.assert_array_equal(rows, [0, 1])
    np.testing.assert_array_equal(queue.pair_ids(), [2, 3])


def test_zero_capacity_holds_only_latest_batch():
    queue = FeatureQueue(0, 3)
    queue.push(*_batch([7, 8, 9]), pair_ids=[7, 8, 9])
    assert len(queue) == 0
    a, b, rows = queue.snapshot()
    np.testing.assert_array_equal(a[:, 0], [7, 8, 9])
    np.testing.assert_array_equal(rows, [0, 1, 2])
    assert queue.pair_ids().size == 0


def test_rows_are_bit_exact_detached_copies(rng):
    queue = FeatureQueue(8, 5)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    queue.push(a, b)
    a_before = a.copy()
    a += 1.0
    qa, qb, _ = queue.snapshot()
    np.testing.assert_array_equal(qa, a_before)
    np.testing.assert_array_equal(qb, b)


def test_pair_alignment_over_many_pushes(rng):
    capacity, batch = 12, 4
    queue = FeatureQueue(capacity, 2)
    pushed = []
    for step in range(10):
        ids = np.arange(step * batch, (step + 1) * batch)
        pushed.extend(ids)
        queue.push(np.c_[ids, ids], np.c_[-ids, -ids], pair_ids=ids)
        a, b, _ = queue.snapshot()
        np.testing.assert_array_equal(a[:, 0], -b[:, 0])
        np.testing.assert_array_equal(queue.pair_ids(), pushed[-capacity:])
        np.testing.assert_array_equal(queue.pair_ids(), a[:, 0])


def test_contract_errors():
    queue = FeatureQueue(4, 3)
    with pytest.raises(ContractError):
        queue.snapshot()
    with pytest.raises(ContractError):
        queue.push(np.ones((2, 3)), np.ones((3, 3)))
    with pytest.raises(DimensionError):
        queue.push(np.ones((2, 4)), np.ones((2, 4)))
    with pytest.raises(ContractError):
        queue.push(np.ones((5, 3)), np.ones((5, 3)))
    with pytest.raises(ContractError):
        FeatureQueue(-1, 3)


def test_empty_batch_on_zero_capacity():
    queue = FeatureQueue(0, 3)
    queue.push(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(ContractError):
        queue.snapshot()
