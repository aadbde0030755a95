# tests/test_trainer.py
import math

import numpy as np
import pandas as pd
import pytest

from swampkit.config import LossMode
from swampkit.errors import ContractError, NumericAbortError
from swampkit.feature_queue import FeatureQueue
from swampkit.model import Model
from swampkit.retrieval_eval import evaluate_pairs
from swampkit.synthgen import PairedDataset
from swampkit.trainer import (
    METRICS_COLUMNS,
    CsvMetricsSink,
    _step,
    _StepResult,
    contrastive_value,
    run_phase,
    swapped_targets,
    train,
    warmstart,
)


class _ListSink:
    def __init__(self):
        self.records = []

    def log_epoch(self, record):
        self.records.append(record)


class _Unlabeled(PairedDataset):
    @property
    def labels(self):
        raise AssertionError("training read the class labels")


def _hide_labels(ds):
    return _Unlabeled(xA=ds.xA, xB=ds.xB, _labels=ds._labels, n_classes=ds.n_classes, seed=ds.seed, split=ds.split)


def test_same_seed_same_history(tiny_dataset, tiny_config):
    model_a, hist_a = train(tiny_dataset, tiny_config)
    model_b, hist_b = train(tiny_dataset, tiny_config)
    assert hist_a.same_trajectory(hist_b)
    assert model_a.equals(model_b)
    assert len(hist_a.records) == tiny_config.epochs


def test_zero_lambda_matches_contrastive_only(tiny_dataset, tiny_config):
    combined, hist_combined = train(tiny_dataset, tiny_config.with_updates(lam=0.0))
    baseline, hist_baseline = train(tiny_dataset, tiny_config.with_updates(loss_mode="contrastive_only"))
    assert hist_combined.val_r1() == hist_baseline.val_r1()
    assert [r.loss_contrastive for r in hist_combined.records] == [r.loss_contrastive for r in hist_baseline.records]
    for a, b in zip(combined.encoder_parameters(), baseline.encoder_parameters()):
        np.testing.assert_array_equal(a.value, b.value)
    assert all(r.loss_swamp == 0.0 for r in hist_baseline.records)
    assert all(r.loss_swamp > 0.0 for r in hist_combined.records)


def test_training_lowers_contrastive_loss(tiny_dataset, tiny_config):
    cfg = tiny_config.with_updates(lr=1e-2, epochs=5, loss_mode="contrastive_only")
    pairs = tiny_dataset.pairs("train")
    model = Model.init(cfg, tiny_dataset.dim_a, tiny_dataset.dim_b)
    before = contrastive_value(model, pairs.xA, pairs.xB, cfg)
    run_phase(model, tiny_dataset, cfg, LossMode.contrastive_only)
    assert contrastive_value(model, pairs.xA, pairs.xB, cfg) < before


def test_returns_best_validation_snapshot(tiny_dataset, tiny_config):
    model, history = train(tiny_dataset, tiny_config.with_updates(epochs=3))
    best = max(history.val_r1())
    assert history.best_val_r1 == best
    assert history.records[history.best_epoch].is_best
    assert sum(r.is_best for r in history.records) >= 1
    # the checkpointed precision is the validated one
    assert evaluate_pairs(model, tiny_dataset.pairs("val")).r1 == best
    assert model.equals(model.snapshot().quantize())


def test_labels_are_never_read(tiny_dataset, tiny_config):
    train(_hide_labels(tiny_dataset), tiny_config.with_updates(epochs=1))


@pytest.mark.parametrize(
    "changes",
    [
        {"assignment": "hard"},
        {"loss_mode": "swamp_only"},
        {"queue_capacity": 0},
        {"mining": "sum"},
        {"train_subset": 64},
        {"sk_warm_start": False},
    ],
)
def test_variants_run(tiny_dataset, tiny_config, changes):
    _, history = train(tiny_dataset, tiny_config.with_updates(epochs=1, **changes))
    record = history.records[0]
    assert math.isfinite(record.loss_contrastive) and math.isfinite(record.loss_swamp)


def test_small_queue_warning(tiny_dataset, tiny_config, caplog):
    cfg = tiny_config.with_updates(epochs=1, queue_capacity=0, num_classes=64, warn_small_queue=True)
    train(tiny_dataset, cfg)
    assert "smaller than K=64" in caplog.text


def test_unconverged_solves_are_summarized_per_epoch(tiny_dataset, tiny_config, caplog):
    caplog.set_level("WARNING")
    train(tiny_dataset, tiny_config.with_updates(sk_max_iters=1, sk_tol=1e-15))
    summaries = [r.getMessage() for r in caplog.records if "transport solves stopped" in r.getMessage()]
    assert len(summaries) == tiny_config.epochs
    # 140 training pairs make 4 batches of 32, two solves each
    assert all("8 of 8 transport solves stopped at 1 iterations" in m for m in summaries)
    assert "Sinkhorn stopped" not in caplog.text


def test_batch_larger_than_training_split(tiny_dataset, tiny_config):
    with pytest.raises(ContractError):
        train(tiny_dataset, tiny_config.with_updates(batch_size=256, queue_capacity=0))


def test_non_finite_step_aborts_with_diagnostic(tiny_dataset, tiny_config):
    model = Model.init(tiny_config, tiny_dataset.dim_a, tiny_dataset.dim_b)
    W, b = model.encoder_a.layers[-1]
    W.value[...] = 0.0
    b.value[...] = 0.0
    with pytest.raises(NumericAbortError) as exc_info:
        run_phase(model, tiny_dataset, tiny_config, LossMode.swamp_combined)
    diag = exc_info.value.diagnostic()
    assert (diag["phase"], diag["epoch"], diag["batch"]) == ("main", 0, 0)
    assert math.isnan(diag["loss_contrastive"])


class TestWarmstart:
    def test_phases_are_recorded(self, tiny_dataset, tiny_config):
        sink = _ListSink()
        _, history = warmstart(tiny_dataset, tiny_config.with_updates(init="warmstart"), sink)
        phases = [r.phase for r in history.records]
        assert phases == ["contrastive"] * tiny_config.epochs + ["swamp"] * tiny_config.epochs
        assert [r.phase for r in sink.records] == phases
        assert history.best_phase == "swamp"

    def test_first_phase_is_contrastive_training(self, tiny_dataset, tiny_config):
        _, warm = train(tiny_dataset, tiny_config.with_updates(init="warmstart"))
        _, baseline = train(tiny_dataset, tiny_config.with_updates(loss_mode="contrastive_only"))
        assert warm.val_r1("contrastive") == baseline.val_r1("main")

    def test_differs_from_random_init(self, tiny_dataset, tiny_config):
        warm, _ = train(tiny_dataset, tiny_config.with_updates(init="warmstart"))
        cold, _ = train(tiny_dataset, tiny_config)
        assert not warm.equals(cold)


class TestStep:
    def test_targets_are_distributions(self, tiny_dataset, tiny_config):
        model = Model.init(tiny_config, tiny_dataset.dim_a, tiny_dataset.dim_b)
        queue = FeatureQueue(tiny_config.queue_capacity, tiny_config.embed_dim)
        pairs = tiny_dataset.pairs("train")
        for start in (0, 32):
            queue.push(model.embed_a(pairs.xA[start : start + 32]), model.embed_b(pairs.xB[start : start + 32]))
        qa, qb = swapped_targets(queue, model.prototypes, tiny_config)
        for q in (qa, qb):
            assert q.shape == (32, tiny_config.num_classes)
            assert np.all(q >= 0)
            np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)

    def test_queue_stays_full_after_warmup(self, tiny_dataset, tiny_config):
        model = Model.init(tiny_config, tiny_dataset.dim_a, tiny_dataset.dim_b)
        queue = FeatureQueue(tiny_config.queue_capacity, tiny_config.embed_dim)
        pairs = tiny_dataset.pairs("train")
        sizes = []
        for start in (0, 32, 64, 96):
            idx = np.arange(start, start + 32)
            _step(model, queue, pairs.xA[idx], pairs.xB[idx], idx, tiny_config, LossMode.swamp_combined, _StepResult())
            sizes.append(len(queue))
        assert sizes == [32, 64, 64, 64]

    def test_potentials_carry_over_between_steps(self, tiny_dataset, tiny_config):
        model = Model.init(tiny_config, tiny_dataset.dim_a, tiny_dataset.dim_b)
        queue = FeatureQueue(tiny_config.queue_capacity, tiny_config.embed_dim)
        pairs = tiny_dataset.pairs("train")
        potentials = [None, None]
        seen = []
        for start in (0, 32):
            idx = np.arange(start, start + 32)
            batch = (pairs.xA[idx], pairs.xB[idx], idx)
            _step(model, queue, *batch, tiny_config, LossMode.swamp_combined, _StepResult(), potentials)
            seen.append([p.copy() for p in potentials])
        assert all(p.shape == (tiny_config.num_classes,) and np.all(np.isfinite(p)) for p in seen[1])
        assert not np.array_equal(seen[0][0], seen[1][0])

    def test_prototypes_stay_unit_norm(self, tiny_dataset, tiny_config):
        model = Model.init(tiny_config, tiny_dataset.dim_a, tiny_dataset.dim_b)
        queue = FeatureQueue(tiny_config.queue_capacity, tiny_config.embed_dim)
        pairs = tiny_dataset.pairs("train")
        idx = np.arange(32)
        res = _StepResult()
        _step(model, queue, pairs.xA[idx], pairs.xB[idx], idx, tiny_config, LossMode.swamp_combined, res)
        np.testing.assert_allclose(np.linalg.norm(model.prototypes.P.value, axis=1), 1.0, atol=1e-12)
        assert res.loss_swamp > 0 and res.loss_contrastive >= 0


def test_csv_metrics_sink(tmp_path, tiny_dataset, tiny_config):
    path = tmp_path / "metrics.csv"
    _, history = train(tiny_dataset, tiny_config, CsvMetricsSink(path))
    frame = pd.read_csv(path)
    assert list(frame.columns) == METRICS_COLUMNS
    assert len(frame) == tiny_config.epochs
    assert list(frame["val_r1_pair"]) == history.val_r1()
