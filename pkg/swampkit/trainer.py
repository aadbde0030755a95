"""Training loop for swapped-assignment embedding learning.

One step on a minibatch of ``B`` pairs:

1. encode both modalities and L2-normalize;
2. push detached copies into the feature queue;
3. compute class posteriors of every queued row for both modalities;
4. solve two transport problems with swapped costs: targets for A come from
   ``-log p(y|x^B)`` and targets for B from ``-log p(y|x^A)``;
5. keep the plan rows of the current minibatch, renormalized to sum 1;
6. minimize ``Lc + lam * Ls`` with Adam and project the prototypes back to
   the unit sphere.

After every epoch the pair-based validation R@1 (A to B) is measured; the
model of the best epoch is returned.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import toolz

from .config import Assignment, InitMode, LossMode, TrainConfig
from .errors import (
    ContractError,
    DegenerateEmbeddingError,
    DegenerateTargetError,
    InputError,
    NonFiniteError,
    NumericAbortError,
)
from .feature_queue import FeatureQueue
from .losses import (
    PrototypeBank,
    class_posteriors,
    class_posteriors_array,
    contrastive_loss,
    similarity_matrix,
    swamp_loss,
    swap_cost,
    total_loss,
)
from .model import Model
from .ndmath import Matrix, Tape, adam_step, zero_grad
from .retrieval_eval import evaluate_pairs
from .sinkhorn import SinkhornState, harden, sinkhorn_solve
from .synthgen import PairedDataset, PairedSplit, rng_stream

_log = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "loss_contrastive", "loss_swamp", "val_r1_pair", "is_best", "seconds", "phase"]


@dataclass
class EpochRecord:
    epoch: int
    loss_contrastive: float
    loss_swamp: float
    val_r1_pair: float
    is_best: bool
    seconds: float
    phase: str = "main"


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_phase: str = "main"
    best_val_r1: float = float("-inf")
    wall_seconds: float = 0.0

    def val_r1(self, phase: Optional[str] = None) -> List[float]:
        return [r.val_r1_pair for r in self.records if phase is None or r.phase == phase]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=METRICS_COLUMNS)

    def same_trajectory(self, other: "TrainHistory") -> bool:
        """Equality of everything but wall time."""
        drop = ["seconds"]
        return (
            self.best_epoch == other.best_epoch
            and self.best_phase == other.best_phase
            and self.frame().drop(columns=drop).equals(other.frame().drop(columns=drop))
        )


class MetricsSink(Protocol):
    def log_epoch(self, record: EpochRecord) -> None: ...


class CsvMetricsSink:
    """Appends one row per epoch to a CSV file, header written on creation."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns=METRICS_COLUMNS).to_csv(self.path, index=False)

    def log_epoch(self, record: EpochRecord) -> None:
        pd.DataFrame([asdict(record)], columns=METRICS_COLUMNS).to_csv(self.path, mode="a", header=False, index=False)


class FanoutSink:
    def __init__(self, sinks: Sequence[MetricsSink]):
        self.sinks = list(sinks)

    def log_epoch(self, record: EpochRecord) -> None:
        for sink in self.sinks:
            sink.log_epoch(record)


@dataclass
class _StepResult:
    loss_contrastive: float = float("nan")
    loss_swamp: float = float("nan")
    unconverged: int = 0
    worst_residual: float = 0.0

    def note_unconverged(self, state: SinkhornState) -> None:
        self.unconverged += 1
        self.worst_residual = max(self.worst_residual, state.final_residual)


def swapped_targets(
    queue: FeatureQueue,
    bank: PrototypeBank,
    cfg: TrainConfig,
    on_unconverged: Optional[Callable[[SinkhornState], None]] = None,
    potentials: Optional[List[Optional[np.ndarray]]] = None,
) -> Tuple[Matrix, Matrix]:
    """Row-normalized transport targets ``(q^A, q^B)`` for the latest batch in ``queue``.

    Solves that stop at ``sk_max_iters`` are handed to ``on_unconverged`` when
    given (the solver then stays quiet), otherwise the solver warns. When
    ``potentials`` is given, its two slots seed each direction's column
    potentials and receive the new ones.
    """
    qa_rows, qb_rows, batch_rows = queue.snapshot()
    logp_a = class_posteriors_array(qa_rows, bank, cfg.tau)
    logp_b = class_posteriors_array(qb_rows, bank, cfg.tau)
    targets = []
    # A learns from B's posteriors and vice versa
    for slot, other in enumerate((logp_b, logp_a)):
        plan, state = sinkhorn_solve(
            swap_cost(other),
            cfg.eta,
            cfg.sk_max_iters,
            cfg.sk_tol,
            warn=on_unconverged is None,
            init_log_v=potentials[slot] if potentials is not None else None,
        )
        if potentials is not None:
            potentials[slot] = state.log_v
        if on_unconverged is not None and state.final_residual >= cfg.sk_tol:
            on_unconverged(state)
        if cfg.assignment == Assignment.hard:
            plan = harden(plan)
        targets.append(plan.targets(batch_rows))
    return targets[0], targets[1]


def _step(
    model: Model,
    queue: Optional[FeatureQueue],
    xa,
    xb,
    pair_ids,
    cfg: TrainConfig,
    loss_mode: LossMode,
    out: _StepResult,
    potentials: Optional[List[Optional[np.ndarray]]] = None,
) -> _StepResult:
    """One optimizer step; loss components are written to ``out`` as soon as they exist."""
    tape = Tape()
    fa, fb = model.embed(tape, xa, xb)
    lc = contrastive_loss(similarity_matrix(fa, fb), cfg.margin, cfg.mining.value)
    out.loss_contrastive = lc.item()
    if loss_mode == LossMode.contrastive_only:
        out.loss_swamp = 0.0
        loss = lc
        params = model.encoder_parameters()
    else:
        queue.push(fa.value, fb.value, pair_ids)
        qa, qb = swapped_targets(queue, model.prototypes, cfg, out.note_unconverged, potentials)
        logp_a = class_posteriors(fa, model.prototypes, cfg.tau)
        logp_b = class_posteriors(fb, model.prototypes, cfg.tau)
        ls = swamp_loss(qa, qb, logp_a, logp_b)
        out.loss_swamp = ls.item()
        loss = ls if loss_mode == LossMode.swamp_only else total_loss(lc, ls, cfg.lam)
        params = model.parameters()
    if not np.isfinite(loss.item()):
        raise NonFiniteError(f"loss is {loss.item()}")
    zero_grad(params)
    tape.backward(loss)
    adam_step(params, cfg.lr)
    if loss_mode != LossMode.contrastive_only:
        model.prototypes.project()
    return out


def _train_pairs(ds: PairedDataset, cfg: TrainConfig) -> PairedSplit:
    pairs = ds.pairs("train")
    if cfg.train_subset is not None:
        pairs = pairs.head(cfg.train_subset)
    if len(pairs) < cfg.batch_size:
        raise ContractError(f"{len(pairs)} training pairs cannot fill one batch of {cfg.batch_size}")
    return pairs


def run_phase(
    model: Model,
    ds: PairedDataset,
    cfg: TrainConfig,
    loss_mode: LossMode,
    phase: str = "main",
    sink: Optional[MetricsSink] = None,
    history: Optional[TrainHistory] = None,
) -> Tuple[Model, TrainHistory]:
    """Train ``model`` in place for ``cfg.epochs`` epochs; returns the best-validation snapshot.

    Each epoch is validated on the float32-rounded copy of the model, which is
    exactly what a checkpoint of the returned snapshot holds.
    """
    history = history if history is not None else TrainHistory()
    train_pairs = _train_pairs(ds, cfg)
    val_pairs = ds.pairs("val")
    if len(val_pairs) == 0:
        raise ContractError("dataset has an empty validation split")

    queue = FeatureQueue(cfg.queue_capacity, cfg.embed_dim) if loss_mode != LossMode.contrastive_only else None
    # column potentials of the previous step, one per transport direction
    potentials: Optional[List[Optional[np.ndarray]]] = [None, None] if cfg.sk_warm_start else None
    shuffle_rng = rng_stream(cfg.seed, "shuffle" if phase in ("main", "contrastive") else f"shuffle-{phase}")
    best: Optional[Model] = None
    best_val = float("-inf")
    _log.info(
        f"Phase '{phase}': {loss_mode.value} on {len(train_pairs)} pairs, "
        f"{len(train_pairs) // cfg.batch_size} batches x {cfg.epochs} epochs"
    )
    population = cfg.queue_capacity or cfg.batch_size
    if queue is not None and cfg.warn_small_queue and population < cfg.num_classes:
        _log.warning(
            f"Transport population of {population} rows is smaller than K={cfg.num_classes}; "
            "some classes cannot receive a whole row"
        )

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        lc_sum = ls_sum = 0.0
        n_batches = unconverged = 0
        worst_residual = 0.0
        for batch_no, idx in enumerate(toolz.partition(cfg.batch_size, shuffle_rng.permutation(len(train_pairs)))):
            idx = np.asarray(idx)
            res = _StepResult()
            try:
                _step(
                    model,
                    queue,
                    train_pairs.xA[idx],
                    train_pairs.xB[idx],
                    train_pairs.indices[idx],
                    cfg,
                    loss_mode,
                    res,
                    potentials,
                )
            except (NonFiniteError, InputError, DegenerateEmbeddingError, DegenerateTargetError) as e:
                abort = NumericAbortError(epoch, batch_no, res.loss_contrastive, res.loss_swamp, phase)
                _log.error(f"{abort} ({e})", exc_info=True)
                raise abort from e
            lc_sum += res.loss_contrastive
            ls_sum += res.loss_swamp
            n_batches += 1
            unconverged += res.unconverged
            worst_residual = max(worst_residual, res.worst_residual)
            _log.debug(f"epoch {epoch} batch {batch_no}: Lc={res.loss_contrastive:.5f} Ls={res.loss_swamp:.5f}")

        if unconverged:
            _log.warning(
                f"[{phase}] epoch {epoch}: {unconverged} of {2 * n_batches} transport solves stopped at "
                f"{cfg.sk_max_iters} iterations (worst residual {worst_residual:.3e}, tol {cfg.sk_tol:.1e})"
            )

        # validated at the precision the checkpoint stores
        candidate = model.snapshot().quantize()
        val_r1 = evaluate_pairs(candidate, val_pairs).r1
        is_best = val_r1 > best_val
        if is_best:
            best_val = val_r1
            best = candidate
            history.best_epoch, history.best_phase, history.best_val_r1 = epoch, phase, val_r1
        record = EpochRecord(
            epoch=epoch,
            loss_contrastive=lc_sum / n_batches,
            loss_swamp=ls_sum / n_batches,
            val_r1_pair=val_r1,
            is_best=is_best,
            seconds=time.perf_counter() - started,
            phase=phase,
        )
        history.records.append(record)
        history.wall_seconds += record.seconds
        if sink is not None:
            sink.log_epoch(record)
        _log.info(
            f"[{phase}] epoch {epoch}: Lc={record.loss_contrastive:.5f} Ls={record.loss_swamp:.5f} "
            f"val R@1={val_r1:.2f}{' (best)' if is_best else ''}"
        )

    return best, history


def train(ds: PairedDataset, cfg: TrainConfig, sink: Optional[MetricsSink] = None) -> Tuple[Model, TrainHistory]:
    """Train from scratch (or via :func:`warmstart` when ``cfg.init`` asks for it)."""
    if cfg.init == InitMode.warmstart:
        return warmstart(ds, cfg, sink)
    model = Model.init(cfg, ds.dim_a, ds.dim_b)
    return run_phase(model, ds, cfg, cfg.loss_mode, "main", sink)


def warmstart(ds: PairedDataset, cfg: TrainConfig, sink: Optional[MetricsSink] = None) -> Tuple[Model, TrainHistory]:
    """Contrastive pre-training to the best validation model, then swapped-assignment training from it.

    The second phase starts with fresh Adam moments and freshly drawn prototypes.
    """
    history = TrainHistory()
    model = Model.init(cfg, ds.dim_a, ds.dim_b)
    pretrained, history = run_phase(model, ds, cfg, LossMode.contrastive_only, "contrastive", sink, history)

    for p in pretrained.encoder_parameters():
        p.reset_optimizer()
    pretrained.prototypes = PrototypeBank.random(
        cfg.num_classes, cfg.embed_dim, rng_stream(cfg.seed, "prototypes-warmstart")
    )
    mode = cfg.loss_mode if cfg.loss_mode != LossMode.contrastive_only else LossMode.swamp_combined
    return run_phase(pretrained, ds, cfg, mode, "swamp", sink, history)


def contrastive_value(model: Model, xa, xb, cfg: TrainConfig) -> float:
    """Contrastive loss of ``model`` on one fixed batch, without touching any state."""
    fa, fb = model.embed(Tape(), xa, xb)
    return contrastive_loss(similarity_matrix(fa, fb), cfg.margin, cfg.mining.value).item()
