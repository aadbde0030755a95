"""Entropy-regularized optimal transport with uniform marginals.

Solves ``min_Q <Q, C> - (1/eta) H(Q)`` subject to row sums ``1/N`` and column
sums ``1/K``. The solution is ``Q = Diag(u) A Diag(v)`` with
``A = exp(-eta C)``. The log-scalings are absorbed into a working kernel
whenever they grow, so large ``eta * C`` neither underflows nor overflows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, ContractError, DegenerateTargetError, InputError
from .ndmath import Matrix, as_matrix

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CostMatrix:
    values: Matrix

    def __post_init__(self):
        values = as_matrix(self.values)
        if not np.all(np.isfinite(values)):
            raise InputError("cost matrix contains NaN or Inf")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class TransportPlan:
    """``N x K`` nonnegative matrix with target marginals ``1/N`` (rows) and ``1/K`` (columns)."""

    q: Matrix

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def k(self) -> int:
        return self.q.shape[1]

    @property
    def row_marginal(self) -> float:
        return 1.0 / self.n

    @property
    def col_marginal(self) -> float:
        return 1.0 / self.k

    def targets(self, rows: Sequence[int]) -> Matrix:
        """Rows of the plan rescaled to class distributions summing to 1."""
        sub = self.q[np.asarray(rows, dtype=np.int64)]
        mass = sub.sum(axis=1, keepdims=True)
        if np.any(mass <= 0):
            raise DegenerateTargetError(f"{int(np.sum(mass <= 0))} target row(s) carry no mass")
        return sub / mass


@dataclass
class SinkhornState:
    log_u: np.ndarray
    log_v: np.ndarray
    iterations_used: int
    final_residual: float


def _validate(cost: CostMatrix, eta: float) -> Matrix:
    if not eta > 0:
        raise ConfigError(f"eta must be > 0, got {eta}")
    n, k = cost.shape
    if n < 1 or k < 1:
        raise ContractError(f"cost matrix must be at least 1x1, got {cost.shape}")
    return cost.values


# Scalings whose log magnitude exceeds this are folded into the kernel.
_ABSORB_AT = 50.0
# Kernel products below this switch to an exact log-domain update.
_PRODUCT_FLOOR = 1e-250


class _AbsorbedKernel:
    """Working kernel ``exp(log_a + alpha[:, None] + beta[None, :])`` with absorbed log-scalings.

    Between absorptions the iteration only multiplies this kernel with the
    bounded scalings ``u`` and ``v``; ``logsumexp`` over the full matrix is
    needed only to start (from ``log_v`` when given), and again if a row or
    column sum vanishes.
    """

    def __init__(self, log_a: Matrix, log_v: Optional[np.ndarray] = None):
        n, k = log_a.shape
        self.log_a = log_a
        self.log_r, self.log_c = -np.log(n), -np.log(k)
        start = log_a if log_v is None else log_a + log_v[None, :]
        self.alpha = self.log_r - logsumexp(start, axis=1)
        self.beta = self.log_c - logsumexp(log_a + self.alpha[:, None], axis=0)
        self.rebuild()

    def rebuild(self) -> None:
        self.k = np.exp(self.log_a + self.alpha[:, None] + self.beta[None, :])

    def absorb(self, u: np.ndarray, v: np.ndarray) -> None:
        self.alpha += np.log(u)
        self.beta += np.log(v)
        self.rebuild()

    def exact_rows(self) -> None:
        self.alpha = self.log_r - logsumexp(self.log_a + self.beta[None, :], axis=1)
        self.rebuild()

    def exact_cols(self) -> None:
        self.beta = self.log_c - logsumexp(self.log_a + self.alpha[:, None], axis=0)
        self.rebuild()


def _needs_absorb(x: np.ndarray) -> bool:
    return bool(np.max(np.abs(np.log(x))) > _ABSORB_AT)


def sinkhorn_solve(
    cost: CostMatrix,
    eta: float,
    max_iters: int = 100,
    tol: float = 1e-6,
    warn: bool = True,
    init_log_v: Optional[np.ndarray] = None,
) -> Tuple[TransportPlan, SinkhornState]:
    """Sinkhorn-Knopp fixed-point iteration, stabilized by absorbing the scalings into the kernel.

    The first (u, v) update is an exact log-domain one; later updates are
    kernel-vector products on bounded scalings. Stops once the largest row
    deviation drops below ``tol`` (columns are exact after every update) or
    after ``max_iters`` updates; the residual is reported either way. With
    ``warn=False`` an unconverged solve logs at DEBUG and the caller reports it.

    ``init_log_v`` (for instance ``state.log_v`` of a solve on a similar cost)
    replaces the all-zero starting column potentials. The fixed point does not
    depend on it; only the number of iterations to reach it does.
    """
    values = _validate(cost, eta)
    n, k = values.shape
    r, c = 1.0 / n, 1.0 / k
    if init_log_v is not None:
        init_log_v = np.asarray(init_log_v, dtype=np.float64)
        if init_log_v.shape != (k,):
            raise ContractError(f"init_log_v has shape {init_log_v.shape}, expected ({k},)")
        if not np.all(np.isfinite(init_log_v)):
            raise InputError("init_log_v contains NaN or Inf")
    kernel = _AbsorbedKernel(-eta * values, init_log_v)
    u, v = np.ones(n), np.ones(k)
    iterations = 1
    residual = np.inf
    while True:
        kv = kernel.k @ v
        if kv.min() < _PRODUCT_FLOOR and iterations < max_iters:
            kernel.absorb(u, v)
            kernel.exact_rows()
            kernel.exact_cols()
            u, v = np.ones(n), np.ones(k)
            iterations += 1
            continue
        # the row residual comes from the product the next u update needs
        residual = float(np.max(np.abs(u * kv - r)))
        if residual < tol or iterations >= max_iters:
            break
        u = r / kv
        ktu = kernel.k.T @ u
        if ktu.min() < _PRODUCT_FLOOR:
            kernel.absorb(u, v)
            kernel.exact_cols()
            u, v = np.ones(n), np.ones(k)
        else:
            v = c / ktu
        iterations += 1
        if _needs_absorb(u) or _needs_absorb(v):
            kernel.absorb(u, v)
            u, v = np.ones(n), np.ones(k)

    plan = TransportPlan(u[:, None] * kernel.k * v[None, :])
    residual = max(marginal_residual(plan))
    if residual >= tol:
        log = _log.warning if warn else _log.debug
        log(f"Sinkhorn stopped after {iterations} iterations with residual {residual:.3e} (tol {tol:.1e})")
    else:
        _log.debug(f"Sinkhorn converged in {iterations} iterations (residual {residual:.3e}, shape {n}x{k})")
    state = SinkhornState(
        log_u=kernel.alpha + np.log(u),
        log_v=kernel.beta + np.log(v),
        iterations_used=iterations,
        final_residual=residual,
    )
    return plan, state


def sinkhorn_naive(cost: CostMatrix, eta: float, max_iters: int = 100_000, tol: float = 1e-12) -> TransportPlan:
    """Alternating Bregman projections in probability space.

    Only usable where ``exp(-eta C)`` does not underflow; kept as the reference
    the log-domain solver is checked against.
    """
    values = _validate(cost, eta)
    n, k = values.shape
    q = np.exp(-eta * (values - values.min()))
    q /= q.sum()
    r, c = np.full(n, 1.0 / n), np.full(k, 1.0 / k)
    for _ in range(max_iters):
        q *= (r / q.sum(axis=1))[:, None]
        q *= (c / q.sum(axis=0))[None, :]
        if np.max(np.abs(q.sum(axis=1) - r)) < tol:
            break
    return TransportPlan(q)


def marginal_residual(plan: TransportPlan) -> Tuple[float, float]:
    """Largest absolute deviation of the row and column sums from ``1/N`` and ``1/K``."""
    row_err = float(np.max(np.abs(plan.q.sum(axis=1) - plan.row_marginal)))
    col_err = float(np.max(np.abs(plan.q.sum(axis=0) - plan.col_marginal)))
    return row_err, col_err


def harden(plan: TransportPlan) -> TransportPlan:
    """One-hot each row at its argmax (lowest column on ties) with mass ``1/N``.

    Row marginals survive; column marginals generally do not.
    """
    hard = np.zeros_like(plan.q)
    hard[np.arange(plan.n), np.argmax(plan.q, axis=1)] = plan.row_marginal
    return TransportPlan(hard)


def transport_cost(plan: TransportPlan, cost: CostMatrix) -> float:
    if plan.q.shape != cost.shape:
        raise ContractError(f"plan {plan.q.shape} and cost {cost.shape} differ in shape")
    return float(np.sum(plan.q * cost.values))


def plan_entropy(plan: TransportPlan) -> float:
    q = plan.q[plan.q > 0]
    return float(-np.sum(q * np.log(q)))
