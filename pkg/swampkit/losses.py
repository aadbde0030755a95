"""Losses for cross-modal embedding learning.

* :func:`contrastive_loss` - bidirectional hinge on in-batch negatives.
* :func:`class_posteriors` - softmax classifier over shared prototypes.
* :func:`swap_cost` - OT cost built from the *other* modality's posteriors.
* :func:`swamp_loss` - cross-entropy against fixed transport-plan targets.
* :func:`total_loss` - ``Lc + lam * Ls``.

All scalar losses are averaged over the minibatch.
"""

from __future__ import annotations

import logging
from typing import Literal

import numpy as np

from .errors import ConfigError, DegenerateTargetError, DimensionError
from .ndmath import (
    Matrix,
    Node,
    ParamTensor,
    add,
    as_matrix,
    log_softmax,
    log_softmax_rows,
    matmul_nt,
    normalize_rows,
    scale,
)
from .sinkhorn import CostMatrix

_log = logging.getLogger(__name__)

Mining = Literal["hardest", "sum"]

POSTERIOR_FLOOR = 1e-30
COST_CEILING = float(-np.log(POSTERIOR_FLOOR))


class PrototypeBank:
    """``K x d`` class prototypes shared by both modalities, kept at unit row norm."""

    def __init__(self, P: ParamTensor):
        self.P = P

    @classmethod
    def random(cls, n_classes: int, dim: int, rng: np.random.Generator) -> "PrototypeBank":
        bank = cls(ParamTensor(rng.standard_normal((n_classes, dim))))
        bank.project()
        return bank

    @property
    def n_classes(self) -> int:
        return self.P.shape[0]

    @property
    def dim(self) -> int:
        return self.P.shape[1]

    def project(self) -> None:
        """Rescale every prototype to unit L2 norm (in place)."""
        self.P.value[...] = normalize_rows(self.P.value)


def similarity_matrix(Fa: Node, Fb: Node) -> Node:
    """Cosine similarities ``S[i][j] = Fa[i] . Fb[j]`` of row-normalized embeddings."""
    if Fa.shape[1] != Fb.shape[1]:
        raise DimensionError(f"embedding dims differ: {Fa.shape} vs {Fb.shape}")
    return matmul_nt(Fa, Fb)


def contrastive_loss(S: Node, alpha: float, mining: Mining = "hardest") -> Node:
    """Bidirectional margin loss over in-batch negatives, divided by the batch size.

    ``mining="hardest"`` keeps only the most violating negative per row and per
    column; ``mining="sum"`` adds the hinge of every negative.
    """
    n, m = S.shape
    if n != m:
        raise DimensionError(f"similarity matrix must be square, got {S.shape}")
    if mining not in ("hardest", "sum"):
        raise ConfigError(f"unknown mining '{mining}', expected hardest or sum")
    if n == 1:
        return S.tape.record(np.zeros((1, 1)), (S,), lambda g: (np.zeros((1, 1)),))

    s = S.value
    diag = np.diag(s)
    idx = np.arange(n)
    if mining == "hardest":
        negatives = s.copy()
        negatives[idx, idx] = -np.inf
        j_row = np.argmax(negatives, axis=1)
        j_col = np.argmax(negatives, axis=0)
        viol_row = alpha - (diag - s[idx, j_row])
        viol_col = alpha - (diag - s[j_col, idx])
        value = (np.maximum(viol_row, 0.0).sum() + np.maximum(viol_col, 0.0).sum()) / n
        act_row = (viol_row > 0).astype(np.float64)
        act_col = (viol_col > 0).astype(np.float64)

        def vjp(g):
            grad = np.zeros_like(s)
            np.add.at(grad, (idx, idx), -(act_row + act_col))
            np.add.at(grad, (idx, j_row), act_row)
            np.add.at(grad, (j_col, idx), act_col)
            return (grad * (g[0, 0] / n),)

    else:
        off = ~np.eye(n, dtype=bool)
        viol_row = (alpha - diag[:, None] + s) * off
        viol_col = (alpha - diag[None, :] + s) * off
        act_row = ((viol_row > 0) & off).astype(np.float64)
        act_col = ((viol_col > 0) & off).astype(np.float64)
        value = (np.maximum(viol_row, 0.0).sum() + np.maximum(viol_col, 0.0).sum()) / n

        def vjp(g):
            grad = act_row + act_col
            grad[idx, idx] = -(act_row.sum(axis=1) + act_col.sum(axis=0))
            return (grad * (g[0, 0] / n),)

    return S.tape.record(np.array([[value]]), (S,), vjp)


def class_posteriors(F: Node, bank: PrototypeBank, tau: float) -> Node:
    """Log class posteriors ``log softmax(F P^T / tau)`` (differentiable)."""
    if F.shape[1] != bank.dim:
        raise DimensionError(f"embedding dim {F.shape[1]} does not match prototype dim {bank.dim}")
    return log_softmax_rows(matmul_nt(F, bank.P), tau)


def class_posteriors_array(F, bank: PrototypeBank, tau: float) -> Matrix:
    """Tape-free :func:`class_posteriors` for detached features (queue contents)."""
    F = as_matrix(F)
    if F.shape[1] != bank.dim:
        raise DimensionError(f"embedding dim {F.shape[1]} does not match prototype dim {bank.dim}")
    return log_softmax(F @ bank.P.value.T, tau)


def swap_cost(log_posteriors_other) -> CostMatrix:
    """``C = -log p(y|x)`` of the other modality, clipped to ``[0, -log 1e-30]``."""
    return CostMatrix(np.clip(-as_matrix(log_posteriors_other), 0.0, COST_CEILING))


def _cross_entropy(q: Matrix, logp: Node) -> Node:
    q = as_matrix(q)
    if q.shape != logp.shape:
        raise DimensionError(f"targets {q.shape} and log-posteriors {logp.shape} differ in shape")
    if np.any(q.sum(axis=1) <= 0):
        raise DegenerateTargetError("a target row sums to 0")
    b = q.shape[0]
    value = -np.sum(q * logp.value) / b
    return logp.tape.record(np.array([[value]]), (logp,), lambda g: (-q * (g[0, 0] / b),))


def swamp_loss(qA, qB, logpA: Node, logpB: Node) -> Node:
    """Swapped-assignment cross-entropy; ``qA``/``qB`` are constant row-stochastic targets."""
    return add(_cross_entropy(qA, logpA), _cross_entropy(qB, logpB))


def total_loss(Lc: Node, Ls: Node, lam: float) -> Node:
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    return add(Lc, scale(Ls, lam))
