"""Prototype attention pooling of variable-size feature sets.

Each of ``H * p`` learnable query vectors attends over the ``k`` local
features of a set (keys and values are the features themselves); the
attended vectors are concatenated prototype by prototype, then head by head,
into one embedding of length ``H * p * D`` whatever ``k`` is. The queries are
shared by both modalities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .ndmath import Matrix, Node, Operand, ParamTensor, Tape, as_matrix, as_node, log_softmax
from .synthgen import rng_stream

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParConfig:
    n_prototypes: int = 20
    attention_temperature: float = 0.5
    n_heads: int = 1
    feature_dim: int = 16

    def __post_init__(self):
        if self.n_prototypes < 1:
            raise ConfigError(f"n_prototypes must be >= 1, got {self.n_prototypes}")
        if self.n_heads < 1:
            raise ConfigError(f"n_heads must be >= 1, got {self.n_heads}")
        if not self.attention_temperature > 0:
            raise ConfigError(f"attention_temperature must be > 0, got {self.attention_temperature}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")

    @property
    def n_queries(self) -> int:
        return self.n_heads * self.n_prototypes

    @property
    def output_dim(self) -> int:
        return self.n_queries * self.feature_dim


@dataclass
class ParPrototypes:
    """Query bank; row ``h * p + j`` is prototype ``j`` of head ``h``."""

    queries: ParamTensor

    def check(self, cfg: ParConfig) -> None:
        if self.queries.shape != (cfg.n_queries, cfg.feature_dim):
            raise DimensionError(
                f"expected {cfg.n_queries}x{cfg.feature_dim} queries (H*p x D), got {self.queries.shape}"
            )


@dataclass(frozen=True)
class LocalFeatureSet:
    features: Matrix

    def __post_init__(self):
        features = as_matrix(self.features)
        if features.shape[0] < 1:
            raise ContractError("a feature set needs at least one element")
        object.__setattr__(self, "features", features)

    @property
    def count(self) -> int:
        return self.features.shape[0]


def init_par_prototypes(cfg: ParConfig, seed: int) -> ParPrototypes:
    """Gaussian queries scaled by ``1/sqrt(D)``."""
    rng = rng_stream(seed, "par-prototypes")
    return ParPrototypes(ParamTensor(rng.standard_normal((cfg.n_queries, cfg.feature_dim)) / np.sqrt(cfg.feature_dim)))


def _attend(q: Matrix, v: Matrix, temperature: float) -> Tuple[Matrix, Matrix]:
    """Attention weights ``W`` (queries x k) and pooled rows ``W v``."""
    w = np.exp(log_softmax(q @ v.T, temperature))
    return w, w @ v


def _attend_vjp(q: Matrix, v: Matrix, w: Matrix, g_z: Matrix, temperature: float) -> Tuple[Matrix, Matrix]:
    g_w = g_z @ v.T
    g_logits = w * (g_w - np.sum(g_w * w, axis=1, keepdims=True)) / temperature
    g_q = g_logits @ v
    g_v = w.T @ g_z + g_logits.T @ q
    return g_q, g_v


def par_attend(values: Node, queries: Operand, cfg: ParConfig) -> Node:
    """Differentiable pooling of one set given as a ``k x D`` node; returns a ``1 x H*p*D`` row."""
    tape = values.tape
    qn = as_node(tape, queries)
    if values.shape[0] < 1:
        raise ContractError("a feature set needs at least one element")
    if values.shape[1] != cfg.feature_dim or qn.shape != (cfg.n_queries, cfg.feature_dim):
        raise DimensionError(f"features {values.shape} / queries {qn.shape} do not fit D={cfg.feature_dim}")
    q, v, t = qn.value, values.value, cfg.attention_temperature
    w, z = _attend(q, v, t)

    def vjp(g):
        g_q, g_v = _attend_vjp(q, v, w, g.reshape(z.shape), t)
        return g_v, g_q

    return tape.record(z.reshape(1, -1), (values, qn), vjp)


def par_encode(fset: LocalFeatureSet, protos: ParPrototypes, cfg: ParConfig, tape: Tape) -> Node:
    protos.check(cfg)
    return par_attend(tape.constant(fset.features), protos.queries, cfg)


def par_encode_batch(sets: Sequence[LocalFeatureSet], protos: ParPrototypes, cfg: ParConfig, tape: Tape) -> Node:
    """``B x H*p*D`` embeddings of ``B`` sets of any sizes, differentiable in the queries."""
    if not sets:
        raise ContractError("par_encode_batch needs at least one set")
    protos.check(cfg)
    qn = tape.param(protos.queries)
    q, t = qn.value, cfg.attention_temperature
    cached: List[Tuple[Matrix, Matrix, Matrix]] = []
    rows = []
    for fset in sets:
        if fset.features.shape[1] != cfg.feature_dim:
            raise DimensionError(f"set of shape {fset.features.shape} does not fit D={cfg.feature_dim}")
        w, z = _attend(q, fset.features, t)
        cached.append((fset.features, w, z))
        rows.append(z.reshape(-1))

    def vjp(g):
        g_q = np.zeros_like(q)
        for i, (v, w, z) in enumerate(cached):
            g_q += _attend_vjp(q, v, w, g[i].reshape(z.shape), t)[0]
        return (g_q,)

    return tape.record(np.stack(rows), (qn,), vjp)


def random_sets(n_sets: int, cfg: ParConfig, seed: int, max_count: int = 30) -> List[LocalFeatureSet]:
    """Synthetic sets with sizes drawn uniformly from ``[1, max_count]``."""
    rng = rng_stream(seed, "par-sets")
    counts = rng.integers(1, max_count + 1, size=n_sets)
    return [LocalFeatureSet(rng.standard_normal((int(k), cfg.feature_dim))) for k in counts]
