"""Dense float64 matrix math with a reverse-mode tape and an Adam optimizer.

A :class:`Tape` records every differentiable operation applied to
:class:`Node` objects. Leaves are either constants or trainable
:class:`ParamTensor` objects; :meth:`Tape.backward` walks the records in
reverse order and accumulates gradients into the parameters.

Example::

    tape = Tape()
    h = activation(affine(tape.constant(x), W, b), "relu")
    loss = sum_all(mul(h, h))
    tape.backward(loss)
    adam_step([W, b], lr=1e-3)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

from .errors import ConfigError, ContractError, DegenerateEmbeddingError, DimensionError, NonFiniteError

_log = logging.getLogger(__name__)

Matrix = NDArray[np.float64]
Activation = Literal["relu", "tanh", "sigmoid"]

NORM_FLOOR = 1e-12


def as_matrix(values) -> Matrix:
    """Coerce ``values`` to a 2-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass(eq=False)
class ParamTensor:
    """A trainable matrix with its gradient and Adam moments."""

    value: Matrix
    grad: Matrix = field(init=False)
    adam_m: Matrix = field(init=False)
    adam_v: Matrix = field(init=False)
    step_count: int = 0

    def __post_init__(self):
        self.value = as_matrix(self.value).copy()
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def reset_optimizer(self) -> None:
        self.adam_m.fill(0.0)
        self.adam_v.fill(0.0)
        self.step_count = 0


class Node:
    """A value produced on a tape."""

    __slots__ = ("value", "tape", "param", "requires_grad")

    def __init__(self, value: Matrix, tape: "Tape", requires_grad: bool, param: Optional[ParamTensor] = None):
        self.value = value
        self.tape = tape
        self.param = param
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a scalar node, got shape {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


VJP = Callable[[Matrix], Sequence[Optional[Matrix]]]


@dataclass
class _Record:
    output: Node
    inputs: Tuple[Node, ...]
    vjp: VJP


class Tape:
    """Ordered record of primitive operations, replayed backwards by :meth:`backward`."""

    def __init__(self):
        self._records: List[_Record] = []
        self._param_nodes: dict[int, Node] = {}

    def __len__(self) -> int:
        return len(self._records)

    def constant(self, value) -> Node:
        return Node(as_matrix(value), self, requires_grad=False)

    def param(self, p: ParamTensor) -> Node:
        """Leaf node bound to ``p``; the same node is returned for repeated calls."""
        node = self._param_nodes.get(id(p))
        if node is None:
            node = Node(p.value, self, requires_grad=True, param=p)
            self._param_nodes[id(p)] = node
        return node

    def record(self, value: Matrix, inputs: Sequence[Node], vjp: VJP) -> Node:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"operation produced non-finite values (shape {value.shape})")
        requires_grad = any(n.requires_grad for n in inputs)
        out = Node(value, self, requires_grad=requires_grad)
        if requires_grad:
            self._records.append(_Record(out, tuple(inputs), vjp))
        return out

    def backward(self, loss: Node) -> None:
        """Accumulate d(loss)/d(param) into ``ParamTensor.grad`` for every watched parameter."""
        if loss.tape is not self:
            raise ContractError("loss was not produced on this tape")
        if loss.value.shape != (1, 1):
            raise ContractError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        adjoints: dict[int, Matrix] = {id(loss): np.ones((1, 1))}
        for rec in reversed(self._records):
            g_out = adjoints.pop(id(rec.output), None)
            if g_out is None:
                continue
            for node, g_in in zip(rec.inputs, rec.vjp(g_out)):
                if g_in is None or not node.requires_grad:
                    continue
                key = id(node)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + g_in
                else:
                    adjoints[key] = g_in
        for node in self._param_nodes.values():
            g = adjoints.get(id(node))
            if g is not None:
                node.param.grad += g


Operand = Union[Node, ParamTensor]


def as_node(tape: Tape, x: Operand) -> Node:
    if isinstance(x, ParamTensor):
        return tape.param(x)
    if x.tape is not tape:
        raise ContractError("operands come from different tapes")
    return x


def affine(x: Node, W: Operand, b: Operand) -> Node:
    """``x @ W + b`` with ``b`` (1 x dout) broadcast over rows."""
    tape = x.tape
    Wn, bn = as_node(tape, W), as_node(tape, b)
    if x.shape[1] != Wn.shape[0] or bn.shape != (1, Wn.shape[1]):
        raise DimensionError(f"affine: x {x.shape}, W {Wn.shape}, b {bn.shape}")
    xv, Wv = x.value, Wn.value

    def vjp(g):
        return g @ Wv.T, xv.T @ g, g.sum(axis=0, keepdims=True)

    return tape.record(xv @ Wv + bn.value, (x, Wn, bn), vjp)


def activation(x: Node, kind: Activation) -> Node:
    xv = x.value
    if kind == "relu":
        out = np.maximum(xv, 0.0)
        mask = xv > 0

        def vjp(g):
            return (g * mask,)

    elif kind == "tanh":
        out = np.tanh(xv)

        def vjp(g):
            return (g * (1.0 - out * out),)

    elif kind == "sigmoid":
        out = _sigmoid(xv)

        def vjp(g):
            return (g * out * (1.0 - out),)

    else:
        raise ConfigError(f"unknown activation '{kind}', expected relu, tanh or sigmoid")
    return x.tape.record(out, (x,), vjp)


def _sigmoid(x: Matrix) -> Matrix:
    # two branches keep exp() from overflowing
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def apply_activation(x: Matrix, kind: Activation) -> Matrix:
    """Tape-free twin of :func:`activation` (same arithmetic)."""
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return _sigmoid(x)
    raise ConfigError(f"unknown activation '{kind}', expected relu, tanh or sigmoid")


def normalize_rows(x: Matrix, norm_floor: float = NORM_FLOOR) -> Matrix:
    """Tape-free row normalization, raising on rows below ``norm_floor``."""
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    if np.any(norms <= norm_floor):
        bad = np.flatnonzero(norms[:, 0] <= norm_floor)
        raise DegenerateEmbeddingError(f"{bad.size} row(s) with norm <= {norm_floor} (first: row {bad[0]})")
    return x / norms


def l2_normalize_rows(x: Node, norm_floor: float = NORM_FLOOR) -> Node:
    norms = np.sqrt(np.sum(x.value * x.value, axis=1, keepdims=True))
    y = normalize_rows(x.value, norm_floor)

    def vjp(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

    return x.tape.record(y, (x,), vjp)


def log_softmax(logits: Matrix, tau: float) -> Matrix:
    """Tape-free row-wise log-softmax of ``logits / tau``."""
    if not tau > 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    z = logits / tau
    return z - logsumexp(z, axis=1, keepdims=True)


def log_softmax_rows(logits: Node, tau: float) -> Node:
    out = log_softmax(logits.value, tau)
    probs = np.exp(out)

    def vjp(g):
        return ((g - probs * g.sum(axis=1, keepdims=True)) / tau,)

    return logits.tape.record(out, (logits,), vjp)


def matmul_nt(a: Operand, b: Operand) -> Node:
    """``a @ b.T``; used for similarity matrices and prototype logits."""
    tape = a.tape if isinstance(a, Node) else b.tape
    an, bn = as_node(tape, a), as_node(tape, b)
    if an.shape[1] != bn.shape[1]:
        raise DimensionError(f"matmul_nt: {an.shape} vs {bn.shape}")
    av, bv = an.value, bn.value

    def vjp(g):
        return g @ bv, g.T @ av

    return tape.record(av @ bv.T, (an, bn), vjp)


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise DimensionError(f"add: {a.shape} vs {b.shape}")
    return a.tape.record(a.value + b.value, (a, as_node(a.tape, b)), lambda g: (g, g))


def scale(a: Node, c: float) -> Node:
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def mul(a: Operand, b: Operand) -> Node:
    tape = a.tape if isinstance(a, Node) else b.tape
    an, bn = as_node(tape, a), as_node(tape, b)
    if an.shape != bn.shape:
        raise DimensionError(f"mul: {an.shape} vs {bn.shape}")
    av, bv = an.value, bn.value
    return tape.record(av * bv, (an, bn), lambda g: (g * bv, g * av))


def sum_all(a: Node) -> Node:
    shape = a.shape
    return a.tape.record(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> Matrix:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Mlp:
    """Fully-connected network: hidden layers use ``activation``, the output layer is linear."""

    def __init__(self, layers: List[Tuple[ParamTensor, ParamTensor]], activation: Activation = "relu"):
        self.layers = layers
        self.activation = activation

    @classmethod
    def glorot(cls, sizes: Sequence[int], rng: np.random.Generator, activation: Activation = "relu") -> "Mlp":
        layers = [
            (ParamTensor(glorot_uniform(d_in, d_out, rng)), ParamTensor(np.zeros((1, d_out))))
            for d_in, d_out in zip(sizes[:-1], sizes[1:])
        ]
        return cls(layers, activation)

    @property
    def sizes(self) -> List[int]:
        return [self.layers[0][0].shape[0]] + [W.shape[1] for W, _ in self.layers]

    def parameters(self) -> List[ParamTensor]:
        return [p for layer in self.layers for p in layer]

    def __call__(self, x: Node) -> Node:
        h = x
        for i, (W, b) in enumerate(self.layers):
            h = affine(h, W, b)
            if i < len(self.layers) - 1:
                h = activation(h, self.activation)
        return h

    def predict(self, x) -> Matrix:
        """Forward pass without a tape."""
        h = as_matrix(x)
        for i, (W, b) in enumerate(self.layers):
            if h.shape[1] != W.shape[0]:
                raise DimensionError(f"input has {h.shape[1]} features, layer {i} expects {W.shape[0]}")
            h = h @ W.value + b.value
            if i < len(self.layers) - 1:
                h = apply_activation(h, self.activation)
        return h


def zero_grad(params: Iterable[ParamTensor]) -> None:
    for p in params:
        p.zero_grad()


def adam_step(
    params: Iterable[ParamTensor],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam update with bias correction; gradients are left for the caller to zero."""
    for p in params:
        p.step_count += 1
        g = p.grad
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        bc1 = 1.0 - beta1**p.step_count
        bc2 = 1.0 - beta2**p.step_count
        p.value -= (lr / bc1) * p.adam_m / (np.sqrt(p.adam_v / bc2) + eps)
