"""Dual encoders plus the shared prototype bank, and their checkpoint file.

Checkpoint layout (little endian)::

    {"format":"swampkit-checkpoint","version":1,"encoder_a":[...],"encoder_b":[...],"prototypes":[K,d],...}\\n
    float32 payloads: encoder A (W, b per layer), encoder B (W, b per layer), prototypes
"""

from __future__ import annotations

import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .config import TrainConfig
from .errors import CheckpointError, DimensionError, HeaderError, TruncationError
from .losses import PrototypeBank
from .ndmath import Matrix, Mlp, Node, ParamTensor, Tape, l2_normalize_rows, normalize_rows
from .synthgen import rng_stream

_log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "swampkit-checkpoint"
CHECKPOINT_VERSION = 1


class Model:
    """Encoders ``phi_A``, ``phi_B`` and the prototypes ``P``.

    Every embedding handed out by :meth:`embed` / :meth:`embed_a` /
    :meth:`embed_b` is L2-normalized.
    """

    def __init__(
        self,
        encoder_a: Mlp,
        encoder_b: Mlp,
        prototypes: PrototypeBank,
        config: Optional[Dict[str, Any]] = None,
    ):
        if encoder_a.sizes[-1] != prototypes.dim or encoder_b.sizes[-1] != prototypes.dim:
            raise DimensionError(
                f"encoder outputs {encoder_a.sizes[-1]}/{encoder_b.sizes[-1]} "
                f"do not match prototype dim {prototypes.dim}"
            )
        self.encoder_a = encoder_a
        self.encoder_b = encoder_b
        self.prototypes = prototypes
        self.config = config or {}

    @classmethod
    def init(cls, cfg: TrainConfig, dim_a: int, dim_b: int) -> "Model":
        """Glorot encoders ``dim -> hidden -> hidden -> embed_dim`` and unit-norm Gaussian prototypes."""
        enc_a = Mlp.glorot([dim_a, cfg.hidden, cfg.hidden, cfg.embed_dim], rng_stream(cfg.seed, "encoder-a"), "relu")
        enc_b = Mlp.glorot([dim_b, cfg.hidden, cfg.hidden, cfg.embed_dim], rng_stream(cfg.seed, "encoder-b"), "relu")
        bank = PrototypeBank.random(cfg.num_classes, cfg.embed_dim, rng_stream(cfg.seed, "prototypes"))
        return cls(enc_a, enc_b, bank, config=cfg.to_dict())

    @property
    def embed_dim(self) -> int:
        return self.prototypes.dim

    def encoder_parameters(self) -> List[ParamTensor]:
        return self.encoder_a.parameters() + self.encoder_b.parameters()

    def parameters(self) -> List[ParamTensor]:
        return self.encoder_parameters() + [self.prototypes.P]

    def embed(self, tape: Tape, xa, xb) -> Tuple[Node, Node]:
        fa = l2_normalize_rows(self.encoder_a(tape.constant(xa)))
        fb = l2_normalize_rows(self.encoder_b(tape.constant(xb)))
        return fa, fb

    def embed_a(self, xa) -> Matrix:
        return normalize_rows(self.encoder_a.predict(xa))

    def embed_b(self, xb) -> Matrix:
        return normalize_rows(self.encoder_b.predict(xb))

    def snapshot(self) -> "Model":
        """Independent deep copy, optimizer state included."""
        return copy.deepcopy(self)

    def quantize(self) -> "Model":
        """Round every parameter to float32 precision in place; returns ``self``."""
        for p in self.parameters():
            p.value[...] = p.value.astype(np.float32).astype(np.float64)
        return self

    def equals(self, other: "Model") -> bool:
        mine, theirs = self.parameters(), other.parameters()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and np.array_equal(a.value, b.value) for a, b in zip(mine, theirs)
        )


def _header(model: Model) -> Dict[str, Any]:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "activation": model.encoder_a.activation,
        "encoder_a": model.encoder_a.sizes,
        "encoder_b": model.encoder_b.sizes,
        "prototypes": list(model.prototypes.P.shape),
        "config": model.config,
    }


def save_checkpoint(model: Model, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode() + b"\n"
    payload = b"".join(np.ascontiguousarray(p.value, dtype="<f4").tobytes() for p in model.parameters())
    path.write_bytes(header + payload)
    _log.info(f"Wrote checkpoint to {path}")
    return path


def _shapes(sizes: List[int]) -> List[Tuple[int, int]]:
    shapes = []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        shapes += [(d_in, d_out), (1, d_out)]
    return shapes


def load_checkpoint(path: Union[str, Path]) -> Model:
    raw = Path(path).read_bytes()
    end = raw.find(b"\n")
    if end < 0:
        raise HeaderError(f"{path}: missing checkpoint header line")
    try:
        header = json.loads(raw[:end])
        sizes_a, sizes_b = [int(s) for s in header["encoder_a"]], [int(s) for s in header["encoder_b"]]
        n_classes, dim = (int(s) for s in header["prototypes"])
        fmt, version = header["format"], header["version"]
        activation = header.get("activation", "relu")
    except (ValueError, KeyError, TypeError) as e:
        raise HeaderError(f"{path}: malformed checkpoint header: {e}") from e
    if fmt != CHECKPOINT_FORMAT or version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint {fmt!r} version {version!r}")
    if len(sizes_a) < 2 or len(sizes_b) < 2 or sizes_a[-1] != dim or sizes_b[-1] != dim:
        raise CheckpointError(f"{path}: encoder sizes {sizes_a}/{sizes_b} do not end in prototype dim {dim}")

    shapes = _shapes(sizes_a) + _shapes(sizes_b) + [(n_classes, dim)]
    expected = sum(4 * r * c for r, c in shapes)
    payload = raw[end + 1 :]
    if len(payload) != expected:
        raise TruncationError("checkpoint payload", expected, len(payload))

    values, offset = [], 0
    for r, c in shapes:
        values.append(np.frombuffer(payload, dtype="<f4", count=r * c, offset=offset).astype(np.float64).reshape(r, c))
        offset += 4 * r * c
    params = [ParamTensor(v) for v in values]
    n_a = 2 * (len(sizes_a) - 1)
    n_b = 2 * (len(sizes_b) - 1)
    enc_a = Mlp(list(zip(params[0:n_a:2], params[1:n_a:2])), activation)
    enc_b = Mlp(list(zip(params[n_a : n_a + n_b : 2], params[n_a + 1 : n_a + n_b : 2])), activation)
    model = Model(enc_a, enc_b, PrototypeBank(params[-1]), config=header.get("config") or {})
    _log.info(f"Loaded checkpoint from {path} (encoders {sizes_a} / {sizes_b}, K={n_classes})")
    return model
