"""Synthetic paired dataset: Gaussian classes in a small latent space pushed
through two frozen random networks, one per modality.

File format (little endian)::

    b"SWMP1\\n"
    {"m":...,"dim_a":...,"dim_b":...,"n_classes":...,"seed":...}\\n
    float32 xA (m x dim_a, row-major) | float32 xB | int32 labels | uint8 split codes
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .errors import ContractError, DatasetFormatError, HeaderError, MagicError, TruncationError, VersionError
from .ndmath import Mlp

_log = logging.getLogger(__name__)

MAGIC = b"SWMP"
FORMAT_VERSION = 1
SPLITS: Dict[str, int] = {"train": 0, "val": 1, "test": 2}
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)

N_CLASSES = 20
PAIRS_PER_CLASS = 500
LATENT_DIM = 5
HIDDEN = 50
OUTPUT_DIM = 100
SIGMA = 0.1

PathLike = Union[str, Path]


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one purpose, derived from the master seed and a fixed label."""
    if seed < 0:
        raise ContractError(f"seeds must be non-negative, got {seed}")
    return np.random.default_rng([seed, zlib.crc32(label.encode())])


@dataclass(frozen=True)
class GeneratorNets:
    f_a: Mlp
    f_b: Mlp

    @classmethod
    def random(cls, seed: int, latent_dim: int = LATENT_DIM, hidden: int = HIDDEN, output_dim: int = OUTPUT_DIM):
        rng = rng_stream(seed, "generator-weights")
        sizes = [latent_dim, hidden, hidden, output_dim]
        return cls(Mlp.glorot(sizes, rng, activation="tanh"), Mlp.glorot(sizes, rng, activation="tanh"))


@dataclass(frozen=True)
class PairedSplit:
    """Aligned pairs of one split; deliberately carries no class labels."""

    xA: np.ndarray
    xB: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def head(self, n: int) -> "PairedSplit":
        return PairedSplit(self.xA[:n], self.xB[:n], self.indices[:n])


@dataclass(frozen=True, eq=False)
class PairedDataset:
    xA: np.ndarray
    xB: np.ndarray
    _labels: np.ndarray
    n_classes: int
    seed: int
    split: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return self.xA.shape[0]

    @property
    def dim_a(self) -> int:
        return self.xA.shape[1]

    @property
    def dim_b(self) -> int:
        return self.xB.shape[1]

    @property
    def labels(self) -> np.ndarray:
        """Hidden class labels; only class-based evaluation reads them."""
        return self._labels

    def split_indices(self, name: str) -> np.ndarray:
        if self.split is None:
            raise ContractError("dataset has no split assignment; call split() first")
        if name not in SPLITS:
            raise ContractError(f"unknown split '{name}', expected one of {sorted(SPLITS)}")
        return np.flatnonzero(self.split == SPLITS[name])

    def pairs(self, name: str) -> PairedSplit:
        idx = self.split_indices(name)
        return PairedSplit(self.xA[idx], self.xB[idx], idx)

    def split_labels(self, name: str) -> np.ndarray:
        return self.labels[self.split_indices(name)]

    def equals(self, other: "PairedDataset") -> bool:
        same_split = (self.split is None and other.split is None) or (
            self.split is not None and other.split is not None and np.array_equal(self.split, other.split)
        )
        return (
            self.n_classes == other.n_classes
            and self.seed == other.seed
            and np.array_equal(self.xA, other.xA)
            and np.array_equal(self.xB, other.xB)
            and np.array_equal(self.labels, other.labels)
            and same_split
        )


def sample_latents(
    seed: int,
    n_classes: int = N_CLASSES,
    per_class: int = PAIRS_PER_CLASS,
    latent_dim: int = LATENT_DIM,
    sigma: float = SIGMA,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Class means ~ N(0, I) and ``per_class`` latents per class ~ N(mean, sigma^2 I).

    Returns ``(z, labels, means)`` with rows grouped class by class.
    """
    means = rng_stream(seed, "gaussians").standard_normal((n_classes, latent_dim))
    noise = rng_stream(seed, "latents").standard_normal((n_classes, per_class, latent_dim))
    z = (means[:, None, :] + sigma * noise).reshape(n_classes * per_class, latent_dim)
    labels = np.repeat(np.arange(n_classes, dtype=np.int32), per_class)
    return z, labels, means


def generate(
    seed: int,
    n_classes: int = N_CLASSES,
    per_class: int = PAIRS_PER_CLASS,
    latent_dim: int = LATENT_DIM,
    hidden: int = HIDDEN,
    output_dim: int = OUTPUT_DIM,
    sigma: float = SIGMA,
) -> PairedDataset:
    """Deterministic paired dataset; both instances of a pair share one latent."""
    z, labels, _ = sample_latents(seed, n_classes, per_class, latent_dim, sigma)
    nets = GeneratorNets.random(seed, latent_dim, hidden, output_dim)
    xA = nets.f_a.predict(z).astype(np.float32)
    xB = nets.f_b.predict(z).astype(np.float32)
    _log.info(f"Generated {xA.shape[0]} pairs ({n_classes} classes x {per_class}) from seed {seed}")
    return PairedDataset(xA=xA, xB=xB, _labels=labels, n_classes=n_classes, seed=seed)


def split_sizes(m: int) -> Tuple[int, int, int]:
    n_train = int(round(SPLIT_FRACTIONS[0] * m))
    n_val = int(round(SPLIT_FRACTIONS[1] * m))
    return n_train, n_val, m - n_train - n_val


def split(ds: PairedDataset, seed: int, max_attempts: int = 100) -> PairedDataset:
    """Random 70/10/20 train/val/test assignment in which every split sees every class."""
    n_train, n_val, _ = split_sizes(ds.m)
    rng = rng_stream(seed, "split")
    for attempt in range(max_attempts):
        perm = rng.permutation(ds.m)
        codes = np.empty(ds.m, dtype=np.uint8)
        codes[perm[:n_train]] = SPLITS["train"]
        codes[perm[n_train : n_train + n_val]] = SPLITS["val"]
        codes[perm[n_train + n_val :]] = SPLITS["test"]
        if all(np.unique(ds.labels[codes == c]).size == ds.n_classes for c in SPLITS.values()):
            return replace(ds, split=codes)
        _log.debug(f"Split attempt {attempt} left a class out of a split; resampling")
    raise ContractError(f"could not cover every class in every split after {max_attempts} permutations")


def _header(ds: PairedDataset) -> bytes:
    header = {"m": ds.m, "dim_a": ds.dim_a, "dim_b": ds.dim_b, "n_classes": ds.n_classes, "seed": ds.seed}
    return json.dumps(header, separators=(",", ":")).encode() + b"\n"


def to_bytes(ds: PairedDataset) -> bytes:
    if ds.split is None:
        raise ContractError("only split datasets can be saved")
    return b"".join(
        [
            MAGIC + str(FORMAT_VERSION).encode() + b"\n",
            _header(ds),
            np.ascontiguousarray(ds.xA, dtype="<f4").tobytes(),
            np.ascontiguousarray(ds.xB, dtype="<f4").tobytes(),
            np.ascontiguousarray(ds.labels, dtype="<i4").tobytes(),
            np.ascontiguousarray(ds.split, dtype="u1").tobytes(),
        ]
    )


def save(ds: PairedDataset, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ds))
    _log.info(f"Wrote dataset ({ds.m} pairs) to {path}")
    return path


def _read_line(raw: bytes, start: int, what: str) -> Tuple[bytes, int]:
    end = raw.find(b"\n", start)
    if end < 0:
        raise HeaderError(f"missing newline after {what}")
    return raw[start:end], end + 1


def from_bytes(raw: bytes) -> PairedDataset:
    if raw[: len(MAGIC)] != MAGIC:
        raise MagicError(f"bad magic {raw[: len(MAGIC)]!r}, expected {MAGIC!r}")
    version_line, pos = _read_line(raw, 0, "magic")
    version = version_line[len(MAGIC) :].decode(errors="replace")
    if version != str(FORMAT_VERSION):
        raise VersionError(f"unsupported format version '{version}', expected {FORMAT_VERSION}")
    header_line, pos = _read_line(raw, pos, "header")
    try:
        header = json.loads(header_line)
        m, dim_a, dim_b = int(header["m"]), int(header["dim_a"]), int(header["dim_b"])
        n_classes, seed = int(header["n_classes"]), int(header["seed"])
    except (ValueError, KeyError, TypeError) as e:
        raise HeaderError(f"malformed header {header_line[:200]!r}: {e}") from e

    sections = [("xA", "<f4", m * dim_a), ("xB", "<f4", m * dim_b), ("labels", "<i4", m), ("split", "u1", m)]
    expected = sum(np.dtype(dt).itemsize * count for _, dt, count in sections)
    payload = raw[pos:]
    if len(payload) != expected:
        offset, short = 0, "trailing data"
        for name, dt, count in sections:
            offset += np.dtype(dt).itemsize * count
            if len(payload) < offset:
                short = f"{name} section"
                break
        raise TruncationError(short, expected, len(payload))

    arrays = {}
    offset = 0
    for name, dt, count in sections:
        arrays[name] = np.frombuffer(payload, dtype=dt, count=count, offset=offset).copy()
        offset += np.dtype(dt).itemsize * count
    labels = arrays["labels"].astype(np.int32)
    codes = arrays["split"]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DatasetFormatError(f"labels outside [0, {n_classes})")
    if np.any(codes > max(SPLITS.values())):
        raise DatasetFormatError("unknown split code")
    return PairedDataset(
        xA=arrays["xA"].astype(np.float32).reshape(m, dim_a),
        xB=arrays["xB"].astype(np.float32).reshape(m, dim_b),
        _labels=labels,
        n_classes=n_classes,
        seed=seed,
        split=codes,
    )


def load(path: PathLike) -> PairedDataset:
    ds = from_bytes(Path(path).read_bytes())
    _log.info(f"Loaded dataset ({ds.m} pairs, dims {ds.dim_a}/{ds.dim_b}) from {path}")
    return ds
