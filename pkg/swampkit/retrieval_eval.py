"""Cross-modal retrieval metrics: R@k and median rank, pair- or class-based."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import ContractError, DimensionError
from .model import Model
from .ndmath import as_matrix
from .synthgen import PairedDataset, PairedSplit

_log = logging.getLogger(__name__)

Direction = Literal["a2b", "b2a"]
ErrorType = Literal["pair", "class"]

DIRECTIONS = ("a2b", "b2a")
ERROR_TYPES = ("pair", "class")
RECALL_KS = (1, 5, 10)


@dataclass(frozen=True)
class RetrievalReport:
    direction: str
    error_type: str
    r_at: Dict[int, float] = field(default_factory=dict)
    median_rank: float = 1.0
    n_queries: int = 0

    @property
    def r1(self) -> float:
        return self.r_at[1]

    @property
    def r5(self) -> float:
        return self.r_at[5]

    @property
    def r10(self) -> float:
        return self.r_at[10]

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {"direction": self.direction, "error_type": self.error_type}
        out.update({f"r{k}": v for k, v in sorted(self.r_at.items())})
        out.update({"median_rank": self.median_rank, "n_queries": self.n_queries})
        return out


def _check_direction(direction: str) -> None:
    if direction not in DIRECTIONS:
        raise ContractError(f"unknown direction '{direction}', expected one of {', '.join(DIRECTIONS)}")


def _check_error_type(error_type: str) -> None:
    if error_type not in ERROR_TYPES:
        raise ContractError(f"unknown error type '{error_type}', expected one of {', '.join(ERROR_TYPES)}")


def rank_matrix(Fq, Fg) -> np.ndarray:
    """Gallery indices per query, by descending cosine; ties go to the lower gallery index."""
    Fq, Fg = as_matrix(Fq), as_matrix(Fg)
    if Fq.shape[1] != Fg.shape[1]:
        raise DimensionError(f"query dim {Fq.shape} does not match gallery dim {Fg.shape}")
    return np.argsort(-(Fq @ Fg.T), axis=1, kind="stable")


def truth_ranks(ranks: np.ndarray, truth: Sequence[int], error_type: str, gallery_truth=None) -> np.ndarray:
    """1-based rank of the first correct gallery item for every query.

    In ``pair`` mode ``truth[i]`` is the gallery index paired with query ``i``.
    In ``class`` mode it is the query's class and ``gallery_truth`` the gallery
    classes (defaults to ``truth`` for index-aligned pairs).
    """
    _check_error_type(error_type)
    ranks = np.asarray(ranks)
    truth = np.asarray(truth)
    if truth.shape != (ranks.shape[0],):
        raise ContractError(f"expected {ranks.shape[0]} truth entries, got shape {truth.shape}")
    if error_type == "pair":
        hits = ranks == truth[:, None]
    else:
        gallery = truth if gallery_truth is None else np.asarray(gallery_truth)
        if gallery.shape != (ranks.shape[1],):
            raise ContractError(f"expected {ranks.shape[1]} gallery classes, got shape {gallery.shape}")
        hits = gallery[ranks] == truth[:, None]
    found = hits.any(axis=1)
    if not np.all(found):
        raise ContractError(f"{int(np.sum(~found))} queries have no correct item in the gallery")
    return np.argmax(hits, axis=1) + 1


def score(ranks, truth, error_type: str, direction: str = "a2b", gallery_truth=None) -> RetrievalReport:
    _check_direction(direction)
    r = truth_ranks(ranks, truth, error_type, gallery_truth)
    n = r.size
    if n == 0:
        raise ContractError("cannot score an empty query set")
    return RetrievalReport(
        direction=direction,
        error_type=error_type,
        r_at={k: 100.0 * float(np.mean(r <= k)) for k in RECALL_KS},
        median_rank=float(np.sort(r)[(n - 1) // 2]),
        n_queries=n,
    )


def evaluate_embeddings(
    Fa, Fb, error_type: str = "pair", direction: str = "a2b", labels: Optional[np.ndarray] = None
) -> RetrievalReport:
    """Retrieval over index-aligned embeddings; ``labels`` are needed for class mode."""
    _check_direction(direction)
    _check_error_type(error_type)
    Fq, Fg = (Fa, Fb) if direction == "a2b" else (Fb, Fa)
    ranks = rank_matrix(Fq, Fg)
    if error_type == "pair":
        truth = np.arange(ranks.shape[0])
    elif labels is None:
        raise ContractError("class-based scoring needs the class labels of the split")
    else:
        truth = labels
    return score(ranks, truth, error_type, direction)


def evaluate_pairs(model: Model, pairs: PairedSplit, direction: str = "a2b") -> RetrievalReport:
    """Pair-based retrieval on an unlabeled split (used for model selection)."""
    return evaluate_embeddings(model.embed_a(pairs.xA), model.embed_b(pairs.xB), "pair", direction)


def evaluate_model(
    model: Model, ds: PairedDataset, split: str = "test", direction: str = "a2b", error_type: str = "pair"
) -> RetrievalReport:
    pairs = ds.pairs(split)
    if pairs.xA.shape[1] != model.encoder_a.sizes[0] or pairs.xB.shape[1] != model.encoder_b.sizes[0]:
        raise DimensionError(
            f"dataset dims ({pairs.xA.shape[1]}, {pairs.xB.shape[1]}) do not match model inputs "
            f"({model.encoder_a.sizes[0]}, {model.encoder_b.sizes[0]})"
        )
    labels = ds.split_labels(split) if error_type == "class" else None
    report = evaluate_embeddings(model.embed_a(pairs.xA), model.embed_b(pairs.xB), error_type, direction, labels)
    _log.info(
        f"{split} {direction} {error_type}: R@1={report.r1:.2f} R@5={report.r5:.2f} "
        f"R@10={report.r10:.2f} MedR={report.median_rank:g} ({report.n_queries} queries)"
    )
    return report


def full_report(model: Model, ds: PairedDataset, split: str = "test") -> List[RetrievalReport]:
    """Both directions times both error types."""
    return [evaluate_model(model, ds, split, d, e) for d in DIRECTIONS for e in ERROR_TYPES]


def reports_frame(reports: Sequence[RetrievalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in reports])
