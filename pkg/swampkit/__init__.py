__version__ = "0.1.0"

from .config import TrainConfig, load_train_config
from .model import Model, load_checkpoint, save_checkpoint
from .retrieval_eval import RetrievalReport, evaluate_model, full_report, rank_matrix, score
from .sinkhorn import CostMatrix, TransportPlan, sinkhorn_solve
from .synthgen import PairedDataset, generate, split
from .trainer import TrainHistory, train, warmstart

__all__ = [
    "CostMatrix",
    "Model",
    "PairedDataset",
    "RetrievalReport",
    "TrainConfig",
    "TrainHistory",
    "TransportPlan",
    "evaluate_model",
    "full_report",
    "generate",
    "load_checkpoint",
    "load_train_config",
    "rank_matrix",
    "save_checkpoint",
    "score",
    "sinkhorn_solve",
    "split",
    "train",
    "warmstart",
]
