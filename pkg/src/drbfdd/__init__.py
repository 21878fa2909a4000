"""One-class RBFDD and D-RBFDD networks for anomaly detection."""

from drbfdd.deep import DrbfddModel, FeatureExtractor, build_model, load_model, save_model
from drbfdd.evalkit import evaluate, grid_search, rank_table, roc_auc
from drbfdd.optim import TrainConfig, train
from drbfdd.rbfdd import RbfddParams, anomaly_score, head_forward

__version__ = "0.1.0"

__all__ = [
    "DrbfddModel",
    "FeatureExtractor",
    "RbfddParams",
    "TrainConfig",
    "anomaly_score",
    "build_model",
    "evaluate",
    "grid_search",
    "head_forward",
    "load_model",
    "rank_table",
    "roc_auc",
    "save_model",
    "train",
]
