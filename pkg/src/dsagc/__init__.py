"""Dual-stream adversarial graph-contrastive model for cross-subject EEG emotion recognition
with incomplete source labels."""
from dsagc.config import RunConfig, TrainConfig
from dsagc.engine import DSAGC, FoldResult, ProtocolResult, grad_check, run_protocol, train_fold
from dsagc.featio import (
    Dataset,
    DatasetManifest,
    SyntheticConfig,
    generate_synthetic,
    load_features,
    partition_loso,
    save_features,
)
from dsagc.kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DSAGC",
    "Dataset",
    "DatasetManifest",
    "FoldResult",
    "ProtocolResult",
    "RunConfig",
    "SyntheticConfig",
    "TrainConfig",
    "generate_synthetic",
    "grad_check",
    "load_features",
    "partition_loso",
    "run_protocol",
    "save_features",
    "train_fold",
]
