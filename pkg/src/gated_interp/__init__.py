"""Multi-head gated attention for spatial interpolation of house prices."""

from .data import Dataset, DatasetDescriptor, load_csv, split_dataset, synthesize_dataset
from .evaluation import benchmark, kfold_cv
from .model import ModelParams, embed_dataset, forward, gradient_check
from .persistence import load_model, save_model
from .spatial import build_neighbor_index
from .training import PRESETS, TrainConfig, fit_model, train

__all__ = [
    "Dataset", "DatasetDescriptor", "load_csv", "split_dataset", "synthesize_dataset",
    "benchmark", "kfold_cv", "ModelParams", "embed_dataset", "forward", "gradient_check",
    "load_model", "save_model", "build_neighbor_index", "PRESETS", "TrainConfig", "fit_model", "train",
]

__version__ = "0.1.0"
