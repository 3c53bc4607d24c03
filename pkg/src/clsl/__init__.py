"""Collaborative semantic feature learning and label recovery for partially labelled multi-label data."""

from .config import PRESETS, RunConfig
from .data import Dataset, SyntheticSpec, generate, mask_labels, read_dataset, write_dataset
from .model import Model
from .trainer import ExperimentReport, infer, run_experiment

__all__ = [
    "PRESETS",
    "RunConfig",
    "Dataset",
    "SyntheticSpec",
    "generate",
    "mask_labels",
    "read_dataset",
    "write_dataset",
    "Model",
    "ExperimentReport",
    "infer",
    "run_experiment",
]
__version__ = "0.1.0"
