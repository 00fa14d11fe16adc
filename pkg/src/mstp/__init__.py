"""Sparse multi-stage stationary treatment policies with one-step inference."""

from mstp.data import Dataset, StageRecord, Trajectory, load_dataset, save_dataset, split_folds
from mstp.policy import PolicyParams, action_probability, linear_index, normalize_to_sphere, sample_action

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "StageRecord",
    "Trajectory",
    "load_dataset",
    "save_dataset",
    "split_folds",
    "PolicyParams",
    "action_probability",
    "linear_index",
    "normalize_to_sphere",
    "sample_action",
]
