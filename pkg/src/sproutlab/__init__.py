"""Vicinal-risk training with learned Dirichlet label smoothing, PGD evaluation and
a from-scratch reverse-mode autodiff engine, all on numpy."""

from .attacks import AttackSpec, pgd_attack, pgd_linf, transfer_eval
from .data import Dataset, load_cifar_bin, load_idx, synth_blobs, synth_digits
from .dirichlet import DirichletParams, sample_dirichlet, sample_gamma
from .errors import ConfigError, DataError, NumericError, SproutLabError
from .models import Checkpoint, Model, ModelSpec, load_checkpoint, save_checkpoint
from .training import TrainConfig, train
from .vicinity import VicinityMode

__version__ = "0.1.0"

__all__ = [
    "AttackSpec", "Checkpoint", "ConfigError", "DataError", "Dataset", "DirichletParams",
    "Model", "ModelSpec", "NumericError", "SproutLabError", "TrainConfig", "VicinityMode",
    "load_checkpoint", "load_cifar_bin", "load_idx", "pgd_attack", "pgd_linf",
    "sample_dirichlet", "sample_gamma", "save_checkpoint", "synth_blobs", "synth_digits",
    "train", "transfer_eval",
]
