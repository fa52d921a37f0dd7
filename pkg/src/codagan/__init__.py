"""Conditional domain adaptation GAN: one conditional translator, one discriminator, one segmenter."""
from .conditioning import OneHotCode, attach_code, encode_onehot
from .data import DatasetDescriptor, DatasetRegistry, open_dataset, register_dataset
from .evaluation import embed_project, ensemble_ci, evaluate_dataset, jaccard
from .losses import LossBreakdown, LossWeights
from .synthetic import DomainStyle, SyntheticRecipe, synth_generate
from .training import TrainConfig, Trainer, run_experiment, train_baseline

__version__ = "0.1.0"

__all__ = [
    "OneHotCode", "attach_code", "encode_onehot",
    "DatasetDescriptor", "DatasetRegistry", "open_dataset", "register_dataset",
    "embed_project", "ensemble_ci", "evaluate_dataset", "jaccard",
    "LossBreakdown", "LossWeights",
    "DomainStyle", "SyntheticRecipe", "synth_generate",
    "TrainConfig", "Trainer", "run_experiment", "train_baseline",
]
