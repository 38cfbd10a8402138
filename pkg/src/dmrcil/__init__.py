"""Class-incremental learning on frozen features with distribution-level class memories."""

from .classifier import LinearClassifier, TrainConfig, predict, train_stage
from .experiment import run_experiment
from .features import FeatureDataset, SynthSpec, synth_generate
from .gmm import EmConfig, GmmModel, fit_em
from .memory import ClassMemory, MemoryBank, fit_class_memory
from .silhouette import KSelectConfig, select_k

__all__ = [
    "ClassMemory",
    "EmConfig",
    "FeatureDataset",
    "GmmModel",
    "KSelectConfig",
    "LinearClassifier",
    "MemoryBank",
    "SynthSpec",
    "TrainConfig",
    "fit_class_memory",
    "fit_em",
    "predict",
    "run_experiment",
    "select_k",
    "synth_generate",
    "train_stage",
]
__version__ = "0.1.0"
