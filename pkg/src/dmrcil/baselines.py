"""Reference memories for ablations: class prior, per-dimension std, and fine-tuning."""

from __future__ import annotations

import numpy as np

from .classifier import LinearClassifier, TrainConfig, finetune_config, train_stage
from .memory import ClassMemory


def fit_prior(features, class_id: int = 0) -> ClassMemory:
    """Class mean plus one scalar std, the root of the mean per-dimension variance."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(X) < 2:
        raise ValueError("need at least two features")
    sigma = np.sqrt(X.var(axis=0).mean())
    return ClassMemory(class_id, "prior", [1.0], X.mean(axis=0, keepdims=True), [sigma])


def fit_dstd(features, class_id: int = 0) -> ClassMemory:
    """Class mean plus the per-dimension standard deviations."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(X) < 2:
        raise ValueError("need at least two features")
    return ClassMemory(class_id, "d-std", [1.0], X.mean(axis=0, keepdims=True), X.std(axis=0)[None, :])


def finetune_stage(clf: LinearClassifier, X, y, cfg: TrainConfig) -> LinearClassifier:
    """Cross-entropy on the new task only: no replay, no mixing."""
    return train_stage(clf, X, y, None, finetune_config(cfg))
