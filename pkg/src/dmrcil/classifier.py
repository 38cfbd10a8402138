"""Growing linear softmax classifier trained on frozen features.

Incremental stages minimise ``xi * (L_cls + L_p) + (1 - xi) * L_m`` where
``L_cls`` is cross-entropy on new-class features, ``L_p`` on pseudo features
replayed from memory (true old labels) and ``L_m`` on mixup blends of new and
pseudo features carrying the new-class hard label.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import log_softmax

from .cluster import sq_dists
from .memory import MemoryBank, sample_for_labels

CHECKPOINT_MAGIC = b"DMRC"


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    weights: np.ndarray  # (d, C)
    bias: np.ndarray  # (C,)
    class_order: tuple[int, ...]

    def __post_init__(self):
        W = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        order = tuple(int(c) for c in self.class_order)
        if W.ndim != 2 or W.shape[1] != len(order) or len(b) != len(order):
            raise ValueError("weights/bias/class_order shapes disagree")
        if len(set(order)) != len(order):
            raise ValueError("duplicate class ids")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "class_order", order)

    @classmethod
    def empty(cls, dim: int) -> "LinearClassifier":
        return cls(np.zeros((dim, 0)), np.zeros(0), ())

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_order)

    def column_of(self, labels) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.class_order)}
        try:
            return np.array([index[int(c)] for c in np.asarray(labels).reshape(-1)], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]} not in classifier's class set") from None

    def expand(self, new_classes) -> "LinearClassifier":
        """Append zero-initialised columns; existing columns are copied unchanged."""
        new = [int(c) for c in new_classes if int(c) not in self.class_order]
        W = np.hstack([self.weights, np.zeros((self.dim, len(new)))])
        b = np.concatenate([self.bias, np.zeros(len(new))])
        return LinearClassifier(W, b, self.class_order + tuple(new))

    def logits(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ self.weights + self.bias


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.001
    momentum: float = 0.9
    xi: float = 0.5
    beta_alpha: float = 0.2
    pseudo_per_class: int | None = None  # None -> new samples per class in a batch
    seed: int = 0
    base_learning_rate: float | None = 0.05  # None -> learning_rate
    base_epochs: int | None = None  # None -> epochs
    fold_lambda: bool = True  # use max(lam, 1 - lam) so blends stay nearer the new feature
    mix_partner: str = "nearest"  # "random" old class or the "nearest" old class center

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ValueError("invalid learning rate or momentum")
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError("xi must lie in [0, 1]")
        if self.beta_alpha <= 0:
            raise ValueError("beta_alpha must be > 0")
        if self.pseudo_per_class is not None and self.pseudo_per_class < 0:
            raise ValueError("pseudo_per_class must be >= 0")
        if self.mix_partner not in ("random", "nearest"):
            raise ValueError(f"unknown mix_partner {self.mix_partner!r}")


def mixup_enhance(new_feat, pseudo_feat, lam):
    """Convex blend ``lam * new + (1 - lam) * pseudo``; ``lam`` may be per-row."""
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any(lam_arr < 0.0) or np.any(lam_arr > 1.0):
        raise ValueError("lambda must lie in [0, 1]")
    e = np.asarray(new_feat, dtype=np.float64)
    p = np.asarray(pseudo_feat, dtype=np.float64)
    if e.shape != p.shape:
        raise ValueError("feature shapes differ")
    if lam_arr.ndim == 1 and e.ndim == 2:
        lam_arr = lam_arr[:, None]
    return lam_arr * e + (1.0 - lam_arr) * p


def _cross_entropy(clf: LinearClassifier, X, y):
    """Mean cross-entropy of one batch and its gradient w.r.t. (W, b)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    cols = clf.column_of(y)
    logp = log_softmax(clf.logits(X), axis=1)
    n = len(X)
    loss = -logp[np.arange(n), cols].mean()
    delta = np.exp(logp)
    delta[np.arange(n), cols] -= 1.0
    delta /= n
    return loss, X.T @ delta, delta.sum(axis=0)


def composite_loss_and_grad(batch_new, batch_pseudo, batch_mixed, clf: LinearClassifier, xi: float):
    """Loss value and ``(dW, db)``.

    Batches are ``(X, y)`` pairs or ``None``. Without a pseudo batch (base
    stage, or no replay) only ``L_cls`` is used; a missing mixed batch drops
    ``L_m``.
    """
    loss, gW, gb = _cross_entropy(clf, *batch_new)
    if batch_pseudo is None or len(batch_pseudo[1]) == 0:
        if batch_mixed is not None and len(batch_mixed[1]) and xi < 1.0:
            lm, mW, mb = _cross_entropy(clf, *batch_mixed)
            return xi * loss + (1 - xi) * lm, xi * gW + (1 - xi) * mW, xi * gb + (1 - xi) * mb
        return loss, gW, gb
    lp, pW, pb = _cross_entropy(clf, *batch_pseudo)
    loss, gW, gb = xi * (loss + lp), xi * (gW + pW), xi * (gb + pb)
    if batch_mixed is not None and len(batch_mixed[1]) and xi < 1.0:
        lm, mW, mb = _cross_entropy(clf, *batch_mixed)
        loss, gW, gb = loss + (1 - xi) * lm, gW + (1 - xi) * mW, gb + (1 - xi) * mb
    return loss, gW, gb


def composite_loss(batch_new, batch_pseudo, batch_mixed, clf: LinearClassifier, xi: float) -> float:
    return float(composite_loss_and_grad(batch_new, batch_pseudo, batch_mixed, clf, xi)[0])


def train_stage(
    clf: LinearClassifier,
    X,
    y,
    bank: MemoryBank | None,
    cfg: TrainConfig,
) -> LinearClassifier:
    """One stage of minibatch SGD with momentum; returns the expanded classifier.

    With an empty bank this is plain cross-entropy training over all columns.
    Otherwise every batch draws fresh pseudo features (``pseudo_per_class``
    per old class) and, when ``xi < 1``, one mixed feature per new sample
    with ``lambda ~ Beta(a, a)``. The partner old class is the one whose
    stored center is nearest the new feature, or uniform with
    ``mix_partner="random"``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    new_classes = sorted(set(int(c) for c in np.unique(y)) - set(clf.class_order))
    base_stage = clf.n_classes == 0
    clf = clf.expand(new_classes)
    old = np.array(bank.classes if bank is not None else [], dtype=np.int64)
    if len(old) and not set(old.tolist()) <= set(clf.class_order):
        raise ValueError("memory bank holds classes unknown to the classifier")

    if base_stage:
        lr = cfg.base_learning_rate or cfg.learning_rate
        epochs = cfg.base_epochs or cfg.epochs
    else:
        lr, epochs = cfg.learning_rate, cfg.epochs
    ppc = cfg.pseudo_per_class
    if ppc is None:
        ppc = max(1, round(cfg.batch_size / max(1, len(np.unique(y)))))
    replay = len(old) > 0 and ppc > 0
    mix = len(old) > 0 and cfg.xi < 1.0

    if mix:
        old_centers = np.array([bank.entries[int(c)].weights @ bank.entries[int(c)].means for c in old])

    rng = np.random.default_rng(cfg.seed)
    W, b = clf.weights.copy(), clf.bias.copy()
    vW, vb = np.zeros_like(W), np.zeros_like(b)
    n = len(X)
    for _epoch in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            Xn, yn = X[idx], y[idx]
            pseudo = mixed = None
            if replay:
                yp = np.repeat(old, ppc)
                pseudo = (sample_for_labels(bank, yp, rng), yp)
            if mix:
                if cfg.mix_partner == "nearest":
                    partner = old[np.argmin(sq_dists(Xn, old_centers), axis=1)]
                else:
                    partner = old[rng.integers(len(old), size=len(idx))]
                phi = sample_for_labels(bank, partner, rng)
                lam = rng.beta(cfg.beta_alpha, cfg.beta_alpha, size=len(idx))
                if cfg.fold_lambda:
                    lam = np.maximum(lam, 1.0 - lam)
                mixed = (mixup_enhance(Xn, phi, lam), yn)
            current = LinearClassifier(W, b, clf.class_order)
            _, gW, gb = composite_loss_and_grad((Xn, yn), pseudo, mixed, current, cfg.xi)
            vW = cfg.momentum * vW + gW
            vb = cfg.momentum * vb + gb
            W = W - lr * vW
            b = b - lr * vb
    return LinearClassifier(W, b, clf.class_order)


def predict(clf: LinearClassifier, X) -> np.ndarray:
    """Argmax class id; ties go to the lowest class id."""
    logits = clf.logits(np.asarray(X, dtype=np.float64))
    order = np.argsort(clf.class_order, kind="stable")
    sorted_ids = np.array(clf.class_order)[order]
    return sorted_ids[np.argmax(logits[:, order], axis=1)]


def finetune_config(cfg: TrainConfig) -> TrainConfig:
    return replace(cfg, xi=1.0, pseudo_per_class=0)


# -- checkpoint -----------------------------------------------------------------


def classifier_to_bytes(clf: LinearClassifier) -> bytes:
    d, C = clf.weights.shape
    return b"".join(
        [
            CHECKPOINT_MAGIC,
            struct.pack("<II", d, C),
            np.array(clf.class_order, dtype="<u4").tobytes(),
            np.asfortranarray(clf.weights).astype("<f8").tobytes(order="F"),
            clf.bias.astype("<f8").tobytes(),
        ]
    )


def classifier_from_bytes(blob: bytes) -> LinearClassifier:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("bad checkpoint magic at offset 0")
    d, C = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * C + 8 * d * C + 8 * C
    if len(blob) != expected:
        raise ValueError(f"checkpoint size {len(blob)} != expected {expected}")
    pos = 12
    order = np.frombuffer(blob, "<u4", C, pos).tolist()
    pos += 4 * C
    W = np.frombuffer(blob, "<f8", d * C, pos).reshape((d, C), order="F")
    pos += 8 * d * C
    b = np.frombuffer(blob, "<f8", C, pos)
    return LinearClassifier(W.copy(), b.copy(), tuple(order))
