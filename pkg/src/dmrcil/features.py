"""Labeled embeddings: file I/O, synthetic generation and task streams.

All randomness uses numpy's PCG64 generator (``np.random.default_rng``)
so a seed fully determines every draw.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gmm import GaussianComponent, GmmModel

BINARY_MAGIC = b"DMRF"
BINARY_VERSION = 1


class DataFormatError(ValueError):
    """Raised for unreadable or inconsistent feature files."""


class ConfigurationError(ValueError):
    """Raised when a task split cannot be built from the requested sizes."""


@dataclass(frozen=True)
class FeatureRecord:
    vector: np.ndarray
    class_id: int
    task_id: int = -1


@dataclass(frozen=True)
class FeatureDataset:
    """Column-oriented container of records (``X[i]`` has label ``y[i]``)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
            raise DataFormatError("X must be (n, d) and y must be (n,)")
        if (y < 0).any():
            raise DataFormatError("class ids must be non-negative")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.y))

    def class_counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.y, return_counts=True)
        return {int(c): int(k) for c, k in zip(labels, counts)}

    def of_class(self, class_id: int) -> np.ndarray:
        return self.X[self.y == class_id]

    def subset(self, class_ids) -> "FeatureDataset":
        mask = np.isin(self.y, list(class_ids))
        return FeatureDataset(self.X[mask], self.y[mask])

    def records(self, task_of_class: dict[int, int] | None = None) -> list[FeatureRecord]:
        task_of_class = task_of_class or {}
        return [
            FeatureRecord(self.X[i], int(self.y[i]), task_of_class.get(int(self.y[i]), -1))
            for i in range(len(self))
        ]


@dataclass(frozen=True)
class Task:
    task_id: int
    classes: tuple[int, ...]
    data: FeatureDataset


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[Task, ...]
    base_size: int
    increment_size: int
    seed: int

    def task_of_class(self) -> dict[int, int]:
        return {c: t.task_id for t in self.tasks for c in t.classes}

    def __len__(self):
        return len(self.tasks)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic feature space.

    ``separation`` is the nearest inter-class center distance in units of the
    mean component std; ``lobe_separation`` is the same quantity for the
    components within one class. ``rotation_block`` of 0 draws a full random
    rotation per component, ``b > 0`` a block-diagonal one with ``b``-sized
    blocks (keeps per-coordinate variances heterogeneous).
    """

    num_classes: int = 10
    dim: int = 16
    components_per_class: tuple[int, int] = (1, 3)
    separation: float = 6.0
    anisotropy: float = 4.0
    samples_per_class: int = 200
    seed: int = 0
    lobe_separation: float = 4.0
    rotation_block: int = 0
    component_std: float = 1.0

    def __post_init__(self):
        lo, hi = self.components_per_class
        if not 1 <= lo <= hi:
            raise ValueError("components_per_class must satisfy 1 <= lo <= hi")
        if self.num_classes < 1 or self.dim < 1 or self.samples_per_class < 1:
            raise ValueError("counts must be positive")
        if self.separation <= 0:
            raise ValueError("separation must be > 0")
        if self.anisotropy < 1:
            raise ValueError("anisotropy must be >= 1")
        if self.rotation_block < 0 or self.component_std <= 0:
            raise ValueError("invalid rotation_block or component_std")


@dataclass(frozen=True)
class SynthResult:
    dataset: FeatureDataset
    truth: dict[int, GmmModel]
    component_labels: np.ndarray = field(repr=False)


# -- file formats -------------------------------------------------------------


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        return fmt
    return "binary" if path.suffix in (".bin", ".dmrf") else "csv"


def load_embeddings(path, fmt: str | None = None) -> FeatureDataset:
    """Read a CSV (``f_1,...,f_d,label``) or packed ``DMRF`` binary file."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        return _load_csv(path)
    if fmt in ("binary", "packed-binary"):
        return _load_binary(path)
    raise DataFormatError(f"unknown format {fmt!r}")


def save_embeddings(dataset: FeatureDataset, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for x, label in zip(dataset.X, dataset.y):
                # repr() of a float round-trips exactly
                writer.writerow([repr(float(v)) for v in x] + [int(label)])
    elif fmt in ("binary", "packed-binary"):
        n, d = dataset.X.shape
        rec = np.dtype([("x", "<f8", (d,)), ("y", "<u4")])
        buf = np.empty(n, dtype=rec)
        buf["x"] = dataset.X
        buf["y"] = dataset.y
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC + struct.pack("<IIQ", BINARY_VERSION, d, n))
            fh.write(buf.tobytes())
    else:
        raise DataFormatError(f"unknown format {fmt!r}")


def _load_csv(path: Path) -> FeatureDataset:
    rows, labels = [], []
    dim = None
    with open(path, newline="", encoding="utf-8") as fh:
        for idx, row in enumerate(csv.reader(fh)):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(v) for v in row[:-1]]
                label = int(row[-1])
            except ValueError:
                if idx == 0 and not rows:
                    continue  # header
                raise DataFormatError(f"row {idx}: cannot parse {row!r}") from None
            if len(row) < 2:
                raise DataFormatError(f"row {idx}: need at least one feature and a label")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise DataFormatError(
                    f"row {idx}: dimension {len(values)} differs from {dim}"
                )
            rows.append(values)
            labels.append(label)
    if not rows:
        raise DataFormatError("no records")
    return FeatureDataset(np.array(rows), np.array(labels))


def _load_binary(path: Path) -> FeatureDataset:
    blob = path.read_bytes()
    if len(blob) < 20 or blob[:4] != BINARY_MAGIC:
        raise DataFormatError("bad magic; not a DMRF file")
    version, d, n = struct.unpack_from("<IIQ", blob, 4)
    if version != BINARY_VERSION:
        raise DataFormatError(f"unsupported version {version}")
    if n == 0:
        raise DataFormatError("no records")
    rec = np.dtype([("x", "<f8", (d,)), ("y", "<u4")])
    expected = 20 + n * rec.itemsize
    if len(blob) != expected:
        raise DataFormatError(f"size {len(blob)} does not match header (expected {expected})")
    buf = np.frombuffer(blob, dtype=rec, offset=20, count=n)
    return FeatureDataset(buf["x"].astype(np.float64), buf["y"].astype(np.int64))


# -- synthetic data -----------------------------------------------------------


def _random_rotation(rng: np.random.Generator, d: int, block: int) -> np.ndarray:
    def haar(k):
        q, r = np.linalg.qr(rng.standard_normal((k, k)))
        return q * np.sign(np.diag(r))

    if block <= 0 or block >= d:
        return haar(d)
    R = np.zeros((d, d))
    for start in range(0, d, block):
        stop = min(start + block, d)
        R[start:stop, start:stop] = haar(stop - start)
    return R


def _anisotropic_cov(rng, d, anisotropy, block, scale):
    # log-uniform eigenvalues spanning exactly the requested ratio
    if d == 1:
        eig = np.ones(1)
    else:
        logs = rng.uniform(0.0, np.log(anisotropy), size=d)
        logs[0], logs[1] = 0.0, np.log(anisotropy)
        eig = np.exp(logs)
    eig *= scale**2 * d / eig.sum()  # mean eigenvalue = scale**2
    R = _random_rotation(rng, d, block)
    cov = (R * eig) @ R.T
    return 0.5 * (cov + cov.T)


def _spread_points(rng, count, d, min_dist, radius):
    """Rejection-sample ``count`` points with pairwise distance >= ``min_dist``."""
    points = []
    for _ in range(count):
        for _attempt in range(10_000):
            p = rng.standard_normal(d)
            p *= radius / np.linalg.norm(p)
            if all(np.linalg.norm(p - q) >= min_dist for q in points):
                break
            radius *= 1.001
        points.append(p)
    return np.array(points)


def synth_generate(spec: SynthSpec, class_scale: dict[int, float] | None = None) -> SynthResult:
    """Draw a labeled dataset together with its exact generating mixtures.

    ``class_scale`` multiplies the component std of selected classes (e.g. to
    mimic classes a frozen encoder never saw, which embed more diffusely).
    """
    class_scale = class_scale or {}
    rng = np.random.default_rng(spec.seed)
    d, s = spec.dim, spec.component_std
    lo, hi = spec.components_per_class
    # centers on a sphere whose radius grows with class count so the nearest
    # pair sits near the requested separation
    radius = spec.separation * s * max(1.0, 0.5 * spec.num_classes ** (1.0 / max(d - 1, 1)))
    centers = _spread_points(rng, spec.num_classes, d, spec.separation * s, radius)

    X_parts, y_parts, comp_parts, truth = [], [], [], {}
    for c in range(spec.num_classes):
        k = int(rng.integers(lo, hi + 1))
        offsets = np.zeros((1, d))
        if k > 1:
            offsets = _spread_points(rng, k, d, spec.lobe_separation * s, 0.5 * spec.lobe_separation * s)
            offsets -= offsets.mean(axis=0)
        weights = rng.dirichlet(np.full(k, 4.0)) if k > 1 else np.ones(1)
        comps = []
        for j in range(k):
            cov = _anisotropic_cov(rng, d, spec.anisotropy, spec.rotation_block, s)
            cov = cov * class_scale.get(c, 1.0) ** 2
            comps.append(GaussianComponent(centers[c] + offsets[j], cov, float(weights[j])))
        model = GmmModel(tuple(comps))
        truth[c] = model
        pts, lab = model.sample_with_labels(spec.samples_per_class, rng)
        X_parts.append(pts)
        y_parts.append(np.full(spec.samples_per_class, c))
        comp_parts.append(lab)
    return SynthResult(
        FeatureDataset(np.vstack(X_parts), np.concatenate(y_parts)),
        truth,
        np.concatenate(comp_parts),
    )


# -- splitting ----------------------------------------------------------------


def split_task_stream(
    dataset: FeatureDataset, base_size: int, increment_size: int, seed: int
) -> TaskStream:
    """Shuffle classes with ``seed`` and deal them into base + increments."""
    classes = dataset.classes
    n = len(classes)
    if base_size < 1 or base_size > n:
        raise ConfigurationError(f"base_size {base_size} incompatible with {n} classes")
    rest = n - base_size
    if rest and (increment_size < 1 or rest % increment_size):
        raise ConfigurationError(
            f"{n} classes cannot be split as {base_size} + k*{increment_size}"
        )
    order = np.random.default_rng(seed).permutation(classes)
    groups = [order[:base_size]]
    groups += [order[i : i + increment_size] for i in range(base_size, n, increment_size)]
    tasks = tuple(
        Task(t, tuple(int(c) for c in g), dataset.subset(g)) for t, g in enumerate(groups)
    )
    return TaskStream(tasks, base_size, increment_size, seed)


def train_test_split(dataset: FeatureDataset, test_fraction: float, seed: int):
    """Stratified per-class holdout; returns ``(train, test)``."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in dataset.classes:
        idx = np.flatnonzero(dataset.y == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = max(1, int(round(test_fraction * len(idx))))
        if n_test >= len(idx):
            raise ConfigurationError(f"class {c} has too few samples to split")
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return FeatureDataset(dataset.X[tr], dataset.y[tr]), FeatureDataset(dataset.X[te], dataset.y[te])
