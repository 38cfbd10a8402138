"""Per-class distribution memory: fit, degrade, replay, account and compare.

Fidelity levels from most to least information:

``dmr``       K components, full covariance each
``d-std``     K components, per-dimension standard deviation each
``dmr-lite``  K components, one scalar std each (``sqrt(trace / d)``)
``prior``     one component (class mean) with one scalar std
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .cluster import sq_dists
from .gmm import GMM_MAGIC, GMM_VERSION, EmConfig, GaussianComponent, GmmModel, fit_em
from .silhouette import KSelectConfig, select_k

FIDELITIES = ("prior", "dmr-lite", "d-std", "dmr")
_RANK = {name: i for i, name in enumerate(FIDELITIES)}
_CODE = {"prior": 0, "d-std": 1, "dmr-lite": 2, "dmr": 3}
BANK_MAGIC = b"DMRB"
BANK_VERSION = 1


class UnknownClassError(KeyError):
    pass


class BankFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ClassMemory:
    """Stored summary of one class.

    ``spread`` is ``(K, d, d)`` for dmr, ``(K, d)`` for d-std and ``(K,)``
    for dmr-lite / prior.
    """

    class_id: int
    fidelity: str
    weights: np.ndarray
    means: np.ndarray
    spread: np.ndarray

    def __post_init__(self):
        if self.fidelity not in _RANK:
            raise ValueError(f"unknown fidelity {self.fidelity!r}")
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        means = np.array(self.means, dtype=np.float64).reshape(len(weights), -1)
        spread = np.array(self.spread, dtype=np.float64)
        K, d = means.shape
        expected = {"dmr": (K, d, d), "d-std": (K, d), "dmr-lite": (K,), "prior": (K,)}
        if spread.shape != expected[self.fidelity]:
            raise ValueError(f"spread shape {spread.shape} invalid for {self.fidelity}")
        if self.fidelity == "prior" and K != 1:
            raise ValueError("prior memory holds exactly one component")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        for arr in (weights, means, spread):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "spread", spread)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @cached_property
    def _factors(self) -> np.ndarray:
        """Per-component linear map applied to standard normal draws."""
        if self.fidelity == "dmr":
            return np.array(
                [c.chol for c in self.as_gmm().components]
            )
        if self.fidelity == "d-std":
            return self.spread
        return self.spread[:, None] * np.ones((1, self.dim))

    def as_gmm(self) -> GmmModel:
        if self.fidelity != "dmr":
            raise ValueError("only dmr memories hold full covariances")
        return GmmModel(
            tuple(GaussianComponent(m, c, float(w)) for w, m, c in zip(self.weights, self.means, self.spread))
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_with_labels(n, rng)[0]

    def sample_with_labels(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draws and their component indices; uniforms first, then normals."""
        cdf = np.cumsum(self.weights)
        labels = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(cdf) - 1)
        z = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for k in range(self.n_components):
            idx = labels == k
            if self.fidelity == "dmr":
                out[idx] = self.means[k] + z[idx] @ self._factors[k].T
            else:
                out[idx] = self.means[k] + z[idx] * self._factors[k]
        return out, labels


@dataclass
class MemoryBank:
    dim: int
    entries: dict[int, ClassMemory] = field(default_factory=dict)

    def add(self, mem: ClassMemory) -> None:
        if mem.dim != self.dim:
            raise ValueError(f"memory dim {mem.dim} != bank dim {self.dim}")
        if mem.class_id in self.entries:
            raise ValueError(f"class {mem.class_id} already stored")
        self.entries[mem.class_id] = mem

    def __contains__(self, class_id):
        return class_id in self.entries

    def __len__(self):
        return len(self.entries)

    @property
    def classes(self) -> list[int]:
        return sorted(self.entries)

    def footprint(self, include_weights: bool = False) -> int:
        return sum(memory_footprint(m, include_weights) for m in self.entries.values())


# -- construction -----------------------------------------------------------------


def _scalar_std(X: np.ndarray) -> float:
    return float(np.sqrt(X.var(axis=0).mean()))


def memory_from_gmm(class_id: int, model: GmmModel) -> ClassMemory:
    return ClassMemory(class_id, "dmr", model.weights, model.means, model.covs)


def fit_class_memory(
    features,
    fidelity: str,
    select_cfg: KSelectConfig = KSelectConfig(),
    em_cfg: EmConfig = EmConfig(),
    class_id: int = 0,
) -> ClassMemory:
    """Summarise one class's features at the requested fidelity."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(X) < 2:
        raise ValueError("need at least two features per class")
    if fidelity == "prior":
        return ClassMemory(class_id, "prior", [1.0], X.mean(axis=0, keepdims=True), [_scalar_std(X)])
    k = select_k(X, select_cfg) if len(X) >= 2 * select_cfg.k_max else 1
    model, _ = fit_em(X, k, em_cfg)
    return degrade(memory_from_gmm(class_id, model), fidelity)


def degrade(mem: ClassMemory, target: str) -> ClassMemory:
    """Drop covariance information; means and weights are kept as stored."""
    if target not in _RANK:
        raise ValueError(f"unknown fidelity {target!r}")
    if _RANK[target] > _RANK[mem.fidelity]:
        raise ValueError("information cannot be restored")
    if target == mem.fidelity:
        return mem
    if target == "prior":
        return _collapse(mem)
    if mem.fidelity == "dmr":
        variances = np.diagonal(mem.spread, axis1=1, axis2=2)
    else:  # d-std
        variances = mem.spread**2
    if target == "d-std":
        spread = np.sqrt(variances)
    else:
        spread = np.sqrt(variances.sum(axis=1) / mem.dim)
    return ClassMemory(mem.class_id, target, mem.weights, mem.means, spread)


def _collapse(mem: ClassMemory) -> ClassMemory:
    """Moment-match a mixture to one mean plus one scalar std."""
    w = mem.weights
    mean = w @ mem.means
    if mem.fidelity == "dmr":
        traces = np.trace(mem.spread, axis1=1, axis2=2)
    elif mem.fidelity == "d-std":
        traces = (mem.spread**2).sum(axis=1)
    else:
        traces = mem.dim * mem.spread**2
    between = ((mem.means - mean) ** 2).sum(axis=1)
    sigma = np.sqrt(w @ (traces + between) / mem.dim)
    return ClassMemory(mem.class_id, "prior", [1.0], mean[None, :], [sigma])


# -- replay ---------------------------------------------------------------------


def generate_pseudo(bank: MemoryBank, class_id: int, n: int, seed) -> np.ndarray:
    if class_id not in bank:
        raise UnknownClassError(f"class {class_id} not in memory bank")
    if n < 1:
        raise ValueError("n must be >= 1")
    return bank.entries[class_id].sample(n, np.random.default_rng(seed))


def sample_for_labels(bank: MemoryBank, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One pseudo feature per entry of ``labels``, drawn class by class."""
    out = np.empty((len(labels), bank.dim))
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        out[idx] = bank.entries[int(c)].sample(len(idx), rng)
    return out


# -- accounting -----------------------------------------------------------------


def memory_footprint(mem: ClassMemory, include_weights: bool = False) -> int:
    """Stored floats per class: prior d+1, d-std K(d+d), dmr-lite K(d+1), dmr K(d+d^2)."""
    K, d = mem.n_components, mem.dim
    per_component = {"prior": d + 1, "dmr-lite": d + 1, "d-std": d + d, "dmr": d + d * d}
    total = K * per_component[mem.fidelity]
    if include_weights:
        total += K
    return total


# -- fidelity measurement -------------------------------------------------------------


def median_bandwidth(X: np.ndarray, Y: np.ndarray) -> float:
    Z = np.vstack([X, Y])
    d2 = sq_dists(Z, Z)
    iu = np.triu_indices(len(Z), k=1)
    h = float(np.sqrt(np.median(d2[iu])))
    return h if h > 0 else 1.0


def mmd_to_truth(pseudo, real, bandwidth="median") -> float:
    """Unbiased squared MMD with a Gaussian kernel ``exp(-|x-y|^2 / (2 h^2))``.

    ``bandwidth`` is a fixed ``h`` or ``"median"`` for the median pooled
    pairwise distance.
    """
    X = np.atleast_2d(np.asarray(pseudo, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(real, dtype=np.float64))
    n, m = len(X), len(Y)
    if n < 2 or m < 2:
        raise ValueError("unbiased estimator undefined for fewer than 2 samples")
    h = median_bandwidth(X, Y) if bandwidth in ("median", "median-heuristic") else float(bandwidth)
    gamma = 1.0 / (2.0 * h * h)
    Kxx = np.exp(-gamma * sq_dists(X, X))
    Kyy = np.exp(-gamma * sq_dists(Y, Y))
    Kxy = np.exp(-gamma * sq_dists(X, Y))
    xx = (Kxx.sum() - np.trace(Kxx)) / (n * (n - 1))
    yy = (Kyy.sum() - np.trace(Kyy)) / (m * (m - 1))
    return float(xx + yy - 2.0 * Kxy.mean())


# -- serialization --------------------------------------------------------------------


def _spread_size(fidelity: str, d: int) -> int:
    return {"dmr": d * d, "d-std": d, "dmr-lite": 1, "prior": 1}[fidelity]


def bank_to_bytes(bank: MemoryBank) -> bytes:
    d = bank.dim
    parts = [BANK_MAGIC, struct.pack("<III", BANK_VERSION, d, len(bank))]
    for cid in bank.classes:
        mem = bank.entries[cid]
        K = mem.n_components
        parts.append(struct.pack("<IB", cid, _CODE[mem.fidelity]))
        parts.append(GMM_MAGIC + struct.pack("<III", GMM_VERSION, d, K))
        size = _spread_size(mem.fidelity, d)
        for k in range(K):
            parts.append(struct.pack("<d", mem.weights[k]))
            parts.append(mem.means[k].astype("<f8").tobytes())
            parts.append(np.ascontiguousarray(mem.spread[k]).astype("<f8").reshape(size).tobytes())
    return b"".join(parts)


def bank_from_bytes(blob: bytes) -> MemoryBank:
    def need(pos, size, what):
        if len(blob) < pos + size:
            raise BankFormatError(f"truncated {what} at offset {pos}")

    need(0, 16, "header")
    if blob[:4] != BANK_MAGIC:
        raise BankFormatError("bad magic at offset 0")
    version, d, count = struct.unpack_from("<III", blob, 4)
    if version != BANK_VERSION:
        raise BankFormatError(f"unsupported version {version} at offset 4")
    decode = {v: k for k, v in _CODE.items()}
    bank = MemoryBank(d)
    pos = 16
    for _ in range(count):
        need(pos, 5 + 16, "class record")
        cid, code = struct.unpack_from("<IB", blob, pos)
        if code not in decode:
            raise BankFormatError(f"unknown fidelity code {code} at offset {pos + 4}")
        fidelity = decode[code]
        pos += 5
        if blob[pos : pos + 4] != GMM_MAGIC:
            raise BankFormatError(f"bad component block magic at offset {pos}")
        _, d_rec, K = struct.unpack_from("<III", blob, pos + 4)
        if d_rec != d:
            raise BankFormatError(f"dimension {d_rec} != {d} at offset {pos + 8}")
        pos += 16
        size = _spread_size(fidelity, d)
        need(pos, K * 8 * (1 + d + size), "components")
        weights, means, spreads = [], [], []
        for _k in range(K):
            weights.append(struct.unpack_from("<d", blob, pos)[0])
            pos += 8
            means.append(np.frombuffer(blob, "<f8", d, pos))
            pos += 8 * d
            spreads.append(np.frombuffer(blob, "<f8", size, pos))
            pos += 8 * size
        spread = np.array(spreads)
        if fidelity == "dmr":
            spread = spread.reshape(K, d, d)
        elif fidelity != "d-std":
            spread = spread.reshape(K)
        try:
            bank.add(ClassMemory(cid, fidelity, weights, np.array(means), spread))
        except ValueError as exc:
            raise BankFormatError(f"invalid class record ending at offset {pos}: {exc}") from exc
    if pos != len(blob):
        raise BankFormatError(f"trailing bytes at offset {pos}")
    return bank


def save_bank(bank: MemoryBank, path) -> None:
    with open(path, "wb") as fh:
        fh.write(bank_to_bytes(bank))


def load_bank(path) -> MemoryBank:
    with open(path, "rb") as fh:
        return bank_from_bytes(fh.read())


def bank_to_json(bank: MemoryBank) -> dict:
    """Inspection view: means, weights and spread summaries (not full covariances)."""
    classes = []
    for cid in bank.classes:
        mem = bank.entries[cid]
        if mem.fidelity == "dmr":
            summary = [float(np.sqrt(np.trace(c) / mem.dim)) for c in mem.spread]
        elif mem.fidelity == "d-std":
            summary = [float(np.sqrt((s**2).mean())) for s in mem.spread]
        else:
            summary = [float(s) for s in mem.spread]
        classes.append(
            {
                "class_id": cid,
                "fidelity": mem.fidelity,
                "k": mem.n_components,
                "weights": mem.weights.tolist(),
                "means": mem.means.tolist(),
                "rms_std": summary,
                "footprint": memory_footprint(mem),
                "footprint_with_weights": memory_footprint(mem, include_weights=True),
            }
        )
    return {"dim": bank.dim, "classes": classes}


def bank_summary_json(bank: MemoryBank) -> str:
    return json.dumps(bank_to_json(bank), indent=2)
