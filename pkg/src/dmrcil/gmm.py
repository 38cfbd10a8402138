"""Gaussian mixtures: log-density, EM fitting, sampling and binary I/O.

Densities are evaluated in the log domain through Cholesky factors; with
feature dimensions in the hundreds the linear-domain density underflows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .cluster import kmeans

LOG_2PI = np.log(2.0 * np.pi)
GMM_MAGIC = b"DMRG"
GMM_VERSION = 1


class NumericError(ArithmeticError):
    """Non-positive-definite covariance, total underflow or a collapsed component."""


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        cov = np.array(self.cov, dtype=np.float64).reshape(len(mean), len(mean))
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if not 0.0 < self.weight <= 1.0 + 1e-12:
            raise ValueError(f"component weight {self.weight} outside (0, 1]")

    @property
    def dim(self) -> int:
        return len(self.mean)

    @cached_property
    def chol(self) -> np.ndarray:
        """Lower-triangular factor ``L`` with ``L @ L.T == cov``."""
        try:
            return cholesky(self.cov, lower=True, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise NumericError("covariance is not positive definite") from exc

    @cached_property
    def log_det(self) -> float:
        return 2.0 * float(np.log(np.diag(self.chol)).sum())

    def logpdf(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: {X.shape[1]} != {self.dim}")
        z = solve_triangular(self.chol, (X - self.mean).T, lower=True, check_finite=False)
        maha = np.einsum("ij,ij->j", z, z)
        return -0.5 * (self.dim * LOG_2PI + self.log_det + maha)


@dataclass(frozen=True, eq=False)
class GmmModel:
    components: tuple[GaussianComponent, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        if len({c.dim for c in comps}) != 1:
            raise ValueError("components disagree on dimension")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {total!r}, not 1")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, weights, means, covs) -> "GmmModel":
        weights = np.asarray(weights, dtype=np.float64)
        weights = weights / weights.sum()
        return cls(tuple(GaussianComponent(m, c, float(w)) for w, m, c in zip(weights, means, covs)))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def covs(self) -> np.ndarray:
        return np.array([c.cov for c in self.components])

    def component_logpdf(self, X) -> np.ndarray:
        """``(n, K)`` matrix of ``log pi_k + log N(x_i | mu_k, Sigma_k)``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.column_stack([np.log(c.weight) + c.logpdf(X) for c in self.components])

    def logpdf(self, X) -> np.ndarray:
        return logsumexp(self.component_logpdf(X), axis=1)

    def sample_with_labels(self, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(seed)
        cdf = np.cumsum(self.weights)
        labels = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(cdf) - 1)
        z = rng.standard_normal((n, self.dim))
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            idx = labels == k
            out[idx] = comp.mean + z[idx] @ comp.chol.T
        return out, labels


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 200
    rel_tol: float = 1e-6
    cov_jitter: float | None = None  # None -> 1e-6 * mean diagonal of the data covariance
    init: str = "kmeans"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be > 0")
        if self.cov_jitter is not None and self.cov_jitter < 0:
            raise ValueError("cov_jitter must be >= 0")
        if self.init not in ("kmeans", "random"):
            raise ValueError(f"unknown init {self.init!r}")


def gaussian_logpdf(x, comp: GaussianComponent) -> float:
    return float(comp.logpdf(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def mixture_logpdf(x, model: GmmModel) -> float:
    return float(model.logpdf(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def neg_log_likelihood(model: GmmModel, data) -> float:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.size == 0:
        raise ValueError("empty data")
    return float(-model.logpdf(data).sum())


def e_step(model: GmmModel, data) -> np.ndarray:
    """Posterior component probabilities, one row per sample."""
    resp, _ = _e_step(model, np.atleast_2d(np.asarray(data, dtype=np.float64)))
    return resp


def _e_step(model, X):
    weighted = model.component_logpdf(X)
    norm = logsumexp(weighted, axis=1)
    if not np.all(np.isfinite(norm)):
        raise NumericError("total underflow in responsibilities")
    return np.exp(weighted - norm[:, None]), float(norm.sum())


def _m_step(X, resp, jitter):
    counts = resp.sum(axis=0)
    weights = counts / counts.sum()
    means = (resp.T @ X) / counts[:, None]
    covs = []
    eye = np.eye(X.shape[1])
    for k in range(resp.shape[1]):
        diff = X - means[k]
        cov = (resp[:, k, None] * diff).T @ diff / counts[k]
        cov = 0.5 * (cov + cov.T) + jitter * eye
        covs.append(cov)
    return counts, GmmModel.from_arrays(weights, means, covs)


def _initial_resp(X, K, cfg: EmConfig):
    n = len(X)
    if cfg.init == "random":
        return np.random.default_rng(cfg.seed).dirichlet(np.ones(K), size=n)
    labels, _ = kmeans(X, K, cfg.seed)
    # reseed empty clusters with the points farthest from their center
    for j in range(K):
        if not np.any(labels == j):
            counts = np.bincount(labels, minlength=K)
            donor = int(np.argmax(counts))
            members = np.flatnonzero(labels == donor)
            far = members[np.argmax(((X[members] - X[members].mean(0)) ** 2).sum(1))]
            labels[far] = j
    resp = np.zeros((n, K))
    resp[np.arange(n), labels] = 1.0
    return resp


def default_jitter(X: np.ndarray) -> float:
    var = X.var(axis=0).mean() if len(X) > 1 else 1.0
    return 1e-6 * (var if var > 0 else 1.0)


def fit_em(data, K: int, cfg: EmConfig = EmConfig(), init_resp=None) -> tuple[GmmModel, list[float]]:
    """Maximum-likelihood mixture fit.

    Returns the model and the total log-likelihood after every E-step. The
    run stops once the relative improvement drops below ``cfg.rel_tol``, when a
    step fails to improve (the previous iterate is kept), or after
    ``cfg.max_iters`` M-steps. ``init_resp`` overrides the seeding.
    """
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n = len(X)
    if K < 1:
        raise ValueError("K must be >= 1")
    if n < 2:
        raise ValueError("need at least two samples")
    if n < K:
        raise ValueError("more components than samples")
    jitter = default_jitter(X) if cfg.cov_jitter is None else cfg.cov_jitter
    resp = _initial_resp(X, K, cfg) if init_resp is None else np.array(init_resp, dtype=np.float64)

    reseeded = False
    trace: list[float] = []
    model = None
    for _ in range(cfg.max_iters):
        counts = resp.sum(axis=0)
        if np.any(counts < 1e-8):
            if reseeded:
                raise NumericError("component collapsed twice during EM")
            reseeded = True
            resp = _reseed(X, resp, model)
            counts = resp.sum(axis=0)
        _, candidate = _m_step(X, resp, jitter)
        new_resp, ll = _e_step(candidate, X)
        if trace and ll < trace[-1]:
            # the diagonal ridge makes the M-step inexact; a step that lowers the
            # likelihood only happens at a fixed point, so keep the previous iterate
            break
        model, resp = candidate, new_resp
        trace.append(ll)
        if len(trace) > 1 and trace[-1] - trace[-2] < cfg.rel_tol * abs(trace[-2]):
            break
    return model, trace


def _reseed(X, resp, model):
    """Hand the worst-explained sample to every empty component."""
    resp = resp.copy()
    if model is not None:
        worst = np.argsort(model.logpdf(X))
    else:
        worst = np.argsort(-((X - X.mean(0)) ** 2).sum(1))
    empty = np.flatnonzero(resp.sum(axis=0) < 1e-8)
    for j, i in zip(empty, worst):
        resp[i] = 0.0
        resp[i, j] = 1.0
    return resp


def sample(model: GmmModel, n: int, seed) -> np.ndarray:
    return model.sample_with_labels(n, seed)[0]


def match_components(fitted: GmmModel, truth: GmmModel) -> list[int]:
    """Permutation ``p`` minimising total mean distance, ``fitted[p[k]] ~ truth[k]``."""
    from scipy.optimize import linear_sum_assignment

    cost = ((truth.means[:, None, :] - fitted.means[None, :, :]) ** 2).sum(-1)
    _, cols = linear_sum_assignment(cost)
    return [int(c) for c in cols]


# -- binary format --------------------------------------------------------------


def gmm_to_bytes(model: GmmModel) -> bytes:
    d, K = model.dim, model.n_components
    parts = [GMM_MAGIC, struct.pack("<III", GMM_VERSION, d, K)]
    for c in model.components:
        parts.append(struct.pack("<d", c.weight))
        parts.append(c.mean.astype("<f8").tobytes())
        parts.append(np.ascontiguousarray(c.cov).astype("<f8").tobytes())
    return b"".join(parts)


def gmm_from_bytes(blob: bytes, offset: int = 0) -> tuple[GmmModel, int]:
    """Decode one model starting at ``offset``; returns it and the end offset."""
    if blob[offset : offset + 4] != GMM_MAGIC:
        raise ValueError(f"bad GMM magic at offset {offset}")
    if len(blob) < offset + 16:
        raise ValueError(f"truncated GMM header at offset {offset}")
    version, d, K = struct.unpack_from("<III", blob, offset + 4)
    if version != GMM_VERSION:
        raise ValueError(f"unsupported GMM version {version} at offset {offset}")
    pos = offset + 16
    size = K * 8 * (1 + d + d * d)
    if len(blob) < pos + size:
        raise ValueError(f"truncated GMM body at offset {pos}")
    weights, means, covs = [], [], []
    for _ in range(K):
        weights.append(struct.unpack_from("<d", blob, pos)[0])
        pos += 8
        means.append(np.frombuffer(blob, "<f8", d, pos).copy())
        pos += 8 * d
        covs.append(np.frombuffer(blob, "<f8", d * d, pos).reshape(d, d).copy())
        pos += 8 * d * d
    comps = tuple(GaussianComponent(m, c, w) for w, m, c in zip(weights, means, covs))
    return GmmModel(comps), pos
