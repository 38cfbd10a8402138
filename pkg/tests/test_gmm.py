import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from dmrcil.gmm import (
    EmConfig,
    GaussianComponent,
    GmmModel,
    NumericError,
    default_jitter,
    e_step,
    fit_em,
    gmm_from_bytes,
    gmm_to_bytes,
    match_components,
    mixture_logpdf,
    neg_log_likelihood,
)


def _random_spd(rng, d):
    A = rng.normal(size=(d, d))
    return A @ A.T + d * np.eye(d)


def test_logpdf_matches_scipy():
    rng = np.random.default_rng(0)
    for d in (1, 3, 7):
        mean, cov = rng.normal(size=d), _random_spd(rng, d)
        X = rng.normal(size=(20, d))
        ours = GaussianComponent(mean, cov).logpdf(X)
        np.testing.assert_allclose(ours, multivariate_normal(mean, cov).logpdf(X), rtol=1e-10)


def test_mixture_logpdf_is_logsumexp_of_components():
    rng = np.random.default_rng(1)
    model = GmmModel.from_arrays([0.2, 0.8], rng.normal(size=(2, 3)), [_random_spd(rng, 3) for _ in range(2)])
    x = rng.normal(size=3)
    dens = sum(c.weight * multivariate_normal(c.mean, c.cov).pdf(x) for c in model.components)
    assert mixture_logpdf(x, model) == pytest.approx(np.log(dens), rel=1e-10)


def test_far_point_stays_finite():
    model = GmmModel.from_arrays([1.0], [np.zeros(2)], [np.eye(2)])
    assert np.isfinite(model.logpdf(np.array([[1e3, 1e3]]))).all()


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        GmmModel((GaussianComponent([0.0], [[1.0]], 0.5), GaussianComponent([1.0], [[1.0]], 0.4)))


def test_non_pd_covariance_raises_numeric_error():
    comp = GaussianComponent([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NumericError):
        comp.logpdf(np.zeros((1, 2)))


def test_k1_is_closed_form():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 4)) @ rng.normal(size=(4, 4))
    model, trace = fit_em(X, 1)
    comp = model.components[0]
    np.testing.assert_allclose(comp.mean, X.mean(0), rtol=1e-12, atol=1e-12)
    expected = np.cov(X.T, bias=True) + default_jitter(X) * np.eye(4)
    np.testing.assert_allclose(comp.cov, expected, rtol=1e-10, atol=1e-12)
    assert comp.weight == 1.0
    assert len(trace) <= 2


def test_two_component_recovery():
    truth = GmmModel.from_arrays([0.5, 0.5], [[-4.0, 0.0], [4.0, 0.0]], [np.eye(2), np.eye(2)])
    X, labels = truth.sample_with_labels(2000, 3)
    model, _ = fit_em(X, 2)
    perm = match_components(model, truth)
    for k in range(2):
        assert np.linalg.norm(model.means[perm[k]] - truth.means[k]) / np.sqrt(2) < 0.1
        # on well separated lobes EM lands next to the complete-data estimate
        np.testing.assert_allclose(model.means[perm[k]], X[labels == k].mean(0), atol=1e-2)


def test_e_step_rows_sum_to_one():
    rng = np.random.default_rng(4)
    model = GmmModel.from_arrays([0.3, 0.7], rng.normal(size=(2, 2)) * 3, [np.eye(2)] * 2)
    resp = e_step(model, rng.normal(size=(50, 2)))
    np.testing.assert_allclose(resp.sum(1), 1.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
def test_trace_is_monotone(seed, d, K):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(120, d)) + rng.integers(0, 3, size=(120, 1)) * 3.0
    _, trace = fit_em(X, K, EmConfig(seed=seed, init="random" if seed % 2 else "kmeans"))
    assert np.all(np.diff(trace) >= -1e-9)


def test_errors_on_bad_inputs():
    with pytest.raises(ValueError, match="more components than samples"):
        fit_em(np.zeros((3, 2)) + np.arange(3)[:, None], 4)
    with pytest.raises(ValueError):
        neg_log_likelihood(GmmModel.from_arrays([1.0], [np.zeros(2)], [np.eye(2)]), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        EmConfig(rel_tol=0.0)


def test_sampling_is_seeded():
    model = GmmModel.from_arrays([0.5, 0.5], [[0.0], [5.0]], [[[1.0]], [[2.0]]])
    a, _ = model.sample_with_labels(100, 9)
    b, _ = model.sample_with_labels(100, 9)
    assert a.tobytes() == b.tobytes()


def test_binary_roundtrip_and_errors():
    rng = np.random.default_rng(5)
    model = GmmModel.from_arrays([0.25, 0.75], rng.normal(size=(2, 3)), [_random_spd(rng, 3) for _ in range(2)])
    blob = gmm_to_bytes(model)
    back, end = gmm_from_bytes(blob)
    assert end == len(blob)
    assert gmm_to_bytes(back) == blob
    with pytest.raises(ValueError, match="offset 0"):
        gmm_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError, match="truncated"):
        gmm_from_bytes(blob[:-8])
