import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmrcil.gmm import EmConfig
from dmrcil.memory import (
    BankFormatError,
    ClassMemory,
    MemoryBank,
    UnknownClassError,
    bank_from_bytes,
    bank_summary_json,
    bank_to_bytes,
    degrade,
    fit_class_memory,
    generate_pseudo,
    load_bank,
    memory_footprint,
    mmd_to_truth,
    save_bank,
)
from dmrcil.silhouette import KSelectConfig


def _dmr(d=2, K=1, cid=0, seed=0):
    rng = np.random.default_rng(seed)
    covs = []
    for _ in range(K):
        A = rng.normal(size=(d, d))
        covs.append(A @ A.T + np.eye(d))
    w = rng.dirichlet(np.ones(K)) if K > 1 else [1.0]
    return ClassMemory(cid, "dmr", w, rng.normal(size=(K, d)) * 5, covs)


def test_degrade_diagonal_example():
    mem = ClassMemory(0, "dmr", [1.0], [[0.0, 0.0]], [np.diag([4.0, 9.0])])
    np.testing.assert_allclose(degrade(mem, "d-std").spread, [[2.0, 3.0]])
    assert degrade(mem, "dmr-lite").spread[0] == pytest.approx(np.sqrt(6.5))
    assert degrade(mem, "prior").spread[0] == pytest.approx(np.sqrt(6.5))


def test_degrade_keeps_means_and_weights():
    mem = _dmr(d=3, K=2)
    for target in ("d-std", "dmr-lite"):
        out = degrade(mem, target)
        np.testing.assert_array_equal(out.means, mem.means)
        np.testing.assert_array_equal(out.weights, mem.weights)


def test_degrade_chain_agrees_with_direct():
    mem = _dmr(d=4, K=2, seed=3)
    direct = degrade(mem, "dmr-lite")
    via = degrade(degrade(mem, "d-std"), "dmr-lite")
    np.testing.assert_allclose(via.spread, direct.spread, rtol=1e-12)


def test_prior_collapse_matches_mixture_moments():
    mem = _dmr(d=3, K=2, seed=4)
    prior = degrade(mem, "prior")
    w = mem.weights
    mean = w @ mem.means
    second = sum(w[k] * (np.trace(mem.spread[k]) + ((mem.means[k] - mean) ** 2).sum()) for k in range(2))
    np.testing.assert_allclose(prior.means[0], mean)
    assert prior.spread[0] ** 2 * 3 == pytest.approx(second)


def test_degrade_cannot_restore():
    lite = degrade(_dmr(), "dmr-lite")
    with pytest.raises(ValueError, match="cannot be restored"):
        degrade(lite, "dmr")


@pytest.mark.parametrize("d", [16, 512])
@pytest.mark.parametrize("K", [1, 2])
def test_footprint_formulas(d, K):
    mem = ClassMemory(0, "dmr", np.ones(K) / K, np.zeros((K, d)), np.broadcast_to(np.eye(d), (K, d, d)))
    assert memory_footprint(mem) == K * (d + d * d)
    assert memory_footprint(degrade(mem, "d-std")) == K * 2 * d
    assert memory_footprint(degrade(mem, "dmr-lite")) == K * (d + 1)
    assert memory_footprint(degrade(mem, "prior")) == d + 1
    assert memory_footprint(mem, include_weights=True) == K * (d + d * d) + K


def test_footprint_d512_k1():
    mem = ClassMemory(0, "dmr", [1.0], np.zeros((1, 512)), [np.eye(512)])
    assert memory_footprint(mem) == 262_656


def test_sampling_is_seed_deterministic_and_unknown_class_fails():
    bank = MemoryBank(2)
    bank.add(_dmr(cid=7))
    a = generate_pseudo(bank, 7, 50, seed=1)
    assert a.tobytes() == generate_pseudo(bank, 7, 50, seed=1).tobytes()
    with pytest.raises(UnknownClassError):
        generate_pseudo(bank, 3, 5, seed=0)


def test_fit_prior_and_dmr_on_lobes():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(size=(150, 8)), rng.normal(size=(150, 8)) + 10.0])
    prior = fit_class_memory(X, "prior")
    assert prior.n_components == 1
    np.testing.assert_allclose(prior.means[0], X.mean(0))
    assert prior.spread[0] == pytest.approx(np.sqrt(X.var(0).mean()))
    dmr = fit_class_memory(X, "dmr", KSelectConfig(), EmConfig())
    assert dmr.n_components == 2


def test_mmd_zero_for_same_distribution_and_positive_for_shift():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(300, 3)), rng.normal(size=(300, 3))
    assert abs(mmd_to_truth(X, Y)) < 0.02
    assert mmd_to_truth(X, Y + 2.0) > 0.1
    with pytest.raises(ValueError, match="unbiased"):
        mmd_to_truth(X[:1], Y)


def test_bank_roundtrip_and_corruption(tmp_path):
    bank = MemoryBank(3)
    bank.add(_dmr(d=3, K=2, cid=4))
    bank.add(degrade(_dmr(d=3, K=1, cid=1, seed=2), "d-std"))
    bank.add(degrade(_dmr(d=3, K=2, cid=9, seed=5), "dmr-lite"))
    bank.add(degrade(_dmr(d=3, K=2, cid=2, seed=6), "prior"))
    blob = bank_to_bytes(bank)
    back = bank_from_bytes(blob)
    assert bank_to_bytes(back) == blob
    assert back.classes == [1, 2, 4, 9]
    path = tmp_path / "m.bank"
    save_bank(bank, path)
    assert load_bank(path).footprint() == bank.footprint()
    with pytest.raises(BankFormatError, match="offset"):
        bank_from_bytes(blob[:-5])
    with pytest.raises(BankFormatError, match="offset 0"):
        bank_from_bytes(b"NOPE" + blob[4:])
    assert '"fidelity": "dmr"' in bank_summary_json(bank)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 3))
def test_degradation_never_increases_footprint(seed, d, K):
    mem = _dmr(d=d, K=K, seed=seed)
    sizes = [memory_footprint(degrade(mem, f)) for f in ("dmr", "d-std", "dmr-lite")]
    assert sizes[0] >= sizes[1] >= sizes[2]
    for target in ("d-std", "dmr-lite", "prior"):
        assert np.all(np.asarray(degrade(mem, target).spread) > 0)
