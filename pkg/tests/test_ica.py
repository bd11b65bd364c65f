import itertools

import numpy as np
import pytest

from engage.dsp import PipelineConfig
from engage.ica import clean_ocular, fastica, fit_ica, identify_ocular, remove_components, whiten
from engage.synth import SubjectModel, gen_eeg


def three_sources(seed, n=5000):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 8, n)
    S = np.vstack([
        np.sin(2 * np.pi * 1.3 * t),
        np.sign(np.sin(2 * np.pi * 0.7 * t + 0.4)),
        rng.laplace(size=n),
    ])
    A = rng.normal(size=(3, 3))
    return S, A @ S


def matched_abs_corr(S, S_hat):
    """Best mean |corr| over source/estimate pairings."""
    C = np.abs(np.corrcoef(S, S_hat)[:3, 3:])
    return max(np.mean([C[i, p[i]] for i in range(3)]) for p in itertools.permutations(range(3)))


@pytest.mark.parametrize("seed", range(10))
def test_recovers_three_mixed_sources(seed):
    S, X = three_sources(seed)
    d = fit_ica(X, k=3, seed=seed)
    assert matched_abs_corr(S, d.sources(X)) >= 0.95


def test_whitening_gives_identity_covariance():
    _, X = three_sources(0)
    Z, _ = whiten(X, 3)
    np.testing.assert_allclose(Z @ Z.T / Z.shape[1], np.eye(3), atol=1e-10)


def test_whitening_reduces_k_on_rank_deficient_data():
    _, X = three_sources(1)
    X = np.vstack([X, X[0] + X[1]])
    with pytest.warns(RuntimeWarning):
        Z, W = whiten(X, 4)
    assert Z.shape[0] == 3


def test_whiten_rejects_too_few_samples():
    with pytest.raises(ValueError):
        whiten(np.zeros((4, 3)), 2)


def test_fastica_unmixing_is_orthogonal():
    _, X = three_sources(2)
    Z, _ = whiten(X, 3)
    res = fastica(Z)
    assert res.converged
    np.testing.assert_allclose(res.unmixing @ res.unmixing.T, np.eye(3), atol=1e-8)


def test_nonconvergence_is_reported_not_raised():
    Z, _ = whiten(np.random.default_rng(0).standard_normal((4, 2000)), 4)
    res = fastica(Z, max_iter=2, tol=1e-12)
    assert not res.converged and res.n_iter == 2


def test_removing_no_components_is_identity():
    _, X = three_sources(3)
    d = fit_ica(X, k=3)
    np.testing.assert_allclose(remove_components(X, d, []), X)
    np.testing.assert_allclose(remove_components(X, d, range(3)), np.broadcast_to(d.mean, X.shape), atol=1e-9)
    with pytest.raises(ValueError):
        remove_components(X, d, [3])


@pytest.fixture(scope="module")
def blink_scenario():
    subject = SubjectModel.sample("S01", 0)
    dirty = gen_eeg(subject, 60, 256, 128, blinks=True).samples
    clean = gen_eeg(subject, 60, 256, 128, blinks=False).samples
    return dirty, clean


def test_blink_component_is_identified(blink_scenario):
    dirty, _ = blink_scenario
    d = fit_ica(dirty, k=32, stride=8)
    bad = identify_ocular(d, [0, 1, 2, 3])
    assert len(bad) == 1
    assert d.kurtosis[bad[0]] > 10    # blinks are sparse, hence heavy-tailed


def test_identify_rejects_bad_indices(blink_scenario):
    d = fit_ica(blink_scenario[0][:8], k=8, stride=8)
    with pytest.raises(ValueError):
        identify_ocular(d, [])
    with pytest.raises(ValueError):
        identify_ocular(d, [8])


def test_blink_removal_cleans_frontal_and_spares_occipital(blink_scenario):
    dirty, clean = blink_scenario
    out = clean_ocular(dirty, PipelineConfig(ica_enabled=True))
    blink = np.abs(dirty[0] - clean[0])
    epochs = blink > 0.1 * blink.max()

    def rms(a):
        return np.sqrt(np.mean(np.square(a, dtype=np.float64)))

    frontal_reduction = 1 - rms(out[:4][:, epochs]) / rms(dirty[:4][:, epochs])
    occipital_change = abs(rms(out[-8:]) / rms(dirty[-8:]) - 1)
    assert frontal_reduction >= 0.80
    assert occipital_change <= 0.10


def test_clean_in_place(blink_scenario):
    dirty = blink_scenario[0][:, :4096].copy()
    expected = clean_ocular(dirty, PipelineConfig(ica_enabled=True))
    clean_ocular(dirty, PipelineConfig(ica_enabled=True), out=dirty)
    np.testing.assert_array_equal(dirty, expected)
