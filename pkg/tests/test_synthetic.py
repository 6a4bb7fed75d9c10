import numpy as np
import pytest

from rpcate.synthetic import GenConfig, bias_amplitude, generate, mechanistic_surrogate, planted_bias


def test_same_seed_same_dataset():
    a, b = generate(GenConfig(m=50, seed=7)), generate(GenConfig(m=50, seed=7))
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y_true, b.y_true)
    c = generate(GenConfig(m=50, seed=8))
    assert not np.array_equal(a.X, c.X)


def test_monotone_noiseless_residual_increasing():
    d = generate(GenConfig(m=200, noise_std=0.0, bias_kind="monotone", seed=1))
    y = d.y[np.argsort(d.X[:, 0])]
    assert np.all(np.diff(y) > 0)


def test_monotone_amplitude_calibration():
    X = np.random.default_rng(0).uniform(size=(200_000, 3))
    b = planted_bias(X, "monotone", 0.02)
    assert abs(np.mean(np.abs(b)) - 10 * 0.02) < 2e-3


def test_periodic_mean_is_zero_within_three_se():
    d = generate(GenConfig(m=100_000, noise_std=0.0, bias_kind="periodic", seed=2))
    se = d.y.std(ddof=1) / np.sqrt(d.m)
    assert abs(d.y.mean()) < 3 * se


def test_mixed_is_sum():
    X = np.random.default_rng(3).uniform(size=(20, 2))
    np.testing.assert_allclose(planted_bias(X, "mixed", 0.01),
                               planted_bias(X, "monotone", 0.01) + planted_bias(X, "periodic", 0.01))


def test_mechanistic_error_is_several_percent():
    d = generate(GenConfig(m=2000, seed=0))
    are = np.mean(np.abs(d.y_me - d.y_true) / np.abs(d.y_true)) * 100
    assert 2.0 < are < 10.0
    assert np.all(mechanistic_surrogate(d.X) > 1.0)


def test_single_feature():
    d = generate(GenConfig(m=10, n=1))
    assert d.X.shape == (10, 1)


def test_amplitude_floor():
    assert bias_amplitude(0.0) == 0.1
    assert bias_amplitude(0.05) == pytest.approx(0.5)


@pytest.mark.parametrize("kw", [{"m": 1}, {"n": 0}, {"noise_std": -1.0}, {"bias_kind": "linear"}])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        GenConfig(**kw)
