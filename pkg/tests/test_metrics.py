import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tidypsf.metrics import gaussian_window, metric_psnr, metric_rmse, metric_ssim, metrics_report


def test_rmse_known_value():
    a = np.array([[0.0, 1.0], [0.0, 1.0]])
    b = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert metric_rmse(a, b) == pytest.approx(np.sqrt(0.5), rel=1e-15)


def test_psnr_known_values():
    a = np.zeros((4, 4))
    assert metric_psnr(a, np.full((4, 4), 0.1)) == pytest.approx(20.0, rel=1e-12)
    # mse 2.5e-4 -> 10*log10(4000)
    assert metric_psnr(a, np.full((4, 4), 0.0158113883008419)) == pytest.approx(36.020599913279625, rel=1e-9)


def test_psnr_cap_for_identical():
    a = np.random.default_rng(0).uniform(size=(8, 8))
    assert metric_psnr(a, a) == 99.0
    assert metric_psnr(a, a + 1e-6) == 99.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), noise=st.floats(1e-3, 0.3))
def test_psnr_consistent_with_rmse(seed, noise):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(6, 6, 3))
    b = a + rng.normal(scale=noise, size=a.shape)
    assert metric_psnr(a, b) == pytest.approx(-20 * np.log10(metric_rmse(a, b)), rel=1e-12)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        metric_rmse(np.zeros((3, 3)), np.zeros((3, 4)))


def test_gaussian_window_normalized():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.array_equal(w, w.T)


def test_ssim_identical_is_one(rng):
    a = rng.uniform(size=(16, 16, 3))
    assert metric_ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_inverted_is_negative(rng):
    a = rng.uniform(size=(16, 16))
    assert metric_ssim(a, 1 - a) < 0


def test_ssim_matches_skimage(rng):
    metrics = pytest.importorskip("skimage.metrics")
    a = rng.uniform(size=(16, 16))
    b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
    ref = metrics.structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False, data_range=1.0)
    assert metric_ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_ssim_colour_matches_skimage(rng):
    metrics = pytest.importorskip("skimage.metrics")
    a = rng.uniform(size=(20, 18, 3))
    b = np.clip(a * 0.8 + 0.05, 0, 1)
    ref = metrics.structural_similarity(a, b, gaussian_weights=True, sigma=1.5, channel_axis=2,
                                        use_sample_covariance=False, data_range=1.0)
    assert metric_ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_ssim_small_image_rejected():
    with pytest.raises(ValueError):
        metric_ssim(np.zeros((10, 10)), np.zeros((10, 10)))


def test_report_aggregates(rng):
    a = rng.uniform(size=(12, 12, 3))
    small = rng.uniform(size=(5, 5, 3))
    rep = metrics_report([(a, a), (small, small * 0.5)], names=["big", "small"])
    assert [r["name"] for r in rep["per_image"]] == ["big", "small"]
    assert rep["per_image"][1]["ssim"] is None
    assert rep["ssim"] == pytest.approx(1.0)
    assert rep["rmse"] == pytest.approx(metric_rmse(small, small * 0.5) / 2)
