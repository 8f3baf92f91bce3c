"""PSNR and SSIM against closed forms and the scikit-image reference."""

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from splatflow.metrics import MetricReport, psnr, ssim, ssim_with_grad


def test_psnr_identical_is_infinite():
    img = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert psnr(img, img) == float("inf")


def test_psnr_closed_forms():
    a = np.zeros((10, 10))
    assert psnr(a, np.full((10, 10), 0.1)) == pytest.approx(20.0, abs=1e-12)
    assert psnr(a, np.ones((10, 10))) == pytest.approx(0.0, abs=1e-12)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError, match="shapes differ"):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_identical_is_one():
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(24, 24))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_matches_scikit_image():
    rng = np.random.default_rng(2)
    for shape in ((16, 16), (24, 31)):
        a = rng.uniform(size=shape)
        b = np.clip(a + rng.normal(scale=0.1, size=shape), 0, 1)
        expect = structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=False,
                                       data_range=1.0)
        assert ssim(a, b) == pytest.approx(expect, abs=1e-6)


def test_ssim_rgb_uses_channel_mean_gray():
    rng = np.random.default_rng(3)
    a = rng.uniform(size=(20, 20, 3))
    b = rng.uniform(size=(20, 20, 3))
    assert ssim(a, b) == pytest.approx(ssim(a.mean(axis=2), b.mean(axis=2)),
                                       abs=1e-12)


def test_ssim_near_one_for_tiny_noise():
    rng = np.random.default_rng(4)
    a = rng.uniform(0.2, 0.8, size=(32, 32))
    b = a + rng.normal(scale=1e-4, size=a.shape)
    assert ssim(a, b) >= 0.999


def test_ssim_symmetry():
    rng = np.random.default_rng(5)
    a = rng.uniform(size=(18, 18))
    b = rng.uniform(size=(18, 18))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError, match="smaller than"):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))


def test_ssim_with_grad_value_matches_ssim():
    rng = np.random.default_rng(6)
    a = rng.uniform(size=(16, 16, 3))
    b = rng.uniform(size=(16, 16, 3))
    val, grad = ssim_with_grad(a, b)
    assert val == pytest.approx(ssim(a, b), abs=1e-12)
    assert grad.shape == a.shape


def test_ssim_grad_matches_finite_differences():
    rng = np.random.default_rng(7)
    a = rng.uniform(size=(14, 14))
    b = np.clip(a + rng.normal(scale=0.15, size=a.shape), 0, 1)
    _, grad = ssim_with_grad(a, b)
    h = 1e-6
    for _ in range(12):
        i, j = rng.integers(0, 14, size=2)
        ap = a.copy(); ap[i, j] += h
        am = a.copy(); am[i, j] -= h
        fd = (ssim(ap, b) - ssim(am, b)) / (2 * h)
        assert grad[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-10)


def test_ssim_grad_matches_finite_differences_rgb():
    rng = np.random.default_rng(8)
    a = rng.uniform(size=(13, 13, 3))
    b = rng.uniform(size=(13, 13, 3))
    _, grad = ssim_with_grad(a, b)
    h = 1e-6
    for _ in range(8):
        i, j, c = rng.integers(0, 13), rng.integers(0, 13), rng.integers(0, 3)
        ap = a.copy(); ap[i, j, c] += h
        am = a.copy(); am[i, j, c] -= h
        fd = (ssim(ap, b) - ssim(am, b)) / (2 * h)
        assert grad[i, j, c] == pytest.approx(fd, rel=1e-5, abs=1e-10)


def test_metric_report_fields():
    r = MetricReport(psnr=30.0, ssim=0.95)
    assert r.psnr == 30.0 and r.ssim == 0.95
