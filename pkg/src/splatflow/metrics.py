"""Image quality metrics: PSNR and SSIM (with an analytic SSIM gradient).

SSIM follows the standard reference setup: 11x11 Gaussian window, sigma 1.5,
k1 = 0.01, k2 = 0.03, dynamic range 1, statistics over valid windows only,
RGB reduced to grayscale by channel mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

_WIN = 11
_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03
_C1 = (_K1 * 1.0) ** 2
_C2 = (_K2 * 1.0) ** 2
_PAD = (_WIN - 1) // 2


def _window() -> np.ndarray:
    r = np.arange(_WIN) - (_WIN - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * _SIGMA ** 2))
    return g / g.sum()


_G = _window()


def _filter_valid(x: np.ndarray) -> np.ndarray:
    """Gaussian-window filtering, valid region only. The window is separable,
    so two 1D passes; the zero-padded border ring is cropped away."""
    t = convolve1d(x, _G, axis=0, mode="constant")
    t = convolve1d(t, _G, axis=1, mode="constant")
    return t[_PAD:-_PAD, _PAD:-_PAD]


def _filter_full(x: np.ndarray) -> np.ndarray:
    """Full-mode counterpart: every output the window can reach."""
    t = np.pad(x, _PAD)
    t = convolve1d(t, _G, axis=0, mode="constant")
    return convolve1d(t, _G, axis=1, mode="constant")


def _gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=2) if img.ndim == 3 else img


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) in dB; +inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    a = _gray(a)
    b = _gray(b)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    if min(a.shape) < _WIN:
        raise ValueError(f"image smaller than the {_WIN}x{_WIN} SSIM window")
    s_map, _ = _ssim_parts(a, b)
    return float(s_map.mean())


def _ssim_parts(a: np.ndarray, b: np.ndarray):
    mu1 = _filter_valid(a)
    mu2 = _filter_valid(b)
    s11 = _filter_valid(a * a) - mu1 * mu1
    s22 = _filter_valid(b * b) - mu2 * mu2
    s12 = _filter_valid(a * b) - mu1 * mu2
    A1 = 2.0 * mu1 * mu2 + _C1
    A2 = 2.0 * s12 + _C2
    B1 = mu1 * mu1 + mu2 * mu2 + _C1
    B2 = s11 + s22 + _C2
    s_map = (A1 * A2) / (B1 * B2)
    return s_map, (mu1, mu2, A1, A2, B1, B2)


def ssim_with_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """SSIM plus d(SSIM)/da, shaped like a (the rendered image).

    The gradient scatters three per-window weight fields back through the
    window (a full-mode convolution is the transpose of the valid-mode one):
    a constant term, a term multiplying a, and a term multiplying b.
    """
    a_in = np.asarray(a, dtype=np.float64)
    ag = _gray(a_in)
    bg_ = _gray(b)
    s_map, (mu1, mu2, A1, A2, B1, B2) = _ssim_parts(ag, bg_)
    n = s_map.size
    S = s_map
    c1 = (2.0 * mu2 * A2 - 2.0 * mu2 * A1) / (B1 * B2) \
        - 2.0 * mu1 * S / B1 + 2.0 * mu1 * S / B2
    c2 = -2.0 * S / B2
    c3 = 2.0 * A1 / (B1 * B2)
    grad = (_filter_full(c1) + ag * _filter_full(c2)
            + bg_ * _filter_full(c3)) / n
    if a_in.ndim == 3:
        grad = np.repeat(grad[:, :, None] / 3.0, 3, axis=2)
    return float(S.mean()), grad


@dataclass
class MetricReport:
    psnr: float
    ssim: float
