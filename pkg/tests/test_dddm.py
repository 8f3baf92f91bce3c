"""Per-point deformation curves: evaluation, gradients, normalization."""

import numpy as np
import pytest

from splatflow.core import CH_DC, CH_MU, CH_Q, N_CHANNELS, ChannelCurve
from splatflow.dddm import (
    DeformedAttributes,
    deform_point,
    deform_scene,
    eval_fourier,
    eval_poly,
    eval_residual,
    residual_gradients,
    scale_timestamp,
    scene_residuals,
)

from helpers import rand_scene


# Oracle: naive coefficient-times-power sum, no Horner.
def poly_oracle(coeffs, ts):
    return sum(c * ts**k for k, c in enumerate(coeffs))


# Oracle: the printed pairing, term by term.
def fourier_oracle(f_sin, f_cos, ts):
    total = 0.0
    for l0, (a, b) in enumerate(zip(f_sin, f_cos)):
        l = l0 + 1
        total += a * np.cos(l * ts) + b * np.sin(l * ts)
    return total


def test_scale_timestamp_affine():
    assert scale_timestamp(2.0, 0.25, 0.5) == pytest.approx(1.25)
    assert scale_timestamp(1.0, 0.0, 0.0) == 0.0
    with pytest.raises(ValueError, match="unnormalized timestamp"):
        scale_timestamp(1.0, 0.0, 1.0001)
    with pytest.raises(ValueError, match="unnormalized timestamp"):
        scale_timestamp(1.0, 0.0, -0.0001)


def curve(coeffs, f_sin=(), f_cos=()):
    return ChannelCurve(np.asarray(coeffs, dtype=float),
                        np.asarray(f_sin, dtype=float),
                        np.asarray(f_cos, dtype=float))


def test_eval_poly_matches_power_sum():
    rng = np.random.default_rng(3)
    for _ in range(50):
        coeffs = rng.normal(size=rng.integers(1, 7))
        ts = rng.uniform(-3, 3)
        assert eval_poly(curve(coeffs), ts) == pytest.approx(
            poly_oracle(coeffs, ts), rel=1e-12, abs=1e-12)


def test_eval_poly_degenerate_orders():
    assert eval_poly(curve([2.5]), 17.0) == 2.5
    assert eval_poly(curve([]), 17.0) == 0.0


def test_eval_fourier_matches_oracle():
    rng = np.random.default_rng(4)
    for _ in range(50):
        order = rng.integers(1, 6)
        f_sin = rng.normal(size=order)
        f_cos = rng.normal(size=order)
        ts = rng.uniform(-7, 7)
        assert eval_fourier(curve([0.0], f_sin, f_cos), ts) == pytest.approx(
            fourier_oracle(f_sin, f_cos, ts), rel=1e-12, abs=1e-12)


def test_eval_fourier_transcendental_pins():
    # At t_s = pi the l=1 cosine term is exactly -f_sin[0], sine term vanishes.
    assert eval_fourier(curve([0.0], [0.7], [0.3]), np.pi) == pytest.approx(
        -0.7, abs=1e-12)
    # At t_s = 0 every cosine is 1, every sine is 0: the sum of f_sin entries.
    c = curve([0.0], [0.1, 0.2, 0.3], [5.0, 6.0, 7.0])
    assert eval_fourier(c, 0.0) == pytest.approx(0.6, abs=1e-12)


def test_eval_fourier_empty():
    assert eval_fourier(curve([0.0]), 1.0) == 0.0


def test_residual_is_sum_of_parts():
    rng = np.random.default_rng(5)
    coeffs = rng.normal(size=4)
    f_sin = rng.normal(size=3)
    f_cos = rng.normal(size=3)
    lam_s, lam_b = 3.7, -1.2
    for t in rng.uniform(0, 1, size=10):
        ts = lam_s * t + lam_b
        assert eval_residual(curve(coeffs, f_sin, f_cos), lam_s, lam_b, t) \
            == pytest.approx(poly_oracle(coeffs, ts)
                             + fourier_oracle(f_sin, f_cos, ts), rel=1e-12)


def test_residual_linear_in_coefficients():
    rng = np.random.default_rng(6)
    c1, c2 = rng.normal(size=(2, 4))
    s1, s2 = rng.normal(size=(2, 2))
    k1, k2 = rng.normal(size=(2, 2))
    t = 0.83
    lhs = eval_residual(curve(2 * c1 + c2, 2 * s1 + s2, 2 * k1 + k2), 1.0, 0.0, t)
    rhs = 2 * eval_residual(curve(c1, s1, k1), 1.0, 0.0, t) \
        + eval_residual(curve(c2, s2, k2), 1.0, 0.0, t)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_residual_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    h = 1e-5
    for _ in range(100):
        n_poly = int(rng.integers(1, 6))
        order = int(rng.integers(0, 5))
        coeffs = rng.normal(size=n_poly)
        f_sin = rng.normal(size=order)
        f_cos = rng.normal(size=order)
        lam_s = rng.uniform(0.3, 3.0)
        lam_b = rng.uniform(-0.5, 0.5)
        t = rng.uniform(h, 1.0 - h)
        g = residual_gradients(curve(coeffs, f_sin, f_cos), lam_s, lam_b, t)

        def val(c=coeffs, s=f_sin, k=f_cos, ls=lam_s, lb=lam_b, tt=t):
            return eval_residual(curve(c, s, k), ls, lb, tt)

        for j in range(n_poly):
            e = np.zeros(n_poly); e[j] = h
            fd = (val(c=coeffs + e) - val(c=coeffs - e)) / (2 * h)
            assert g.d_poly[j] == pytest.approx(fd, rel=1e-6, abs=1e-9)
        for j in range(order):
            e = np.zeros(order); e[j] = h
            fd = (val(s=f_sin + e) - val(s=f_sin - e)) / (2 * h)
            assert g.d_fourier_sin[j] == pytest.approx(fd, rel=1e-6, abs=1e-9)
            fd = (val(k=f_cos + e) - val(k=f_cos - e)) / (2 * h)
            assert g.d_fourier_cos[j] == pytest.approx(fd, rel=1e-6, abs=1e-9)
        fd = (val(ls=lam_s + h) - val(ls=lam_s - h)) / (2 * h)
        assert g.d_lambda_s == pytest.approx(fd, rel=1e-6, abs=1e-9)
        fd = (val(lb=lam_b + h) - val(lb=lam_b - h)) / (2 * h)
        assert g.d_lambda_b == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_deform_point_normalizes_quaternion():
    rng = np.random.default_rng(9)
    scene = rand_scene(rng, n=6, curve_scale=0.3)
    for t in (0.0, 0.47, 1.0):
        for i in range(scene.n):
            att = deform_point(scene.point(i), t)
            assert isinstance(att, DeformedAttributes)
            assert np.linalg.norm(att.q_t) == pytest.approx(1.0, abs=1e-12)


def test_deform_point_rejects_degenerate_rotation():
    rng = np.random.default_rng(10)
    scene = rand_scene(rng, n=1, poly_order=1)
    # Drive the raw quaternion to zero at t = 1.
    scene.poly[0, CH_Q, 0] = 0.0
    scene.poly[0, CH_Q, 1] = -scene.q0[0]
    scene.four_sin[0] = 0.0
    scene.four_cos[0] = 0.0
    scene.dilation[0] = (1.0, 0.0)
    with pytest.raises(ValueError, match="degenerate rotation"):
        deform_point(scene.point(0), 1.0)


def test_deform_point_rejects_bad_time():
    rng = np.random.default_rng(12)
    scene = rand_scene(rng, n=1)
    with pytest.raises(ValueError, match="unnormalized timestamp"):
        deform_point(scene.point(0), -0.5)


def test_scene_residuals_match_scalar_path():
    rng = np.random.default_rng(13)
    scene = rand_scene(rng, n=9, poly_order=3, fourier_order=4)
    t = 0.37
    res, _ = scene_residuals(scene, t)
    assert res.shape == (9, N_CHANNELS)
    for i in range(scene.n):
        for ch in range(N_CHANNELS):
            c = curve(scene.poly[i, ch], scene.four_sin[i, ch],
                      scene.four_cos[i, ch])
            expect = eval_residual(c, scene.dilation[i, 0],
                                   scene.dilation[i, 1], t)
            assert res[i, ch] == pytest.approx(expect, rel=1e-12, abs=1e-12)


def test_deform_scene_matches_deform_point():
    rng = np.random.default_rng(14)
    scene = rand_scene(rng, n=7, curve_scale=0.1)
    t = 0.61
    dfm = deform_scene(scene, t)
    for i in range(scene.n):
        att = deform_point(scene.point(i), t)
        np.testing.assert_allclose(dfm.mu[i], att.mu_t, atol=1e-14)
        np.testing.assert_allclose(dfm.q[i], att.q_t, atol=1e-14)
        np.testing.assert_allclose(dfm.dc[i], att.dc_t, atol=1e-14)


def test_deform_scene_channel_layout():
    rng = np.random.default_rng(15)
    scene = rand_scene(rng, n=4, curve_scale=0.0)
    # Zero curves: deformation returns the base attributes per channel block.
    dfm = deform_scene(scene, 0.5)
    np.testing.assert_allclose(dfm.mu, scene.mu0, atol=1e-15)
    np.testing.assert_allclose(dfm.q, scene.q0 / np.linalg.norm(
        scene.q0, axis=1, keepdims=True), atol=1e-15)
    np.testing.assert_allclose(dfm.dc, scene.sh_dc, atol=1e-15)
    assert CH_MU == slice(0, 3) and CH_Q == slice(3, 7) and CH_DC == slice(7, 10)
