"""Dual-domain deformation: per-channel polynomial + Fourier residual curves.

Each point carries 10 scalar curves (3 position, 4 quaternion, 3 DC color)
evaluated at a per-point scaled time t_s = lambda_s * t + lambda_b. The
Fourier series is

    F_L(t_s) = sum_l f_sin^l * cos(l * t_s) + f_cos^l * sin(l * t_s)

with the sin/cos coefficient names deliberately attached to the opposite
basis function; both are free parameters, so only the naming is unusual.

Scalar functions mirror the per-curve definitions one-to-one; the *scene*
variants evaluate all points and channels at once and cache the bases the
backward pass needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CH_DC, CH_MU, CH_Q, ChannelCurve, DynamicGaussian, Scene, SceneGrads

_QNORM_MIN = 1e-8


def _check_time(t: float) -> float:
    t = float(t)
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"unnormalized timestamp {t}")
    return t


def scale_timestamp(lambda_s: float, lambda_b: float, t: float) -> float:
    """Per-point time dilation t_s = lambda_s * t + lambda_b. No clamping."""
    return lambda_s * _check_time(t) + lambda_b


def eval_poly(curve: ChannelCurve, t_s: float) -> float:
    """P_N(t_s) by Horner's scheme."""
    acc = 0.0
    for a in curve.poly_coeffs[::-1]:
        acc = acc * t_s + a
    return float(acc)


def eval_fourier(curve: ChannelCurve, t_s: float) -> float:
    L = curve.fourier_sin.shape[0]
    if L == 0:
        return 0.0
    l = np.arange(1, L + 1, dtype=np.float64)
    return float(curve.fourier_sin @ np.cos(l * t_s) + curve.fourier_cos @ np.sin(l * t_s))


def eval_residual(curve: ChannelCurve, lambda_s: float, lambda_b: float, t: float) -> float:
    """D(t) = P_N(t_s) + F_L(t_s) at the scaled time."""
    t_s = scale_timestamp(lambda_s, lambda_b, t)
    return eval_poly(curve, t_s) + eval_fourier(curve, t_s)


@dataclass
class ResidualGradients:
    """Partials of one channel's D(t) w.r.t. its own parameters."""

    d_poly: np.ndarray        # (N+1,)  dD/da_n = t_s^n
    d_fourier_sin: np.ndarray  # (L,)   dD/df_sin^l = cos(l t_s)
    d_fourier_cos: np.ndarray  # (L,)   dD/df_cos^l = sin(l t_s)
    d_ts: float
    d_lambda_s: float
    d_lambda_b: float


def residual_gradients(curve: ChannelCurve, lambda_s: float, lambda_b: float,
                       t: float) -> ResidualGradients:
    t = _check_time(t)
    t_s = lambda_s * t + lambda_b
    N = curve.poly_coeffs.shape[0] - 1
    L = curve.fourier_sin.shape[0]
    n = np.arange(N + 1, dtype=np.float64)
    tpow = t_s ** n
    l = np.arange(1, L + 1, dtype=np.float64)
    cosl, sinl = np.cos(l * t_s), np.sin(l * t_s)
    d_ts = float(curve.poly_coeffs[1:] @ (n[1:] * t_s ** (n[1:] - 1))) if N >= 1 else 0.0
    d_ts += float(l @ (-curve.fourier_sin * sinl + curve.fourier_cos * cosl))
    return ResidualGradients(d_poly=tpow, d_fourier_sin=cosl, d_fourier_cos=sinl,
                             d_ts=d_ts, d_lambda_s=d_ts * t, d_lambda_b=d_ts)


@dataclass
class DeformedAttributes:
    mu_t: np.ndarray   # (3,)
    q_t: np.ndarray    # (4,) unit norm
    dc_t: np.ndarray   # (3,)


def deform_point(p: DynamicGaussian, t: float) -> DeformedAttributes:
    """Apply the point's residual curves at time t. Scale/opacity stay fixed."""
    t = _check_time(t)
    res = np.array([eval_residual(c, p.dilation_scale, p.dilation_base, t)
                    for c in p.curves])
    mu_t = p.mu0 + res[CH_MU]
    q_raw = p.q0 + res[CH_Q]
    norm = float(np.linalg.norm(q_raw))
    if norm < _QNORM_MIN:
        raise ValueError("degenerate rotation")
    dc_t = p.sh_coeffs[0] + res[CH_DC]
    return DeformedAttributes(mu_t=mu_t, q_t=q_raw / norm, dc_t=dc_t)


# -- vectorized scene-level evaluation ---------------------------------------

@dataclass
class ResidualCache:
    """Bases of one scene-wide residual evaluation, reused by backward."""

    t: float
    t_s: np.ndarray    # (P,)
    tpow: np.ndarray   # (P, N+1)
    cosl: np.ndarray   # (P, L)
    sinl: np.ndarray   # (P, L)
    dD_dts: np.ndarray  # (P, 10)


def scene_residuals(scene: Scene, t: float) -> tuple[np.ndarray, ResidualCache]:
    """Evaluate all 10 residual channels of every point at unchecked time t.

    Returns D of shape (P, 10) and the basis cache. Callers feeding t from a
    frame validate it; the smoothness loss probes t + eps which may exceed 1.
    """
    P = scene.n
    N = scene.poly_order
    L = scene.fourier_order
    t_s = scene.dilation[:, 0] * t + scene.dilation[:, 1]
    tpow = t_s[:, None] ** np.arange(N + 1)
    D = np.einsum("pcn,pn->pc", scene.poly, tpow)
    dD_dts = np.einsum("pcn,pn->pc", scene.poly[:, :, 1:],
                       np.arange(1, N + 1) * tpow[:, :N]) if N >= 1 \
        else np.zeros((P, scene.poly.shape[1]))
    if L > 0:
        l = np.arange(1, L + 1, dtype=np.float64)
        ang = t_s[:, None] * l
        cosl, sinl = np.cos(ang), np.sin(ang)
        D += np.einsum("pcl,pl->pc", scene.four_sin, cosl)
        D += np.einsum("pcl,pl->pc", scene.four_cos, sinl)
        dD_dts += np.einsum("pcl,pl->pc", scene.four_sin, -l * sinl)
        dD_dts += np.einsum("pcl,pl->pc", scene.four_cos, l * cosl)
    else:
        cosl = sinl = np.zeros((P, 0))
    return D, ResidualCache(t=t, t_s=t_s, tpow=tpow, cosl=cosl, sinl=sinl, dD_dts=dD_dts)


def residuals_backward(scene: Scene, cache: ResidualCache, dL_dD: np.ndarray,
                       grads: SceneGrads) -> None:
    """Accumulate dL/dD (P, 10) into curve-coefficient and dilation gradients."""
    grads.poly += dL_dD[:, :, None] * cache.tpow[:, None, :]
    if cache.cosl.shape[1] > 0:
        grads.four_sin += dL_dD[:, :, None] * cache.cosl[:, None, :]
        grads.four_cos += dL_dD[:, :, None] * cache.sinl[:, None, :]
    dL_dts = np.sum(dL_dD * cache.dD_dts, axis=1)
    grads.dilation[:, 0] += dL_dts * cache.t
    grads.dilation[:, 1] += dL_dts


@dataclass
class DeformedScene:
    """All points' deformed attributes at one time, plus backward state."""

    mu: np.ndarray        # (P, 3)
    q: np.ndarray         # (P, 4) unit
    dc: np.ndarray        # (P, 3)
    q_raw_norm: np.ndarray  # (P,)
    cache: ResidualCache


def deform_scene(scene: Scene, t: float) -> DeformedScene:
    D, cache = scene_residuals(scene, t)
    mu = scene.mu0 + D[:, CH_MU]
    q_raw = scene.q0 + D[:, CH_Q]
    norm = np.linalg.norm(q_raw, axis=1)
    if np.any(norm < _QNORM_MIN):
        raise ValueError("degenerate rotation")
    dc = scene.sh_dc + D[:, CH_DC]
    return DeformedScene(mu=mu, q=q_raw / norm[:, None], dc=dc,
                         q_raw_norm=norm, cache=cache)


def deform_backward(scene: Scene, dfm: DeformedScene, dL_dmu: np.ndarray,
                    dL_dq: np.ndarray, dL_ddc: np.ndarray, grads: SceneGrads) -> None:
    """Chain gradients on deformed attributes back to base fields and curves.

    dL_dq is w.r.t. the *unit* quaternion; the normalization Jacobian
    (I - q q^T) / |q_raw| maps it to the raw additive quaternion.
    """
    dL_dq_raw = (dL_dq - dfm.q * np.sum(dL_dq * dfm.q, axis=1, keepdims=True)) \
        / dfm.q_raw_norm[:, None]
    grads.mu0 += dL_dmu
    grads.q0 += dL_dq_raw
    grads.sh_dc += dL_ddc
    dL_dD = np.concatenate([dL_dmu, dL_dq_raw, dL_ddc], axis=1)
    residuals_backward(scene, dfm.cache, dL_dD, grads)
