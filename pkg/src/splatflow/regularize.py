"""Temporal smoothness and local-rigidity regularizers on the residual curves.

Both losses use unsquared L2 norms of residual differences, averaged over
points so their weights do not depend on point count, with a zero subgradient
at a zero-length difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import CH_MU, Scene, SceneGrads
from .dddm import residuals_backward, scene_residuals

_NORM_EPS = 0.0   # exact norms; zero-length differences get zero gradient


@dataclass
class KnnIndex:
    """Fixed neighbor table: for each point, K neighbor indices by base position."""

    neighbors: np.ndarray   # (P, K) int
    built_at: int = 0

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]


def build_knn(scene: Scene, K: int, built_at: int = 0) -> KnnIndex:
    """Exact K nearest neighbors of the base positions, ties to lower index."""
    P = scene.n
    if P <= K:
        raise ValueError(f"point count {P} must exceed K={K}")
    tree = cKDTree(scene.mu0)
    # Query extra candidates so equidistant ties can be re-broken by index.
    m = min(P, K + 8)
    dist, idx = tree.query(scene.mu0, k=m)
    out = np.empty((P, K), dtype=np.int64)
    for i in range(P):
        cand_d, cand_i = dist[i], idx[i]
        keep = cand_i != i
        cand_d, cand_i = cand_d[keep], cand_i[keep]
        order = np.lexsort((cand_i, cand_d))
        chosen = cand_i[order[:K]]
        if chosen.size < K or (chosen.size and cand_d[order[K - 1]] == cand_d[order[-1]]):
            # Tie spills past the candidate set: fall back to exact all-pairs.
            d_all = np.linalg.norm(scene.mu0 - scene.mu0[i], axis=1)
            d_all[i] = np.inf
            order_all = np.lexsort((np.arange(P), d_all))
            chosen = order_all[:K]
        out[i] = chosen
    return KnnIndex(neighbors=out, built_at=built_at)


def _norms_and_grads(diff: np.ndarray):
    """Row norms of (R, C) diffs and d norm/d diff with 0 subgradient at 0."""
    norms = np.linalg.norm(diff, axis=-1)
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = diff / safe[..., None]
    unit[norms == 0.0] = 0.0
    return norms, unit


def time_smooth_loss(scene: Scene, t: float) -> tuple[float, SceneGrads]:
    """Mean over points of || D(t) - D(t + eps) ||_2 over all 10 channels.

    eps = 0.1 / frame_count; t + eps may exceed 1, which is fine since the
    curves are total functions of scaled time.

    The difference of two curve evaluations is the curve applied to the
    difference of the basis rows, so the heavy coefficient arrays are
    contracted once instead of twice; only the dilation gradient needs each
    time's own basis derivative.
    """
    if scene.frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"unnormalized timestamp {t}")
    eps = 0.1 / scene.frame_count
    N, L = scene.poly_order, scene.fourier_order
    ts0 = scene.dilation[:, 0] * t + scene.dilation[:, 1]
    ts1 = scene.dilation[:, 0] * (t + eps) + scene.dilation[:, 1]
    npow = np.arange(N + 1)
    pow0 = ts0[:, None] ** npow
    pow1 = ts1[:, None] ** npow
    dD = np.einsum("pcn,pn->pc", scene.poly, pow0 - pow1)
    if L > 0:
        l = np.arange(1, L + 1, dtype=np.float64)
        cos0, sin0 = np.cos(ts0[:, None] * l), np.sin(ts0[:, None] * l)
        cos1, sin1 = np.cos(ts1[:, None] * l), np.sin(ts1[:, None] * l)
        dD += np.einsum("pcl,pl->pc", scene.four_sin, cos0 - cos1)
        dD += np.einsum("pcl,pl->pc", scene.four_cos, sin0 - sin1)
    norms, unit = _norms_and_grads(dD)
    loss = float(norms.mean())
    grads = SceneGrads.zeros(scene)
    dL = unit / scene.n
    grads.poly += dL[:, :, None] * (pow0 - pow1)[:, None, :]
    # d loss/d t_s at each endpoint, each contracted against the shared
    # dL-weighted coefficients.
    if N >= 1:
        u_poly = np.einsum("pc,pcn->pn", dL, scene.poly[:, :, 1:])
        dts0 = np.einsum("pn,pn->p", u_poly, npow[1:] * pow0[:, :N])
        dts1 = np.einsum("pn,pn->p", u_poly, npow[1:] * pow1[:, :N])
    else:
        dts0 = np.zeros(scene.n)
        dts1 = np.zeros(scene.n)
    if L > 0:
        grads.four_sin += dL[:, :, None] * (cos0 - cos1)[:, None, :]
        grads.four_cos += dL[:, :, None] * (sin0 - sin1)[:, None, :]
        u_sin = np.einsum("pc,pcl->pl", dL, scene.four_sin)
        u_cos = np.einsum("pc,pcl->pl", dL, scene.four_cos)
        dts0 += np.einsum("pl,pl->p", u_sin, -l * sin0) \
            + np.einsum("pl,pl->p", u_cos, l * cos0)
        dts1 += np.einsum("pl,pl->p", u_sin, -l * sin1) \
            + np.einsum("pl,pl->p", u_cos, l * cos1)
    grads.dilation[:, 0] += dts0 * t - dts1 * (t + eps)
    grads.dilation[:, 1] += dts0 - dts1
    return loss, grads


def knn_rigid_loss(scene: Scene, t: float, knn: KnnIndex) -> tuple[float, SceneGrads]:
    """Mean over points of summed neighbor differences of position residuals.

    For each point i: sum over its K neighbors j of ||D_mu(t)_i - D_mu(t)_j||_2.
    Gradients flow into both endpoints' position curves and dilations.
    """
    if knn.neighbors.shape[0] != scene.n:
        raise ValueError("knn index stale")
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"unnormalized timestamp {t}")
    D, cache = scene_residuals(scene, t)
    Dmu = D[:, CH_MU]                                  # (P, 3)
    nb = knn.neighbors                                 # (P, K)
    diff = Dmu[:, None, :] - Dmu[nb]                   # (P, K, 3)
    norms, unit = _norms_and_grads(diff)
    loss = float(norms.sum(axis=1).mean())
    ddiff = unit / scene.n                             # dL/d(diff)
    dL_dDmu = ddiff.sum(axis=1)                        # d/d D_i
    np.add.at(dL_dDmu, nb.reshape(-1), -ddiff.reshape(-1, 3))
    grads = SceneGrads.zeros(scene)
    dL_dD = np.zeros_like(D)
    dL_dD[:, CH_MU] = dL_dDmu
    residuals_backward(scene, cache, dL_dD, grads)
    return loss, grads
