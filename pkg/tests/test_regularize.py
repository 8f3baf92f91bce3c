"""Curve regularizers: temporal smoothness and KNN rigidity."""

import numpy as np
import pytest

from splatflow.core import CH_MU
from splatflow.dddm import scene_residuals
from splatflow.regularize import build_knn, knn_rigid_loss, time_smooth_loss

from helpers import GROUPS, fd_scene_param, rand_scene


# Oracle: literal transcription of the loss definitions on raw residuals.
def smooth_oracle(scene, t):
    eps = 0.1 / scene.frame_count
    D0, _ = scene_residuals(scene, t)
    D1, _ = scene_residuals(scene, t + eps)
    return float(np.linalg.norm(D0 - D1, axis=1).mean())


def rigid_oracle(scene, t, neighbors):
    D, _ = scene_residuals(scene, t)
    mu = D[:, CH_MU]
    total = 0.0
    for i in range(scene.n):
        for j in neighbors[i]:
            total += np.linalg.norm(mu[i] - mu[j])
    return total / scene.n


def brute_knn(points, K):
    P = len(points)
    out = np.empty((P, K), dtype=np.int64)
    for i in range(P):
        d = np.linalg.norm(points - points[i], axis=1)
        d[i] = np.inf
        out[i] = np.lexsort((np.arange(P), d))[:K]
    return out


def test_smooth_eps_follows_frame_count():
    rng = np.random.default_rng(0)
    scene = rand_scene(rng, n=4, frame_count=300, curve_scale=0.05)
    # Linear curve a1 * t_s with unit dilation: ||D(t) - D(t+eps)|| = |a1| eps.
    scene.poly[:] = 0.0
    scene.four_sin[:] = 0.0
    scene.four_cos[:] = 0.0
    scene.dilation[:] = (1.0, 0.0)
    scene.poly[:, 0, 1] = 2.5
    loss, _ = time_smooth_loss(scene, 0.5)
    assert loss == pytest.approx(2.5 * (0.1 / 300), rel=1e-12)


def test_smooth_zero_curves_zero_loss_zero_grads():
    rng = np.random.default_rng(1)
    scene = rand_scene(rng, n=5, curve_scale=0.0)
    loss, grads = time_smooth_loss(scene, 0.3)
    assert loss == 0.0
    for name in GROUPS:
        np.testing.assert_array_equal(getattr(grads, name), 0.0, err_msg=name)


def test_smooth_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(5):
        scene = rand_scene(rng, n=7, curve_scale=0.1)
        t = float(rng.uniform(0, 1))
        loss, _ = time_smooth_loss(scene, t)
        assert loss == pytest.approx(smooth_oracle(scene, t), rel=1e-12)


def test_smooth_probe_past_one_allowed():
    rng = np.random.default_rng(3)
    scene = rand_scene(rng, n=4, frame_count=2, curve_scale=0.1)
    loss, _ = time_smooth_loss(scene, 1.0)   # probes t + 0.05 > 1 internally
    assert np.isfinite(loss)
    with pytest.raises(ValueError, match="unnormalized timestamp"):
        time_smooth_loss(scene, 1.01)


def test_smooth_grads_match_fd():
    rng = np.random.default_rng(4)
    scene = rand_scene(rng, n=6, poly_order=3, fourier_order=3, curve_scale=0.15)
    t = 0.42
    _, grads = time_smooth_loss(scene, t)

    def loss_fn(s):
        return time_smooth_loss(s, t)[0]

    for name in ("poly", "four_sin", "four_cos", "dilation"):
        flat = getattr(grads, name).reshape(-1)
        for i in rng.choice(flat.size, size=5, replace=False):
            fd = fd_scene_param(scene, name, int(i), loss_fn)
            assert flat[i] == pytest.approx(fd, rel=1e-6, abs=1e-10)
    # Base attributes never enter the smoothness term.
    np.testing.assert_array_equal(grads.mu0, 0.0)
    np.testing.assert_array_equal(grads.sh_dc, 0.0)


def test_knn_collinear_nearest():
    rng = np.random.default_rng(5)
    scene = rand_scene(rng, n=3)
    scene.mu0[:] = [[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]]
    knn = build_knn(scene, K=1)
    np.testing.assert_array_equal(knn.neighbors[:, 0], [1, 0, 1])


def test_knn_matches_brute_force():
    rng = np.random.default_rng(6)
    for P, K in ((30, 4), (120, 8), (300, 8)):
        scene = rand_scene(rng, n=P)
        scene.mu0[:] = rng.normal(size=(P, 3))
        knn = build_knn(scene, K)
        np.testing.assert_array_equal(knn.neighbors, brute_knn(scene.mu0, K))


def test_knn_duplicate_positions_tie_to_lower_index():
    rng = np.random.default_rng(7)
    scene = rand_scene(rng, n=6)
    # Four coincident points: every neighbor list starts with the lowest
    # other index among the duplicates.
    scene.mu0[:] = [[0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0],
                    [5, 0, 0], [9, 0, 0]]
    knn = build_knn(scene, K=3)
    np.testing.assert_array_equal(knn.neighbors[0], [1, 2, 3])
    np.testing.assert_array_equal(knn.neighbors[1], [0, 2, 3])
    # Point 4 sees point 5 first (distance 4), then the tied cluster at 5.
    np.testing.assert_array_equal(knn.neighbors[4], [5, 0, 1])


def test_knn_requires_enough_points():
    rng = np.random.default_rng(8)
    scene = rand_scene(rng, n=5)
    with pytest.raises(ValueError, match="must exceed"):
        build_knn(scene, K=5)


def test_rigid_two_points():
    rng = np.random.default_rng(9)
    scene = rand_scene(rng, n=2, curve_scale=0.2)
    knn = build_knn(scene, K=1)
    t = 0.7
    D, _ = scene_residuals(scene, t)
    d = np.linalg.norm(D[0, CH_MU] - D[1, CH_MU])
    loss, _ = knn_rigid_loss(scene, t, knn)
    # Both points list each other: the mean of two equal norms.
    assert loss == pytest.approx(d, rel=1e-12)


def test_rigid_matches_oracle():
    rng = np.random.default_rng(10)
    for _ in range(4):
        scene = rand_scene(rng, n=12, curve_scale=0.15)
        knn = build_knn(scene, K=4)
        t = float(rng.uniform(0, 1))
        loss, _ = knn_rigid_loss(scene, t, knn)
        assert loss == pytest.approx(rigid_oracle(scene, t, knn.neighbors),
                                     rel=1e-12)


def test_rigid_translation_invariant():
    # A shared position offset on every curve's constant term cancels in
    # all pairwise differences.
    rng = np.random.default_rng(11)
    scene = rand_scene(rng, n=10, curve_scale=0.1)
    scene.dilation[:] = (1.3, -0.1)   # equal dilations so t_s is shared
    knn = build_knn(scene, K=3)
    loss0, _ = knn_rigid_loss(scene, 0.6, knn)
    shifted = scene.copy()
    shifted.poly[:, CH_MU, 0] += np.array([0.3, -0.2, 0.5])
    loss1, _ = knn_rigid_loss(shifted, 0.6, knn)
    assert loss1 == pytest.approx(loss0, rel=1e-12)


def test_rigid_identical_motion_zero_loss():
    rng = np.random.default_rng(12)
    scene = rand_scene(rng, n=6, curve_scale=0.0)
    scene.dilation[:] = (1.0, 0.0)
    scene.poly[:, CH_MU, 1] = np.array([0.4, -0.1, 0.2])   # same drift all points
    knn = build_knn(scene, K=2)
    loss, grads = knn_rigid_loss(scene, 0.5, knn)
    assert loss == 0.0
    np.testing.assert_array_equal(grads.poly, 0.0)


def test_rigid_grads_match_fd():
    rng = np.random.default_rng(13)
    scene = rand_scene(rng, n=8, curve_scale=0.2)
    knn = build_knn(scene, K=3)
    t = 0.28
    _, grads = knn_rigid_loss(scene, t, knn)

    def loss_fn(s):
        return knn_rigid_loss(s, t, knn)[0]

    for name in ("poly", "four_sin", "four_cos", "dilation"):
        flat = getattr(grads, name).reshape(-1)
        for i in rng.choice(flat.size, size=5, replace=False):
            fd = fd_scene_param(scene, name, int(i), loss_fn)
            assert flat[i] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_rigid_stale_index_rejected():
    rng = np.random.default_rng(14)
    scene = rand_scene(rng, n=8)
    knn = build_knn(scene, K=2)
    grown = rand_scene(rng, n=9)
    with pytest.raises(ValueError, match="knn index stale"):
        knn_rigid_loss(grown, 0.5, knn)
