"""Shared test utilities: random scene builders, a finite-difference harness
over every parameter group, and the synthetic moving-blob dataset."""

from __future__ import annotations

import numpy as np

from splatflow import Camera, Frame, TrainConfig, new_scene_from_points
from splatflow.core import Scene, logit
from splatflow.rasterizer import RasterSettings, rasterize_forward, render_reference

GROUPS = ("mu0", "q0", "log_scale", "opacity_logit", "sh_dc", "sh_rest",
          "poly", "four_sin", "four_cos", "dilation")


def rand_scene(rng: np.random.Generator, n: int = 12, poly_order: int = 2,
               fourier_order: int = 2, sh_degree: int = 1, frame_count: int = 10,
               curve_scale: float = 0.02, spread: float = 0.6) -> Scene:
    """A random but numerically tame scene: anisotropic scales, random
    orientations, opacities away from the alpha clamp, small active curves."""
    cfg = TrainConfig(poly_order=poly_order, fourier_order=fourier_order,
                      sh_degree=sh_degree)
    seeds = [(rng.normal(scale=spread, size=3), rng.uniform(0.2, 0.8, 3))
             for _ in range(n)]
    scene = new_scene_from_points(seeds, cfg, frame_count=frame_count)
    q = rng.normal(size=(n, 4))
    scene.q0[:] = q / np.linalg.norm(q, axis=1, keepdims=True)
    scene.log_scale[:] = rng.uniform(np.log(0.05), np.log(0.35), size=(n, 3))
    scene.opacity_logit[:] = logit(rng.uniform(0.15, 0.8, size=n))
    scene.sh_dc[:] = rng.normal(scale=0.4, size=(n, 3))
    if scene.sh_rest.size:
        scene.sh_rest[:] = rng.normal(scale=0.1, size=scene.sh_rest.shape)
    scene.poly += rng.normal(scale=curve_scale, size=scene.poly.shape)
    scene.four_sin += rng.normal(scale=curve_scale, size=scene.four_sin.shape)
    scene.four_cos += rng.normal(scale=curve_scale, size=scene.four_cos.shape)
    scene.dilation[:, 0] = rng.uniform(0.7, 1.4, size=n)
    scene.dilation[:, 1] = rng.uniform(-0.2, 0.2, size=n)
    return scene


def default_cam(width: int = 16, height: int = 16, dist: float = 4.0,
                focal: float | None = None, eye=None) -> Camera:
    focal = focal if focal is not None else 2.0 * width
    eye = eye if eye is not None else [0.2, -0.1, -dist]
    return Camera.look_at(eye=eye, target=[0, 0, 0], up=[0, 1, 0], fx=focal,
                          fy=focal, cx=width / 2.0, cy=height / 2.0,
                          width=width, height=height)


def fd_scene_param(scene: Scene, name: str, index: int, loss_fn, h: float = 1e-6) -> float:
    """Central finite difference of loss_fn(scene) w.r.t. one flat entry."""
    arr = getattr(scene, name).reshape(-1)
    old = arr[index]
    arr[index] = old + h
    lp = loss_fn(scene)
    arr[index] = old - h
    lm = loss_fn(scene)
    arr[index] = old
    return (lp - lm) / (2.0 * h)


def check_grads_fd(scene: Scene, grads, loss_fn, rng: np.random.Generator,
                   samples: int = 5, rtol: float = 1e-4, h: float = 1e-6,
                   floor: float = 1e-8, atol: float = 2e-9) -> dict[str, float]:
    """Compare analytic grads against finite differences on random entries of
    every group. Entries where both sides are below `floor` are skipped, and
    differences below `atol` pass outright: central differences at h=1e-6 on
    a loss of order 1 carry ~1e-10 of absolute roundoff, which swamps the
    relative error of any gradient entry much below 1e-7.
    Returns the worst relative error per group; asserts the tolerance."""
    worst = {}
    for name in GROUPS:
        flat = getattr(grads, name).reshape(-1)
        if flat.size == 0:
            continue
        idxs = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        w = 0.0
        for i in idxs:
            fd = fd_scene_param(scene, name, int(i), loss_fn, h)
            an = flat[i]
            if abs(fd) < floor and abs(an) < floor:
                continue
            if abs(fd - an) <= atol:
                continue
            rel = abs(fd - an) / max(abs(fd), abs(an))
            w = max(w, rel)
        worst[name] = w
        assert w <= rtol, f"group {name}: worst relative gradient error {w:.3e} > {rtol}"
    return worst


# -- synthetic moving-blob harness -------------------------------------------

BLOB_COLORS = np.array([[0.85, 0.25, 0.2], [0.2, 0.65, 0.3], [0.25, 0.35, 0.85]])


def make_blob_scene(motion_scale: float = 1.0) -> Scene:
    """Ground truth: three rigidly moving colored Gaussian blobs.

    Each blob is one anisotropic Gaussian whose position follows a smooth
    drift plus one or two harmonics, expressed through its own curves.
    """
    from splatflow.core import rgb_to_dc

    n = 3
    cfg = TrainConfig(poly_order=2, fourier_order=2, sh_degree=0)
    base = np.array([[-0.7, 0.0, 0.2], [0.6, 0.45, -0.1], [0.05, -0.55, -0.3]])
    seeds = [(base[i], BLOB_COLORS[i]) for i in range(n)]
    scene = new_scene_from_points(seeds, cfg, frame_count=60)
    scene.log_scale[:] = np.log(np.array([
        [0.30, 0.22, 0.26], [0.24, 0.30, 0.20], [0.26, 0.24, 0.30]]))
    scene.opacity_logit[:] = logit(np.array([0.92, 0.90, 0.94]))
    scene.sh_dc[:] = rgb_to_dc(BLOB_COLORS)
    m = motion_scale
    # Position curves, channels 0..2: drift + harmonics (lambda_s = 2 pi).
    scene.dilation[:, 0] = 2.0 * np.pi
    scene.poly[0, 0, 1] = 0.5 * m / (2.0 * np.pi)
    scene.four_cos[0, 1, 0] = 0.28 * m
    scene.four_sin[0, 2, 1] = 0.15 * m
    scene.four_sin[0, 2, 0] = -0.15 * m
    scene.four_cos[1, 0, 1] = 0.22 * m
    scene.poly[1, 1, 1] = -0.4 * m / (2.0 * np.pi)
    scene.four_sin[1, 2, 0] = 0.18 * m
    scene.four_sin[1, 2, 1] = -0.18 * m
    scene.four_cos[2, 0, 0] = -0.25 * m
    scene.four_sin[2, 1, 1] = 0.2 * m
    scene.four_sin[2, 1, 0] = -0.2 * m
    scene.poly[2, 2, 1] = 0.3 * m / (2.0 * np.pi)
    # F(0) is nonzero for cos-basis coefficients; recenter so motion starts at base.
    from splatflow.dddm import scene_residuals
    D0, _ = scene_residuals(scene, 0.0)
    scene.poly[:, :, 0] -= D0
    return scene


def blob_cameras(n_train: int = 8, n_holdout: int = 2, width: int = 128,
                 height: int = 128, radius: float = 4.0) -> tuple[list[Camera], list[Camera]]:
    total = n_train + n_holdout
    cams = []
    for k in range(total):
        az = 2.0 * np.pi * k / total
        el = 0.25 * np.sin(3.0 * az)
        eye = [radius * np.cos(az) * np.cos(el), radius * np.sin(el),
               radius * np.sin(az) * np.cos(el)]
        cams.append(Camera.look_at(eye=eye, target=[0, 0, 0], up=[0, 1, 0],
                                   fx=1.2 * width, fy=1.2 * width,
                                   cx=width / 2.0, cy=height / 2.0,
                                   width=width, height=height))
    holdout_ids = {total // 4, 3 * total // 4}
    while len(holdout_ids) < n_holdout:
        holdout_ids.add(len(holdout_ids))
    holdout_ids = sorted(holdout_ids)[:n_holdout]
    train = [c for k, c in enumerate(cams) if k not in holdout_ids]
    hold = [cams[k] for k in holdout_ids]
    return train, hold


def make_blob_dataset(n_frames: int = 60, n_train_cams: int = 8,
                      n_holdout_cams: int = 2, width: int = 128, height: int = 128,
                      motion_scale: float = 1.0, view_mode: str = "full",
                      holdout_times: str = "shared", n_holdout_times: int = 5
                      ) -> tuple[list[Frame], list[Frame], Scene]:
    """Render the ground-truth blobs into posed frames.

    view_mode="full": every training camera sees every timestamp (multi-view
    video). view_mode="cycle": one camera per timestamp (quasi-monocular, far
    less constrained). Holdout frames use the held-out cameras at a subset of
    timestamps; holdout_times="between" places them midway between training
    timestamps to probe temporal interpolation.
    """
    gt = make_blob_scene(motion_scale)
    train_cams, hold_cams = blob_cameras(n_train_cams, n_holdout_cams, width, height)
    bg = (0.0, 0.0, 0.0)
    times = np.linspace(0.0, 1.0, n_frames)

    def frame(cam, t):
        img = render_reference(gt, float(t), cam, bg)
        return Frame(camera=cam, t=float(t), image=np.clip(img, 0.0, 1.0))

    train = []
    if view_mode == "full":
        for t in times:
            train.extend(frame(cam, t) for cam in train_cams)
    else:
        train.extend(frame(train_cams[i % len(train_cams)], t)
                     for i, t in enumerate(times))

    if holdout_times == "between":
        mids = (times[:-1] + times[1:]) / 2.0
        ht = mids[np.linspace(0, mids.size - 1, n_holdout_times).astype(int)]
    else:
        ht = times[np.linspace(0, times.size - 1, n_holdout_times).astype(int)]
    hold = [frame(cam, t) for t in ht for cam in hold_cams]
    return train, hold, gt


def blob_seed_points(gt: Scene, rng: np.random.Generator, per_blob: int = 120,
                     colors: np.ndarray | None = None):
    """SfM-like initialization: points sampled from each blob at t=0."""
    from splatflow.dddm import deform_scene
    from splatflow.rasterizer import quat_to_rot

    if colors is None:
        colors = BLOB_COLORS
    dfm = deform_scene(gt, 0.0)
    R = quat_to_rot(dfm.q)
    seeds = []
    for i in range(gt.n):
        s = np.exp(gt.log_scale[i])
        eps = rng.standard_normal((per_blob, 3)) * 0.8
        pts = dfm.mu[i] + (R[i] @ (s[:, None] * eps.T)).T
        color = np.clip(colors[i], 0.05, 0.95)
        seeds.extend((p, color.copy()) for p in pts)
    return seeds
