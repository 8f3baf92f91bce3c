"""Training: grouped Adam with schedules, adaptive density control, and the
full optimization loop (static warm-up, densification window, one-time KNN
build, regularized refinement).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .core import Frame, Scene, SceneGrads, new_scene_from_points, sigmoid
from .metrics import psnr, ssim_with_grad
from .rasterizer import RasterSettings, ScreenStats, quat_to_rot, rasterize_backward, rasterize_forward
from .regularize import KnnIndex, build_knn, knn_rigid_loss, time_smooth_loss

_BETA1 = 0.9
_BETA2 = 0.999
_EPS = 1e-15

# Scene array field -> learning-rate config attribute. Position uses the
# decayed schedule instead of a flat attribute.
_GROUP_LR = {
    "mu0": None,
    "q0": "lr_rotation",
    "log_scale": "lr_scale",
    "opacity_logit": "lr_opacity",
    "sh_dc": "lr_sh_dc",
    "sh_rest": "lr_sh_rest",
    "poly": "lr_dddm",
    "four_sin": "lr_dddm",
    "four_cos": "lr_dddm",
    "dilation": "lr_dddm",
}

CURVE_GROUPS = ("poly", "four_sin", "four_cos", "dilation")
BASE_GROUPS = ("mu0", "q0", "log_scale", "opacity_logit", "sh_dc", "sh_rest")

PSNR_LOG_INTERVAL = 500


def photometric_loss(rendered: np.ndarray, target: np.ndarray,
                     w_ssim: float = 0.2) -> tuple[float, np.ndarray]:
    """(1 - w) L1 + w (1 - SSIM), with the analytic image gradient."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError("image shapes differ")
    diff = rendered - target
    l1 = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    if w_ssim == 0.0:
        return l1, grad
    s, ds = ssim_with_grad(rendered, target)
    loss = (1.0 - w_ssim) * l1 + w_ssim * (1.0 - s)
    grad = (1.0 - w_ssim) * grad - w_ssim * ds
    return loss, grad


@dataclass
class AdamState:
    """First/second moment buffers and per-group step counters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: dict[str, int]

    @classmethod
    def init(cls, scene: Scene) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in scene.array_fields().items()},
                   v={k: np.zeros_like(a) for k, a in scene.array_fields().items()},
                   step={k: 0 for k in scene.array_fields()})


def adam_step(scene: Scene, grads: SceneGrads, state: AdamState, config: TrainConfig,
              iteration: int, frozen: tuple[str, ...] = ()) -> None:
    """One in-place Adam update. Frozen groups are skipped entirely (no
    moment update, no weight decay), so they stay bitwise at their values."""
    for name, param in scene.array_fields().items():
        if name in frozen:
            continue
        g = getattr(grads, name)
        if np.isnan(np.sum(g)):
            raise ValueError(f"NaN gradient in parameter group {name}")
        lr = config.position_lr(iteration) if name == "mu0" \
            else getattr(config, _GROUP_LR[name])
        state.step[name] += 1
        t = state.step[name]
        m = state.m[name]
        v = state.v[name]
        m *= _BETA1
        m += (1.0 - _BETA1) * g
        v *= _BETA2
        v += (1.0 - _BETA2) * (g * g)
        # update = lr * mhat / (sqrt(vhat) + eps) with both bias corrections
        # folded into scalars: mhat = m/c1, sqrt(vhat) = sqrt(v)/s2.
        c1 = 1.0 - _BETA1 ** t
        s2 = np.sqrt(1.0 - _BETA2 ** t)
        upd = np.sqrt(v)
        upd += _EPS * s2
        np.divide(m, upd, out=upd)
        upd *= lr * s2 / c1
        param -= upd
        if config.weight_decay:
            param *= 1.0 - lr * config.weight_decay
    norms = np.linalg.norm(scene.q0, axis=1)
    scene.q0 /= np.maximum(norms, 1e-12)[:, None]


@dataclass
class GradStats:
    """Accumulated screen-space gradient magnitudes between densify calls."""

    accum: np.ndarray
    count: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GradStats":
        return cls(accum=np.zeros(n), count=np.zeros(n))

    def update(self, stats: ScreenStats) -> None:
        self.accum += stats.grad_norm
        self.count += stats.visible


def scene_extent(scene: Scene) -> float:
    """Radius of the point cloud's bounding sphere around its centroid."""
    c = scene.mu0.mean(axis=0)
    return float(np.linalg.norm(scene.mu0 - c, axis=1).max())


def density_control(scene: Scene, grad_stats: GradStats, state: AdamState,
                    config: TrainConfig, rng: np.random.Generator
                    ) -> tuple[Scene, AdamState, GradStats]:
    """Clone small / split large over-gradient points, prune transparent ones.

    Clones are exact copies (curves and dilation included); splits divide the
    scale by the shrink factor and sample both children's positions from the
    child-scaled covariance around the parent. New points start with zero
    Adam moments.
    """
    P = scene.n
    with np.errstate(invalid="ignore"):
        mean_grad = np.where(grad_stats.count > 0, grad_stats.accum / grad_stats.count, 0.0)
    hot = mean_grad > config.densify_grad_threshold
    extent = scene_extent(scene)
    size = np.exp(scene.log_scale).max(axis=1)
    big = size > config.densify_split_extent_frac * extent
    clone_mask = hot & ~big
    split_mask = hot & big
    prune_mask = sigmoid(scene.opacity_logit) < config.prune_opacity
    keep_mask = ~prune_mask & ~split_mask

    if not (clone_mask.any() or split_mask.any() or prune_mask.any()):
        return scene, state, GradStats.zeros(P)

    fields = scene.array_fields()
    keep = {k: a[keep_mask] for k, a in fields.items()}
    clones = {k: a[clone_mask & ~prune_mask] for k, a in fields.items()}

    split_idx = np.nonzero(split_mask & ~prune_mask)[0]
    shrink = np.log(config.split_scale_shrink)
    children = {k: np.empty((0,) + fields[k].shape[1:]) for k in fields}
    if split_idx.size:
        parent = {k: a[split_idx] for k, a in fields.items()}
        child_ls = parent["log_scale"] - shrink
        q = parent["q0"] / np.linalg.norm(parent["q0"], axis=1, keepdims=True)
        R = quat_to_rot(q)
        s_child = np.exp(child_ls)
        two = lambda a: np.concatenate([a, a], axis=0)
        eps = rng.standard_normal((2 * split_idx.size, 3))
        offsets = np.einsum("pij,pj->pi", two(R), two(s_child) * eps)
        children = {k: two(v) for k, v in parent.items()}
        children["mu0"] = two(parent["mu0"]) + offsets
        children["log_scale"] = two(child_ls)

    merged = {k: np.concatenate([keep[k], clones[k], children[k]], axis=0)
              for k in fields}
    new_scene = Scene(**merged, frame_count=scene.frame_count, sh_degree=scene.sh_degree)

    n_new = new_scene.n
    n_keep = int(keep_mask.sum())
    new_state = AdamState.init(new_scene)
    for k in fields:
        new_state.m[k][:n_keep] = state.m[k][keep_mask]
        new_state.v[k][:n_keep] = state.v[k][keep_mask]
        new_state.step[k] = state.step[k]
    return new_scene, new_state, GradStats.zeros(n_new)


@dataclass
class TrainResult:
    scene: Scene
    log: list[dict]
    knn: KnnIndex | None
    knn_builds: int
    state: AdamState


def _frozen_groups(iteration: int, config: TrainConfig) -> tuple[str, ...]:
    if iteration < config.warmup_static_steps:
        return CURVE_GROUPS
    if (config.alt_cadence > 0 and config.warmup_static_steps <= iteration
            < config.densify_end):
        phase = (iteration - config.warmup_static_steps) // config.alt_cadence
        return BASE_GROUPS if phase % 2 else CURVE_GROUPS
    return ()


def train(dataset: list[Frame], seed_points, config: TrainConfig,
          holdout: list[Frame] | None = None,
          checkpoint_cb=None) -> TrainResult:
    """Optimize a fresh scene against the dataset.

    Schedule: [0, warmup) static fit with curves frozen; [warmup, densify_end)
    full optimization with periodic density control; at densify_end the KNN
    index is built exactly once; from densify_end + knn_rigid_start the rigid
    loss joins. The time-smoothness loss is active from warmup onward. One
    random training frame is drawn per iteration from a seeded generator.
    """
    config.validate()
    if not dataset:
        raise ValueError("empty dataset")
    holdout = holdout or []
    times = sorted({f.t for f in dataset})
    if len(times) == 1 and len(dataset) == 1:
        warnings.warn("degenerate dynamics: a single frame at a single "
                      "timestamp trains as a static scene")
    scene = new_scene_from_points(seed_points, config, frame_count=max(len(times), 1))
    state = AdamState.init(scene)
    grad_stats = GradStats.zeros(scene.n)
    rng = np.random.default_rng(config.seed)
    settings = RasterSettings.from_config(config)
    knn: KnnIndex | None = None
    knn_builds = 0
    log: list[dict] = []

    for it in range(config.total_steps):
        if it == config.densify_end and knn is None and scene.n > config.knn_k:
            knn = build_knn(scene, config.knn_k, built_at=it)
            knn_builds += 1

        frame = dataset[int(rng.integers(len(dataset)))]
        image, aux = rasterize_forward(scene, frame.t, frame.camera,
                                       config.background, settings)
        l_photo, dL_dimage = photometric_loss(image, frame.image, config.w_ssim)
        grads, stats = rasterize_backward(scene, frame.t, frame.camera, aux, dL_dimage)
        grad_stats.update(stats)

        l_smooth = 0.0
        l_rigid = 0.0
        if it >= config.warmup_static_steps and config.w_tsmooth > 0.0:
            ls, gs = time_smooth_loss(scene, frame.t)
            l_smooth = ls
            grads.add_(gs, config.w_tsmooth)
        rigid_active = (knn is not None
                        and it >= config.densify_end + config.knn_rigid_start
                        and config.w_rigid > 0.0)
        if rigid_active:
            lr_, gr = knn_rigid_loss(scene, frame.t, knn)
            l_rigid = lr_
            grads.add_(gr, config.w_rigid)

        adam_step(scene, grads, state, config, it, _frozen_groups(it, config))

        if (config.densify_start <= it < config.densify_end
                and it % config.densify_interval == 0):
            scene, state, grad_stats = density_control(scene, grad_stats, state,
                                                       config, rng)

        total = l_photo + config.w_tsmooth * l_smooth + config.w_rigid * l_rigid
        row = {"iter": it, "loss": total, "l_photo": l_photo,
               "l_tsmooth": l_smooth, "l_rigid": l_rigid, "points": scene.n,
               "psnr_holdout": ""}
        if holdout and (it + 1) % PSNR_LOG_INTERVAL == 0:
            row["psnr_holdout"] = holdout_psnr(scene, holdout, config, settings)
        log.append(row)
        if checkpoint_cb is not None and config.checkpoint_interval > 0 \
                and (it + 1) % config.checkpoint_interval == 0:
            checkpoint_cb(it + 1, scene)

    return TrainResult(scene=scene, log=log, knn=knn, knn_builds=knn_builds,
                       state=state)


def holdout_psnr(scene: Scene, holdout: list[Frame], config: TrainConfig,
                 settings: RasterSettings | None = None) -> float:
    settings = settings or RasterSettings.from_config(config)
    vals = []
    for f in holdout:
        img, _ = rasterize_forward(scene, f.t, f.camera, config.background, settings)
        vals.append(psnr(np.clip(img, 0.0, 1.0), f.image))
    return float(np.mean(vals))
