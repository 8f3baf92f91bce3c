"""End-to-end training on a synthetic dynamic scene.

Ground truth is three moving Gaussian blobs; cameras on a ring record them
over one time unit. The script seeds points from the blobs at t=0, trains
with the default objective (photometric + temporal smoothness + local
rigidity), charts the loss and held-out PSNR over iterations, and renders a
held-out view next to its ground truth.

Sized to finish in about two minutes on a laptop CPU. Run from the
repository root:

    python3 demos/train_blobs.py

Outputs land in demos/out/.
"""

import pathlib
import time

import numpy as np

from splatflow import Camera, TrainConfig
from splatflow.charts import line_chart
from splatflow.core import Frame, new_scene_from_points
from splatflow.dataio import save_png
from splatflow.dddm import deform_scene, scene_residuals
from splatflow.optimize import holdout_psnr, train
from splatflow.rasterizer import quat_to_rot, render_reference

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)
SIZE = 64

# -- ground truth ------------------------------------------------------------

gt_cfg = TrainConfig(poly_order=2, fourier_order=2, sh_degree=0)
colors = np.array([[0.85, 0.3, 0.25], [0.3, 0.5, 0.9], [0.95, 0.8, 0.3]])
base = np.array([[-0.7, 0.0, 0.2], [0.6, 0.45, -0.1], [0.05, -0.55, -0.3]])
gt = new_scene_from_points([(base[i], colors[i]) for i in range(3)],
                           gt_cfg, frame_count=30)
gt.log_scale[:] = np.log(np.array([[0.30, 0.22, 0.26],
                                   [0.24, 0.30, 0.20],
                                   [0.26, 0.24, 0.30]]))
gt.dilation[:, 0] = 2.0 * np.pi
gt.poly[0, 0, 1] = 0.5 / (2.0 * np.pi)        # blob 0 drifts in x
gt.four_cos[0, 1, 0] = 0.28                   # and bobs in y
gt.four_cos[1, 0, 1] = 0.22                   # blob 1: second-harmonic sway
gt.poly[1, 1, 1] = -0.4 / (2.0 * np.pi)
gt.four_sin[2, 1, 1] = 0.2                    # blob 2: two-harmonic bob in y
gt.four_sin[2, 1, 0] = -0.2
gt.poly[2, 2, 1] = 0.3 / (2.0 * np.pi)
D0, _ = scene_residuals(gt, 0.0)
gt.poly[:, :, 0] -= D0                        # motion starts at the base pose

# -- dataset: 6 ring cameras x 30 times, 1 held-out camera ------------------


def ring_cam(az):
    eye = [4.0 * np.cos(az), 0.6 * np.sin(3.0 * az), 4.0 * np.sin(az)]
    return Camera.look_at(eye=eye, target=[0, 0, 0], up=[0, 1, 0],
                          fx=1.2 * SIZE, fy=1.2 * SIZE, cx=SIZE / 2.0,
                          cy=SIZE / 2.0, width=SIZE, height=SIZE)


times = np.linspace(0.0, 1.0, 30)
train_cams = [ring_cam(2.0 * np.pi * k / 7.0) for k in range(6)]
hold_cam = ring_cam(2.0 * np.pi * 6.5 / 7.0)


def shoot(cam, t):
    img = np.clip(render_reference(gt, float(t), cam, (0, 0, 0)), 0, 1)
    return Frame(cam, float(t), img)


train_frames = [shoot(cam, t) for t in times for cam in train_cams]
hold_frames = [shoot(hold_cam, t) for t in times[2::7]]
print(f"dataset: {len(train_frames)} training frames, "
      f"{len(hold_frames)} held-out frames at {SIZE}x{SIZE}")

# -- seed points: noisy samples from the blobs at t=0 ------------------------

rng = np.random.default_rng(3)
dfm = deform_scene(gt, 0.0)
R = quat_to_rot(dfm.q)
seeds = []
for i in range(gt.n):
    s = np.exp(gt.log_scale[i])
    eps = rng.standard_normal((40, 3)) * 0.8
    pts = dfm.mu[i] + (R[i] @ (s[:, None] * eps.T)).T
    seeds.extend((p, colors[i].copy()) for p in pts)
print(f"seeded {len(seeds)} points from the t=0 geometry")

# -- train -------------------------------------------------------------------

cfg = TrainConfig(total_steps=1200, warmup_static_steps=150,
                  densify_start=200, densify_end=600, densify_interval=100,
                  sh_degree=0, fourier_order=8, seed=0)
t0 = time.perf_counter()
result = train(train_frames, seeds, cfg, holdout=hold_frames)
elapsed = time.perf_counter() - t0
final = holdout_psnr(result.scene, hold_frames, cfg)
print(f"trained {cfg.total_steps} iterations in {elapsed:.0f}s; "
      f"{result.scene.n} points; held-out PSNR {final:.2f} dB")

# -- charts ------------------------------------------------------------------

its = np.array([row["iter"] for row in result.log], dtype=float)
loss = np.array([row["loss"] for row in result.log])
line_chart([("loss", its, loss)], OUT / "train_loss.png",
           title="training loss", xlabel="iteration", ylabel="loss")

psnr_rows = [(row["iter"], row["psnr_holdout"]) for row in result.log
             if row["psnr_holdout"] != ""]
if psnr_rows:
    px = np.array([r[0] for r in psnr_rows], dtype=float)
    py = np.array([r[1] for r in psnr_rows], dtype=float)
    line_chart([("holdout psnr", px, py)], OUT / "train_psnr.png",
               title="held-out PSNR", xlabel="iteration", ylabel="dB")
print(f"wrote {OUT / 'train_loss.png'} and {OUT / 'train_psnr.png'}")

# -- side by side: prediction vs ground truth on the held-out camera ---------

strip = []
for fr in hold_frames[:4]:
    pred = np.clip(render_reference(result.scene, fr.t, fr.camera, (0, 0, 0)), 0, 1)
    strip.append(np.concatenate([fr.image, pred], axis=0))
save_png(np.concatenate(strip, axis=1), OUT / "holdout_vs_gt.png")
print(f"wrote {OUT / 'holdout_vs_gt.png'} (top: ground truth, bottom: model)")
