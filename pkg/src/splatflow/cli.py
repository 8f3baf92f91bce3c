"""Command-line front end: train, render, eval, and fit-curve.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime/data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig
from .dataio import (DataError, Dataset, _camera_from_json, load_checkpoint,
                     load_dataset, save_checkpoint, save_npy, save_png)
from .charts import line_chart
from .fitting import fit_trajectory
from .metrics import psnr, ssim
from .optimize import train
from .rasterizer import RasterSettings, rasterize_forward


def _load_config(path: str | None, steps: int | None, seed: int | None) -> TrainConfig:
    if path is not None:
        cfg = TrainConfig.from_json(Path(path).read_text())
    else:
        cfg = TrainConfig()
    if steps is not None:
        cfg.total_steps = steps
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.steps, args.seed)
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def save_intermediate(iteration, scene):
        save_checkpoint(scene, out / f"checkpoint_{iteration:06d}.splat", cfg)

    result = train(data.train_frames, data.seed_points, cfg,
                   holdout=data.holdout_frames, checkpoint_cb=save_intermediate)
    save_checkpoint(result.scene, out / "checkpoint.splat", cfg)

    with open(out / "log.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["iter", "loss", "l_photo", "l_tsmooth",
                                               "l_rigid", "points", "psnr_holdout"])
        writer.writeheader()
        writer.writerows(result.log)

    metrics = _eval_frames(result.scene, data.holdout_frames, cfg)
    with open(out / "metrics.json", "w") as f:
        json.dump(metrics, f, indent=2)
    print(f"trained {cfg.total_steps} iterations, {result.scene.n} points; "
          f"mean holdout psnr: {metrics['mean']['psnr']}")
    return 0


def _eval_frames(scene, frames, cfg: TrainConfig) -> dict:
    settings = RasterSettings.from_config(cfg)
    per_frame = []
    for i, fr in enumerate(frames):
        img, _ = rasterize_forward(scene, fr.t, fr.camera, cfg.background, settings)
        img = np.clip(img, 0.0, 1.0)
        per_frame.append({"frame": i, "t": fr.t, "psnr": psnr(img, fr.image),
                          "ssim": ssim(img, fr.image)})
    mean = {
        "psnr": float(np.mean([m["psnr"] for m in per_frame])) if per_frame else None,
        "ssim": float(np.mean([m["ssim"] for m in per_frame])) if per_frame else None,
    }
    return {"frames": per_frame, "mean": mean}


def cmd_render(args) -> int:
    if not (0.0 <= args.time <= 1.0):
        print(f"error: --time {args.time} outside [0, 1]", file=sys.stderr)
        return 2
    scene, cfg = load_checkpoint(args.ckpt)
    cfg = cfg or TrainConfig()
    cam = _camera_from_json(json.loads(Path(args.camera).read_text()))
    img, _ = rasterize_forward(scene, args.time, cam, cfg.background,
                               RasterSettings.from_config(cfg))
    img = np.clip(img, 0.0, 1.0)
    save_png(img, args.out)
    if args.npy:
        save_npy(img, args.npy)
    return 0


def cmd_eval(args) -> int:
    scene, cfg = load_checkpoint(args.ckpt)
    cfg = cfg or TrainConfig()
    data = load_dataset(args.data)
    if not data.holdout_frames:
        print("error: dataset has no holdout frames to evaluate", file=sys.stderr)
        return 2
    metrics = _eval_frames(scene, data.holdout_frames, cfg)
    with open(args.out, "w") as f:
        json.dump(metrics, f, indent=2)
    print(f"mean psnr {metrics['mean']['psnr']:.2f} dB, "
          f"mean ssim {metrics['mean']['ssim']:.4f}")
    return 0


def cmd_fit_curve(args) -> int:
    rows = []
    with open(args.trajectory, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                continue   # header line
    if len(rows) < 4:
        print("error: trajectory file has too few samples", file=sys.stderr)
        return 3
    t = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    n, l = args.orders
    result = fit_trajectory(t, y, args.model, n, l)

    if args.out_csv:
        with open(args.out_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "value", "fitted"])
            for ti, yi, fi in zip(t, y, result.fitted):
                w.writerow([ti, yi, fi])
    if args.out_png:
        line_chart([("data", t, y), (args.model, t, result.fitted)],
                   args.out_png, title=f"{args.model} fit",
                   xlabel="t", ylabel="value")
    print(f"{args.model} rmse {result.rmse:.6g} lambda_s {result.lambda_s:.4g}")
    return 0


def _orders(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("orders must be N,L")
    return int(parts[0]), int(parts[1])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatflow",
                                description="Dynamic Gaussian splatting trainer and tools")
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="optimize a scene from a dataset directory")
    tr.add_argument("--data", required=True)
    tr.add_argument("--config", default=None)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--steps", type=int, default=None)
    tr.set_defaults(func=cmd_train)

    rd = sub.add_parser("render", help="render one frame from a checkpoint")
    rd.add_argument("--ckpt", required=True)
    rd.add_argument("--camera", required=True)
    rd.add_argument("--time", type=float, required=True)
    rd.add_argument("--out", required=True)
    rd.add_argument("--npy", default=None)
    rd.set_defaults(func=cmd_render)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on holdout frames")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    fc = sub.add_parser("fit-curve", help="fit a 1-D trajectory with a curve family")
    fc.add_argument("--trajectory", required=True)
    fc.add_argument("--model", choices=["poly", "fourier", "dddm"], required=True)
    fc.add_argument("--orders", type=_orders, default=(3, 16))
    fc.add_argument("--out-csv", default=None)
    fc.add_argument("--out-png", default=None)
    fc.set_defaults(func=cmd_fit_curve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
