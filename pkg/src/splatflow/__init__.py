"""splatflow: dynamic 3D Gaussian splatting with explicit per-point
polynomial + Fourier deformation curves, in pure numpy/scipy.
"""

from .config import ConfigError, TrainConfig
from .core import (Camera, ChannelCurve, DynamicGaussian, Frame, Scene,
                   SceneGrads, new_scene_from_points)
from .dataio import (DataError, Dataset, export_ply, load_checkpoint,
                     load_dataset, read_ply, save_checkpoint)
from .dddm import (DeformedAttributes, deform_point, deform_scene, eval_fourier,
                   eval_poly, eval_residual, residual_gradients, scale_timestamp)
from .fitting import FitResult, fit_trajectory
from .metrics import MetricReport, psnr, ssim
from .optimize import (AdamState, TrainResult, adam_step, density_control,
                       photometric_loss, train)
from .rasterizer import (ProjectedSplat, RasterSettings, RenderAux,
                         bin_and_sort, build_covariance, eval_sh, project_point,
                         rasterize_backward, rasterize_forward, render_reference)
from .regularize import KnnIndex, build_knn, knn_rigid_loss, time_smooth_loss

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Camera", "ChannelCurve", "ConfigError", "DataError",
    "Dataset", "DeformedAttributes", "DynamicGaussian", "FitResult", "Frame",
    "KnnIndex", "MetricReport", "ProjectedSplat", "RasterSettings", "RenderAux",
    "Scene", "SceneGrads", "TrainConfig", "TrainResult", "adam_step",
    "bin_and_sort", "build_covariance", "build_knn", "deform_point",
    "deform_scene", "density_control", "eval_fourier", "eval_poly",
    "eval_residual", "eval_sh", "export_ply", "fit_trajectory",
    "knn_rigid_loss", "load_checkpoint", "load_dataset", "new_scene_from_points",
    "photometric_loss", "project_point", "psnr", "rasterize_backward",
    "rasterize_forward", "read_ply", "render_reference", "residual_gradients",
    "save_checkpoint", "scale_timestamp", "ssim", "time_smooth_loss", "train",
]
