"""Domain types: deformable Gaussians, cameras, frames and the scene container.

A scene stores its points struct-of-arrays (one float64 array per attribute)
because every pass over the data is vectorized numpy. The per-point record
types below are views for construction, inspection and tests; the arrays are
the source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .config import TrainConfig

# Curve channel layout: 10 scalar channels per point.
CH_MU = slice(0, 3)    # position x, y, z
CH_Q = slice(3, 7)     # quaternion w, x, y, z
CH_DC = slice(7, 10)   # SH DC color r, g, b
N_CHANNELS = 10

SH_C0 = 0.28209479177387814

_SCALE_FLOOR = 1e-7
_LONE_POINT_SCALE = 0.1


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def rgb_to_dc(rgb):
    """Degree-0 SH coefficient reproducing a flat color."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def dc_to_rgb(dc):
    return np.asarray(dc, dtype=np.float64) * SH_C0 + 0.5


@dataclass
class ChannelCurve:
    """Deformation-residual coefficients of one scalar channel.

    poly_coeffs holds a_0..a_N; fourier_sin and fourier_cos hold the L
    harmonic coefficient pairs (f^1..f^L each).
    """

    poly_coeffs: np.ndarray
    fourier_sin: np.ndarray
    fourier_cos: np.ndarray

    def __post_init__(self):
        self.poly_coeffs = np.atleast_1d(np.asarray(self.poly_coeffs, dtype=np.float64))
        self.fourier_sin = np.atleast_1d(np.asarray(self.fourier_sin, dtype=np.float64)).reshape(-1)
        self.fourier_cos = np.atleast_1d(np.asarray(self.fourier_cos, dtype=np.float64)).reshape(-1)
        if self.fourier_sin.shape != self.fourier_cos.shape:
            raise ValueError("fourier_sin and fourier_cos lengths differ")
        for a in (self.poly_coeffs, self.fourier_sin, self.fourier_cos):
            if not np.all(np.isfinite(a)):
                raise ValueError("curve coefficients must be finite")

    @classmethod
    def zeros(cls, poly_order: int, fourier_order: int) -> "ChannelCurve":
        return cls(np.zeros(poly_order + 1), np.zeros(fourier_order), np.zeros(fourier_order))


@dataclass
class DynamicGaussian:
    """One soft point: base attributes plus its 10 deformation curves."""

    mu0: np.ndarray                    # (3,) world position at reference time
    q0: np.ndarray                     # (4,) quaternion, (w, x, y, z)
    log_scale: np.ndarray              # (3,)
    opacity_logit: float
    sh_coeffs: np.ndarray              # (B, 3), row 0 is the DC coefficient
    curves_mu: list[ChannelCurve]      # 3 curves
    curves_q: list[ChannelCurve]       # 4 curves
    curves_c: list[ChannelCurve]       # 3 curves, DC channels only
    dilation_scale: float = 1.0        # lambda_s
    dilation_base: float = 0.0         # lambda_b

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=np.float64).reshape(3)
        self.q0 = np.asarray(self.q0, dtype=np.float64).reshape(4)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64)
        if self.sh_coeffs.ndim != 2 or self.sh_coeffs.shape[1] != 3:
            raise ValueError("sh_coeffs must be (B, 3)")
        if len(self.curves_mu) != 3 or len(self.curves_q) != 4 or len(self.curves_c) != 3:
            raise ValueError("need 3 + 4 + 3 channel curves")

    @property
    def curves(self) -> list[ChannelCurve]:
        """All 10 curves in channel order (position, rotation, DC color)."""
        return [*self.curves_mu, *self.curves_q, *self.curves_c]


@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform.

    world_to_cam is 4x4; its upper-left 3x3 block must be a rotation. Camera
    space looks down +z, so depth of a world point p is (R p + t)[2].
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: np.ndarray
    znear: float = 0.01
    zfar: float = 100.0

    def __post_init__(self):
        self.world_to_cam = np.asarray(self.world_to_cam, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.znear < self.zfar):
            raise ValueError("need 0 < znear < zfar")
        R = self.rotation
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6:
            raise ValueError("camera rotation not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_cam[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_cam[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_cam(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, cx, cy, width, height,
                znear=0.01, zfar=100.0) -> "Camera":
        """Convenience constructor for synthetic rigs."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right = right / np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])   # rows: camera axes in world frame
        wtc = np.eye(4)
        wtc[:3, :3] = R
        wtc[:3, 3] = -R @ eye
        return cls(fx, fy, cx, cy, width, height, wtc, znear, zfar)


@dataclass
class Frame:
    """One observation: a posed camera, a timestamp in [0,1] and optionally pixels."""

    camera: Camera
    t: float
    image: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 <= self.t <= 1.0):
            raise ValueError(f"frame timestamp {self.t} outside [0, 1]")
        if self.image is not None:
            self.image = np.asarray(self.image, dtype=np.float64)
            if self.image.shape != (self.camera.height, self.camera.width, 3):
                raise ValueError("image dimensions do not match camera")


_ARRAY_FIELDS = ("mu0", "q0", "log_scale", "opacity_logit", "sh_dc", "sh_rest",
                 "poly", "four_sin", "four_cos", "dilation")


@dataclass
class Scene:
    """All points of one dynamic scene, struct-of-arrays.

    Shapes, with P points, curve orders (N, L) and B = (sh_degree+1)^2 SH
    bases: mu0 (P,3), q0 (P,4), log_scale (P,3), opacity_logit (P,),
    sh_dc (P,3), sh_rest (P,B-1,3), poly (P,10,N+1), four_sin/four_cos
    (P,10,L), dilation (P,2) storing (lambda_s, lambda_b) per point.
    """

    mu0: np.ndarray
    q0: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray
    poly: np.ndarray
    four_sin: np.ndarray
    four_cos: np.ndarray
    dilation: np.ndarray
    frame_count: int = 1
    sh_degree: int = 3

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        for name in _ARRAY_FIELDS:
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        P = self.mu0.shape[0]
        B = (self.sh_degree + 1) ** 2
        expect = {
            "mu0": (P, 3), "q0": (P, 4), "log_scale": (P, 3), "opacity_logit": (P,),
            "sh_dc": (P, 3), "sh_rest": (P, B - 1, 3),
            "poly": (P, N_CHANNELS, self.poly.shape[2] if self.poly.ndim == 3 else -1),
            "four_sin": (P, N_CHANNELS, self.four_sin.shape[2] if self.four_sin.ndim == 3 else -1),
            "four_cos": (P, N_CHANNELS, self.four_cos.shape[2] if self.four_cos.ndim == 3 else -1),
            "dilation": (P, 2),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"scene field {name} has shape {getattr(self, name).shape}, "
                                 f"expected {shape}")
        if self.four_sin.shape != self.four_cos.shape:
            raise ValueError("four_sin and four_cos shapes differ")

    @property
    def n(self) -> int:
        return self.mu0.shape[0]

    @property
    def poly_order(self) -> int:
        return self.poly.shape[2] - 1

    @property
    def fourier_order(self) -> int:
        return self.four_sin.shape[2]

    @property
    def sh_bases(self) -> int:
        return (self.sh_degree + 1) ** 2

    def sh_coeffs(self) -> np.ndarray:
        """Full (P, B, 3) SH coefficient block, DC first."""
        return np.concatenate([self.sh_dc[:, None, :], self.sh_rest], axis=1)

    def point(self, i: int) -> DynamicGaussian:
        """Materialize point i as a standalone record (copies)."""
        curves = [ChannelCurve(self.poly[i, c].copy(), self.four_sin[i, c].copy(),
                               self.four_cos[i, c].copy()) for c in range(N_CHANNELS)]
        return DynamicGaussian(
            mu0=self.mu0[i].copy(), q0=self.q0[i].copy(),
            log_scale=self.log_scale[i].copy(),
            opacity_logit=float(self.opacity_logit[i]),
            sh_coeffs=self.sh_coeffs()[i],
            curves_mu=curves[CH_MU], curves_q=curves[CH_Q], curves_c=curves[CH_DC],
            dilation_scale=float(self.dilation[i, 0]),
            dilation_base=float(self.dilation[i, 1]),
        )

    @property
    def points(self) -> list[DynamicGaussian]:
        return [self.point(i) for i in range(self.n)]

    @classmethod
    def from_gaussians(cls, gaussians: list[DynamicGaussian], frame_count: int = 1,
                       sh_degree: int | None = None) -> "Scene":
        if not gaussians:
            raise ValueError("empty point set")
        B = gaussians[0].sh_coeffs.shape[0]
        deg = sh_degree if sh_degree is not None else int(round(np.sqrt(B))) - 1
        if (deg + 1) ** 2 != B:
            raise ValueError(f"sh_coeffs row count {B} is not a square")
        N1 = gaussians[0].curves_mu[0].poly_coeffs.shape[0]
        L = gaussians[0].curves_mu[0].fourier_sin.shape[0]
        P = len(gaussians)
        sc = cls(
            mu0=np.stack([g.mu0 for g in gaussians]),
            q0=np.stack([g.q0 for g in gaussians]),
            log_scale=np.stack([g.log_scale for g in gaussians]),
            opacity_logit=np.array([g.opacity_logit for g in gaussians]),
            sh_dc=np.stack([g.sh_coeffs[0] for g in gaussians]),
            sh_rest=np.stack([g.sh_coeffs[1:] for g in gaussians]),
            poly=np.zeros((P, N_CHANNELS, N1)),
            four_sin=np.zeros((P, N_CHANNELS, L)),
            four_cos=np.zeros((P, N_CHANNELS, L)),
            dilation=np.stack([[g.dilation_scale, g.dilation_base] for g in gaussians]),
            frame_count=frame_count, sh_degree=deg,
        )
        for i, g in enumerate(gaussians):
            for c, curve in enumerate(g.curves):
                if curve.poly_coeffs.shape[0] != N1 or curve.fourier_sin.shape[0] != L:
                    raise ValueError("all points must share identical curve orders")
                sc.poly[i, c] = curve.poly_coeffs
                sc.four_sin[i, c] = curve.fourier_sin
                sc.four_cos[i, c] = curve.fourier_cos
        return sc

    def copy(self) -> "Scene":
        return Scene(*(getattr(self, name).copy() for name in _ARRAY_FIELDS),
                     frame_count=self.frame_count, sh_degree=self.sh_degree)

    def array_fields(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _ARRAY_FIELDS}


@dataclass
class SceneGrads:
    """Gradient arrays mirroring every trainable scene field."""

    mu0: np.ndarray
    q0: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray
    poly: np.ndarray
    four_sin: np.ndarray
    four_cos: np.ndarray
    dilation: np.ndarray

    @classmethod
    def zeros(cls, scene: Scene) -> "SceneGrads":
        return cls(**{name: np.zeros_like(getattr(scene, name)) for name in _ARRAY_FIELDS})

    def add_(self, other: "SceneGrads", scale: float = 1.0) -> "SceneGrads":
        for name in _ARRAY_FIELDS:
            getattr(self, name).__iadd__(scale * getattr(other, name))
        return self

    def fields(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _ARRAY_FIELDS}


def seed_log_scales(positions: np.ndarray) -> np.ndarray:
    """Isotropic log-scale init: log mean distance to the 3 nearest neighbors."""
    P = positions.shape[0]
    if P == 1:
        d = np.array([_LONE_POINT_SCALE])
    else:
        k = min(3, P - 1)
        tree = cKDTree(positions)
        dist, _ = tree.query(positions, k=k + 1)
        d = dist[:, 1:].mean(axis=1)
    d = np.maximum(d, _SCALE_FLOOR)
    return np.repeat(np.log(d)[:, None], 3, axis=1)


def new_scene_from_points(seed_points, config: TrainConfig, frame_count: int = 1) -> Scene:
    """Build an initial static scene from (position, color) seed pairs.

    Colors are RGB in [0,1] and land in the SH DC coefficients; curves start
    at zero so the scene is constant in time until trained.
    """
    seed_points = list(seed_points)
    if not seed_points:
        raise ValueError("empty point set")
    positions = np.asarray([p for p, _ in seed_points], dtype=np.float64).reshape(-1, 3)
    colors = np.asarray([c for _, c in seed_points], dtype=np.float64).reshape(-1, 3)
    bad = np.nonzero(~np.isfinite(positions).all(axis=1))[0]
    if bad.size:
        raise ValueError(f"non-finite position at point {int(bad[0])}")
    P = positions.shape[0]
    B = (config.sh_degree + 1) ** 2
    dilation = np.zeros((P, 2))
    dilation[:, 0] = 1.0
    return Scene(
        mu0=positions,
        q0=np.tile([1.0, 0.0, 0.0, 0.0], (P, 1)),
        log_scale=seed_log_scales(positions),
        opacity_logit=np.full(P, float(logit(0.1))),
        sh_dc=rgb_to_dc(colors),
        sh_rest=np.zeros((P, B - 1, 3)),
        poly=np.zeros((P, N_CHANNELS, config.poly_order + 1)),
        four_sin=np.zeros((P, N_CHANNELS, config.fourier_order)),
        four_cos=np.zeros((P, N_CHANNELS, config.fourier_order)),
        dilation=dilation,
        frame_count=frame_count,
        sh_degree=config.sh_degree,
    )
