"""Differentiable tile-based splatting of deformed 3D Gaussians.

Forward: deform points to time t, build 3D covariances, project to 2D splats
(EWA affine approximation), bin splats into 16x16 pixel tiles, and alpha-blend
front to back per pixel, stopping a tile once every pixel's transmittance has
dropped below the stop threshold. Backward: reuse each tile's cached blend
state and chain every gradient back to base attributes, curve coefficients and
time dilations.

`render_reference` is a deliberately naive renderer (global depth sort, no
tiles, no early stop, its own transcription of all formulas) used as the
correctness oracle for the tiled path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .core import Camera, Scene, SceneGrads, sigmoid
from .dddm import DeformedScene, _check_time, deform_backward, deform_scene

TILE = 16
# Hard support cutoff: the 99% isocontour of the 2D Gaussian. Splats
# contribute nothing beyond it, which is what makes the tiled and reference
# paths agree to float precision. chi2.ppf(0.99, df=2) = 2 ln 100.
CUTOFF_RHO2 = 2.0 * np.log(100.0)

_DET_MIN = 1e-12

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


@dataclass
class RasterSettings:
    alpha_clamp: float = 0.99
    dilation: float = 0.3
    stop_transmittance: float = 1e-4
    # dtype of the per-pixel tile math. Projection and parameter gradients are
    # always double; single precision here roughly halves render cost and is
    # far below training noise. The default keeps the renderer at reference
    # precision.
    compute_dtype: type = np.float64

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "RasterSettings":
        return cls(alpha_clamp=cfg.alpha_clamp, dilation=cfg.covariance_dilation,
                   stop_transmittance=cfg.stop_transmittance,
                   compute_dtype=np.float32)


# -- spherical harmonics -----------------------------------------------------

def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values, shape (P, (degree+1)^2), for unit directions."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    P = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    b = np.empty((P, (degree + 1) ** 2))
    b[:, 0] = SH_C0
    if degree >= 1:
        b[:, 1] = -SH_C1 * y
        b[:, 2] = SH_C1 * z
        b[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        b[:, 4] = SH_C2[0] * x * y
        b[:, 5] = SH_C2[1] * y * z
        b[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        b[:, 7] = SH_C2[3] * x * z
        b[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        b[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        b[:, 10] = SH_C3[1] * x * y * z
        b[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        b[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        b[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        b[:, 14] = SH_C3[5] * z * (xx - yy)
        b[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return b


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(direction), shape (P, B, 3)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    P = dirs.shape[0]
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    g = np.zeros((P, (degree + 1) ** 2, 3))
    if degree >= 1:
        g[:, 1, 1] = -SH_C1
        g[:, 2, 2] = SH_C1
        g[:, 3, 0] = -SH_C1
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        g[:, 4, 0] = SH_C2[0] * y
        g[:, 4, 1] = SH_C2[0] * x
        g[:, 5, 1] = SH_C2[1] * z
        g[:, 5, 2] = SH_C2[1] * y
        g[:, 6, 0] = -2.0 * SH_C2[2] * x
        g[:, 6, 1] = -2.0 * SH_C2[2] * y
        g[:, 6, 2] = 4.0 * SH_C2[2] * z
        g[:, 7, 0] = SH_C2[3] * z
        g[:, 7, 2] = SH_C2[3] * x
        g[:, 8, 0] = 2.0 * SH_C2[4] * x
        g[:, 8, 1] = -2.0 * SH_C2[4] * y
    if degree >= 3:
        g[:, 9, 0] = 6.0 * SH_C3[0] * x * y
        g[:, 9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
        g[:, 10, 0] = SH_C3[1] * y * z
        g[:, 10, 1] = SH_C3[1] * x * z
        g[:, 10, 2] = SH_C3[1] * x * y
        g[:, 11, 0] = -2.0 * SH_C3[2] * x * y
        g[:, 11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
        g[:, 11, 2] = 8.0 * SH_C3[2] * y * z
        g[:, 12, 0] = -6.0 * SH_C3[3] * x * z
        g[:, 12, 1] = -6.0 * SH_C3[3] * y * z
        g[:, 12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        g[:, 13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
        g[:, 13, 1] = -2.0 * SH_C3[4] * x * y
        g[:, 13, 2] = 8.0 * SH_C3[4] * x * z
        g[:, 14, 0] = 2.0 * SH_C3[5] * x * z
        g[:, 14, 1] = -2.0 * SH_C3[5] * y * z
        g[:, 14, 2] = SH_C3[5] * (xx - yy)
        g[:, 15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
        g[:, 15, 1] = -6.0 * SH_C3[6] * x * y
    return g


def eval_sh(sh_coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """Color from SH coefficients (B, 3) seen along a unit direction."""
    sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    degree = int(round(np.sqrt(sh_coeffs.shape[0]))) - 1
    basis = sh_basis(view_dir, degree)[0]
    return np.maximum(basis @ sh_coeffs + 0.5, 0.0)


# -- covariance and projection ----------------------------------------------

def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4) (w,x,y,z)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_rot_grad(q: np.ndarray) -> np.ndarray:
    """dR/dq for unit quaternions: shape (..., 4, 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    o = np.zeros_like(w)
    dR = np.empty(q.shape[:-1] + (4, 3, 3))
    dR[..., 0, :, :] = 2 * np.stack([
        np.stack([o, -z, y], axis=-1),
        np.stack([z, o, -x], axis=-1),
        np.stack([-y, x, o], axis=-1)], axis=-2)
    dR[..., 1, :, :] = 2 * np.stack([
        np.stack([o, y, z], axis=-1),
        np.stack([y, -2 * x, -w], axis=-1),
        np.stack([z, w, -2 * x], axis=-1)], axis=-2)
    dR[..., 2, :, :] = 2 * np.stack([
        np.stack([-2 * y, x, w], axis=-1),
        np.stack([x, o, z], axis=-1),
        np.stack([-w, z, -2 * y], axis=-1)], axis=-2)
    dR[..., 3, :, :] = 2 * np.stack([
        np.stack([-2 * z, -w, x], axis=-1),
        np.stack([w, -2 * z, y], axis=-1),
        np.stack([x, y, o], axis=-1)], axis=-2)
    return dR


def build_covariance(log_scale: np.ndarray, q: np.ndarray) -> np.ndarray:
    """World-space covariance R diag(exp(s))^2 R^T of one Gaussian."""
    log_scale = np.asarray(log_scale, dtype=np.float64).reshape(3)
    q = np.asarray(q, dtype=np.float64).reshape(4)
    if not (np.all(np.isfinite(log_scale)) and np.all(np.isfinite(q))):
        raise ValueError("non-finite covariance inputs")
    q = q / np.linalg.norm(q)
    M = quat_to_rot(q) * np.exp(log_scale)[None, :]
    return M @ M.T


def build_covariances(scene: Scene, q_unit: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """All covariances at once. Returns (Sigma, R, M, s) for the backward pass."""
    s = np.exp(scene.log_scale)
    R = quat_to_rot(q_unit)
    M = R * s[:, None, :]
    Sigma = M @ np.swapaxes(M, 1, 2)
    return Sigma, R, M, s


@dataclass
class ProjectedSplat:
    """Screen-space geometry of one projected Gaussian."""

    mean2d: np.ndarray
    conic: np.ndarray   # (a, b, c) of the 2x2 inverse covariance [[a,b],[b,c]]
    depth: float
    point_index: int = -1
    color: np.ndarray | None = None
    opacity: float | None = None


def project_point(mu: np.ndarray, Sigma: np.ndarray, cam: Camera,
                  dilation: float = 0.3) -> ProjectedSplat | None:
    """Project one Gaussian; None when culled (behind camera, off-screen, degenerate)."""
    mu = np.asarray(mu, dtype=np.float64).reshape(3)
    pc = cam.rotation @ mu + cam.translation
    z = pc[2]
    if not (cam.znear < z < cam.zfar):
        return None
    mean2d = np.array([cam.fx * pc[0] / z + cam.cx, cam.fy * pc[1] / z + cam.cy])
    J = np.array([[cam.fx / z, 0.0, -cam.fx * pc[0] / z ** 2],
                  [0.0, cam.fy / z, -cam.fy * pc[1] / z ** 2]])
    T = J @ cam.rotation
    cov2d = T @ np.asarray(Sigma, dtype=np.float64) @ T.T + dilation * np.eye(2)
    det = cov2d[0, 0] * cov2d[1, 1] - cov2d[0, 1] ** 2
    if not np.isfinite(det) or det <= _DET_MIN:
        return None
    rx = np.sqrt(CUTOFF_RHO2 * cov2d[0, 0])
    ry = np.sqrt(CUTOFF_RHO2 * cov2d[1, 1])
    guard = TILE
    if (mean2d[0] + rx < -guard or mean2d[0] - rx > cam.width + guard
            or mean2d[1] + ry < -guard or mean2d[1] - ry > cam.height + guard):
        return None
    conic = np.array([cov2d[1, 1] / det, -cov2d[0, 1] / det, cov2d[0, 0] / det])
    return ProjectedSplat(mean2d=mean2d, conic=conic, depth=float(z))


@dataclass
class ForwardCache:
    """Every intermediate of one forward pass that backward reuses."""

    dfm: DeformedScene
    Sigma: np.ndarray
    R: np.ndarray
    M: np.ndarray
    s: np.ndarray
    q_unit: np.ndarray
    valid: np.ndarray       # (P,) bool: survived culling
    vidx: np.ndarray        # (V,) point index per valid splat
    pc: np.ndarray          # (V, 3) camera-space positions
    mean2d: np.ndarray      # (V, 2)
    cov2d: np.ndarray       # (V, 3) packed (m00, m01, m11), dilated
    conic: np.ndarray       # (V, 3)
    depth: np.ndarray       # (V,)
    radii: np.ndarray       # (V, 2) per-axis cutoff extents
    color: np.ndarray       # (V, 3) after clamp
    color_pre: np.ndarray   # (V, 3) before clamp
    basis: np.ndarray       # (V, B)
    view_dir: np.ndarray    # (V, 3)
    view_dist: np.ndarray   # (V,)
    opacity: np.ndarray     # (V,)
    n_culled_singular: int


def _project_scene(scene: Scene, dfm: DeformedScene, cam: Camera,
                   settings: RasterSettings) -> ForwardCache:
    Sigma, R, M, s = build_covariances(scene, dfm.q)
    pc_all = dfm.mu @ cam.rotation.T + cam.translation
    z = pc_all[:, 2]
    in_depth = (z > cam.znear) & (z < cam.zfar)

    # Project only points in the depth range; others never become splats.
    idx0 = np.nonzero(in_depth)[0]
    pc = pc_all[idx0]
    zz = pc[:, 2]
    mean2d = np.stack([cam.fx * pc[:, 0] / zz + cam.cx,
                       cam.fy * pc[:, 1] / zz + cam.cy], axis=1)
    J = np.zeros((idx0.size, 2, 3))
    J[:, 0, 0] = cam.fx / zz
    J[:, 0, 2] = -cam.fx * pc[:, 0] / zz ** 2
    J[:, 1, 1] = cam.fy / zz
    J[:, 1, 2] = -cam.fy * pc[:, 1] / zz ** 2
    T = J @ cam.rotation
    cov = np.einsum("vij,vjk,vlk->vil", T, Sigma[idx0], T)
    cov[:, 0, 0] += settings.dilation
    cov[:, 1, 1] += settings.dilation
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
    ok = np.isfinite(det) & (det > _DET_MIN)
    n_singular = int(np.count_nonzero(~ok & np.isfinite(det)))
    with np.errstate(invalid="ignore"):
        rx = np.sqrt(np.maximum(CUTOFF_RHO2 * cov[:, 0, 0], 0.0))
        ry = np.sqrt(np.maximum(CUTOFF_RHO2 * cov[:, 1, 1], 0.0))
    guard = TILE
    on_screen = ((mean2d[:, 0] + rx >= -guard) & (mean2d[:, 0] - rx <= cam.width + guard)
                 & (mean2d[:, 1] + ry >= -guard) & (mean2d[:, 1] - ry <= cam.height + guard))
    keep = ok & on_screen
    vidx = idx0[keep]

    cov_p = np.stack([cov[keep, 0, 0], cov[keep, 0, 1], cov[keep, 1, 1]], axis=1)
    det_k = det[keep]
    conic = np.stack([cov_p[:, 2] / det_k, -cov_p[:, 1] / det_k, cov_p[:, 0] / det_k], axis=1)

    diff = dfm.mu[vidx] - cam.center
    dist = np.linalg.norm(diff, axis=1)
    view_dir = diff / dist[:, None]
    basis = sh_basis(view_dir, scene.sh_degree)
    coeffs = np.concatenate([dfm.dc[vidx, None, :], scene.sh_rest[vidx]], axis=1)
    color_pre = np.einsum("vb,vbc->vc", basis, coeffs) + 0.5
    color = np.maximum(color_pre, 0.0)
    opacity = sigmoid(scene.opacity_logit[vidx])

    valid = np.zeros(scene.n, dtype=bool)
    valid[vidx] = True
    return ForwardCache(dfm=dfm, Sigma=Sigma, R=R, M=M, s=s, q_unit=dfm.q,
                        valid=valid, vidx=vidx, pc=pc[keep], mean2d=mean2d[keep],
                        cov2d=cov_p, conic=conic, depth=zz[keep],
                        radii=np.stack([rx[keep], ry[keep]], axis=1),
                        color=color, color_pre=color_pre, basis=basis,
                        view_dir=view_dir, view_dist=dist, opacity=opacity,
                        n_culled_singular=n_singular)


# -- binning -----------------------------------------------------------------

@dataclass
class SplatList:
    """Tile-sorted splat entries with per-tile CSR ranges."""

    entry_splat: np.ndarray   # (E,) index into the valid-splat arrays
    entry_tile: np.ndarray    # (E,)
    offsets: np.ndarray       # (tiles+1,) CSR ranges into the entry arrays
    tiles_x: int
    tiles_y: int


def bin_and_sort(mean2d: np.ndarray, radii: np.ndarray, depth: np.ndarray,
                 width: int, height: int) -> SplatList:
    """Duplicate each splat into the tiles its cutoff box overlaps, sort by
    (tile, depth, splat index) with a stable key."""
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    V = mean2d.shape[0]
    if V == 0:
        return SplatList(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
                         np.zeros(tiles_x * tiles_y + 1, dtype=np.int64), tiles_x, tiles_y)
    x0 = np.clip(np.floor((mean2d[:, 0] - radii[:, 0]) / TILE).astype(np.int64), 0, tiles_x - 1)
    x1 = np.clip(np.floor((mean2d[:, 0] + radii[:, 0]) / TILE).astype(np.int64), 0, tiles_x - 1)
    y0 = np.clip(np.floor((mean2d[:, 1] - radii[:, 1]) / TILE).astype(np.int64), 0, tiles_y - 1)
    y1 = np.clip(np.floor((mean2d[:, 1] + radii[:, 1]) / TILE).astype(np.int64), 0, tiles_y - 1)
    # Off-image boxes clip to border tiles they do not touch; drop those.
    inside = ((mean2d[:, 0] + radii[:, 0] >= 0) & (mean2d[:, 0] - radii[:, 0] < width)
              & (mean2d[:, 1] + radii[:, 1] >= 0) & (mean2d[:, 1] - radii[:, 1] < height))
    nx = np.where(inside, x1 - x0 + 1, 0)
    ny = np.where(inside, y1 - y0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    entry_splat = np.repeat(np.arange(V), counts)
    # Enumerate each splat's tile rectangle in row-major order.
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total) - np.repeat(starts, counts)
    lx = local % np.repeat(np.maximum(nx, 1), counts)
    ly = local // np.repeat(np.maximum(nx, 1), counts)
    tx = np.repeat(x0, counts) + lx
    ty = np.repeat(y0, counts) + ly
    entry_tile = ty * tiles_x + tx
    order = np.lexsort((entry_splat, depth[entry_splat], entry_tile))
    entry_splat = entry_splat[order]
    entry_tile = entry_tile[order]
    offsets = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    np.add.at(offsets, entry_tile + 1, 1)
    offsets = np.cumsum(offsets)
    return SplatList(entry_splat=entry_splat, entry_tile=entry_tile,
                     offsets=offsets, tiles_x=tiles_x, tiles_y=tiles_y)


# -- forward -----------------------------------------------------------------

# Entries are blended in chunks of this many; a tile stops early once every
# pixel's transmittance has fallen below the stop threshold at a chunk border.
_CHUNK = 128


@dataclass
class TileState:
    """Blend state of one tile's contributing entries, reused by backward.

    Two kinds of dead entry are dropped: those whose cutoff misses every tile
    pixel (alpha 0 everywhere) and the suffix past the point where every
    pixel's transmittance fell below the stop threshold. Neither carries
    weight or gradient; dropping them changes nothing but the arithmetic.
    """

    tid: int
    sel: np.ndarray     # (L,) valid-splat index per live entry, front to back
    xs: np.ndarray      # pixel columns of the tile
    ys: np.ndarray      # pixel rows of the tile
    alpha: np.ndarray   # (L, pix)
    G: np.ndarray       # (L, pix) Gaussian falloff inside the cutoff
    live: np.ndarray    # (L, pix) bool: in support and below the alpha cap
    T_in: np.ndarray    # (L, pix) transmittance entering each entry
    mask: np.ndarray    # (L, pix) bool: entry above the stop threshold
    w: np.ndarray       # (L, pix) blend weights alpha * T_in * mask
    T_fin: np.ndarray   # (pix,) final transmittance


@dataclass
class RenderAux:
    """State rasterize_backward needs from the matching forward call."""

    t: float
    settings: RasterSettings
    background: np.ndarray
    point_count: int
    transmittance: np.ndarray   # (H, W) final per-pixel transmittance
    n_contrib: np.ndarray       # (H, W) contributing entries per pixel
    splats: SplatList
    cache: ForwardCache
    tiles: list[TileState] = field(default_factory=list)


def _tile_pixels(tx: int, ty: int, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.arange(tx * TILE, min((tx + 1) * TILE, width))
    ys = np.arange(ty * TILE, min((ty + 1) * TILE, height))
    return xs, ys


def _pixel_offsets(cache: ForwardCache, sel: np.ndarray, xs: np.ndarray,
                   ys: np.ndarray, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center offsets from each entry's splat mean: (E, nx) and (E, ny)."""
    mean = cache.mean2d[sel].astype(dtype)
    dx = (xs + 0.5).astype(dtype)[None, :] - mean[:, 0:1]
    dy = (ys + 0.5).astype(dtype)[None, :] - mean[:, 1:2]
    return dx, dy


def _tile_alpha(cache: ForwardCache, sel: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                settings: RasterSettings):
    """Alpha of each (entry, pixel) pair in one tile, with the masks backward
    needs: the cutoff support mask and below-the-cap (unclamped) entries."""
    dt = settings.compute_dtype
    dx, dy = _pixel_offsets(cache, sel, xs, ys, dt)
    con = cache.conic[sel].astype(dt)
    a, b, c = con[:, 0:1], con[:, 1:2], con[:, 2:3]
    # rho2[e, i, j] = a dx_j^2 + 2 b dx_j dy_i + c dy_i^2, built from the
    # separable pieces so only the cross term touches the full (E, ny, nx) grid.
    rho2 = (2.0 * b * dx)[:, None, :] * dy[:, :, None]
    rho2 += (a * dx * dx)[:, None, :]
    rho2 += (c * dy * dy)[:, :, None]
    rho2 = rho2.reshape(sel.size, -1)
    support = rho2 <= CUTOFF_RHO2
    rho2 *= -0.5
    G = np.exp(rho2, out=rho2)
    G *= support
    raw = cache.opacity[sel].astype(dt)[:, None] * G
    unclamped = raw < settings.alpha_clamp
    # Outside the cutoff raw is 0, so the clamp branch never fires there and
    # alpha is already 0 without a separate support factor.
    alpha = np.minimum(raw, dt(settings.alpha_clamp), out=raw)
    return alpha, G, support, unclamped


def rasterize_forward(scene: Scene, t: float, cam: Camera, background,
                      settings: RasterSettings | None = None) -> tuple[np.ndarray, RenderAux]:
    """Render the scene at time t. Returns (H, W, 3) image and backward state."""
    t = _check_time(t)
    settings = settings or RasterSettings()
    background = np.asarray(background, dtype=np.float64).reshape(3)
    H, W = cam.height, cam.width
    dfm = deform_scene(scene, t)
    cache = _project_scene(scene, dfm, cam, settings)
    splats = bin_and_sort(cache.mean2d, cache.radii, cache.depth, W, H)

    dt = settings.compute_dtype
    bg = background.astype(dt)
    image = np.empty((H, W, 3))
    image[:] = background
    transmittance = np.ones((H, W))
    n_contrib = np.zeros((H, W), dtype=np.int64)
    theta = settings.stop_transmittance
    tiles: list[TileState] = []

    for tid in np.nonzero(np.diff(splats.offsets) > 0)[0]:
        lo, hi = splats.offsets[tid], splats.offsets[tid + 1]
        tx, ty = int(tid % splats.tiles_x), int(tid // splats.tiles_x)
        sel = splats.entry_splat[lo:hi]
        xs, ys = _tile_pixels(tx, ty, W, H)
        npix = xs.size * ys.size
        E = sel.size
        alpha = np.empty((E, npix), dtype=dt)
        G = np.empty((E, npix), dtype=dt)
        live = np.empty((E, npix), dtype=bool)
        T_in = np.empty((E, npix), dtype=dt)
        mask = np.empty((E, npix), dtype=bool)
        kept = np.empty(E, dtype=np.int64)
        carry = np.ones(npix, dtype=dt)     # transmittance entering the next chunk
        L = 0
        for base in range(0, E, _CHUNK):
            sub = sel[base:base + _CHUNK]
            a_c, G_c, sup_c, unc_c = _tile_alpha(cache, sub, xs, ys, settings)
            cumT = 1.0 - a_c
            np.multiply.accumulate(cumT, axis=0, out=cumT)
            cumT *= carry
            T_prev = np.empty_like(cumT)
            T_prev[0] = carry
            T_prev[1:] = cumT[:-1]
            carry = cumT[-1].copy()
            # Entries whose cutoff misses every tile pixel have alpha 0
            # throughout: no weight, no gradient, no transmittance change.
            rows = np.nonzero(np.any(sup_c, axis=1))[0]
            k = rows.size
            if k == sub.size:
                alpha[L:L + k] = a_c
                G[L:L + k] = G_c
                np.logical_and(sup_c, unc_c, out=live[L:L + k])
                T_in[L:L + k] = T_prev
                np.greater_equal(cumT, theta, out=mask[L:L + k])
                kept[L:L + k] = base + np.arange(k)
            else:
                np.take(a_c, rows, axis=0, out=alpha[L:L + k])
                np.take(G_c, rows, axis=0, out=G[L:L + k])
                np.logical_and(sup_c[rows], unc_c[rows], out=live[L:L + k])
                np.take(T_prev, rows, axis=0, out=T_in[L:L + k])
                np.greater_equal(cumT[rows], theta, out=mask[L:L + k])
                kept[L:L + k] = base + rows
            L += k
            if base + _CHUNK < E and carry.max() < theta:
                break
        if L == 0:
            continue        # every entry's cutoff missed the tile: background only
        alpha, G, live = alpha[:L], G[:L], live[:L]
        T_in, mask = T_in[:L], mask[:L]
        sel = sel[kept[:L]]
        w = alpha * T_in
        w *= mask
        col = cache.color[sel].astype(dt)            # (L, 3)
        px = w.T @ col                               # (pix, 3)
        T_fin = np.where(mask, 1.0 - alpha, dt(1.0)).prod(axis=0)
        px += T_fin[:, None] * bg[None, :]
        ny, nx = ys.size, xs.size
        image[ys[0]:ys[0] + ny, xs[0]:xs[0] + nx] = px.reshape(ny, nx, 3)
        transmittance[ys[0]:ys[0] + ny, xs[0]:xs[0] + nx] = T_fin.reshape(ny, nx)
        n_contrib[ys[0]:ys[0] + ny, xs[0]:xs[0] + nx] = \
            mask.sum(axis=0).reshape(ny, nx)
        tiles.append(TileState(tid=int(tid), sel=sel, xs=xs, ys=ys, alpha=alpha,
                               G=G, live=live, T_in=T_in, mask=mask, w=w,
                               T_fin=T_fin))

    aux = RenderAux(t=t, settings=settings, background=background,
                    point_count=scene.n, transmittance=transmittance,
                    n_contrib=n_contrib, splats=splats, cache=cache, tiles=tiles)
    return image, aux


# -- backward ----------------------------------------------------------------

@dataclass
class ScreenStats:
    """Per-point screen-space gradient magnitudes for density control."""

    grad_norm: np.ndarray   # (P,) NDC-scaled positional gradient norm
    visible: np.ndarray     # (P,) bool


def rasterize_backward(scene: Scene, t: float, cam: Camera, aux: RenderAux,
                       dL_dimage: np.ndarray) -> tuple[SceneGrads, ScreenStats]:
    """Chain per-pixel color gradients back to every scene parameter."""
    if aux.point_count != scene.n:
        raise ValueError("aux does not match scene: point counts differ")
    t = _check_time(t)
    cache = aux.cache
    H, W = cam.height, cam.width
    dL_dimage = np.asarray(dL_dimage, dtype=np.float64).reshape(H, W, 3)
    V = cache.vidx.size

    g_mean2d = np.zeros((V, 2))
    g_conic = np.zeros((V, 3))
    g_color = np.zeros((V, 3))
    g_opacity = np.zeros(V)

    dt = aux.settings.compute_dtype
    bg = aux.background.astype(dt)
    for ts in aux.tiles:
        sel, xs, ys = ts.sel, ts.xs, ts.ys
        ny, nx = ys.size, xs.size
        L = sel.size
        dC = dL_dimage[ys[0]:ys[0] + ny,
                       xs[0]:xs[0] + nx].reshape(-1, 3).astype(dt)         # (pix, 3)
        col = cache.color[sel].astype(dt)                                  # (L, 3)

        # dL/dcolor_e = sum_pix w * dC
        g_color_t = ts.w @ dC                                              # (L, 3)

        # Radiance behind each entry, already dotted with dC: suffix sums of
        # the entries' own dotted contributions plus the background term.
        coldot = col @ dC.T                                                # (L, pix)
        wcd = ts.w * coldot
        suffix = np.cumsum(wcd[::-1], axis=0)[::-1]
        suffix -= wcd
        suffix += (ts.T_fin * (dC @ bg))[None, :]
        om = 1.0 - ts.alpha
        suffix /= om
        np.multiply(coldot, ts.T_in, out=coldot)
        coldot -= suffix
        coldot *= ts.mask
        dL_dalpha = coldot

        # alpha = opacity * G below the cap, else constant; dL/drho2 is
        # -opacity/2 * dL/dalpha * G on the live entries.
        np.multiply(dL_dalpha, ts.live, out=om)
        om *= ts.G
        g_opacity_t = om.sum(axis=1)
        om *= (dt(-0.5) * cache.opacity[sel].astype(dt))[:, None]
        M = om

        # rho2 is separable in (dx, dy), so every geometric gradient reduces
        # to row and column marginals of dL/drho2; nothing else needs the
        # full pixel grid.
        Mt = M.reshape(L, ny, nx)
        rowsum = Mt.sum(axis=2)                                            # (L, ny)
        colsum = Mt.sum(axis=1)                                            # (L, nx)
        dx, dy = _pixel_offsets(cache, sel, xs, ys, dt)
        Mdx = np.matmul(Mt, dx[:, :, None])[:, :, 0]                       # (L, ny)
        con = cache.conic[sel].astype(dt)
        a, b, c = con[:, 0], con[:, 1], con[:, 2]
        s_x = np.einsum("lj,lj->l", colsum, dx)
        s_y = np.einsum("li,li->l", rowsum, dy)
        g_conic_t = np.stack([np.einsum("lj,lj,lj->l", colsum, dx, dx),
                              2.0 * np.einsum("li,li->l", Mdx, dy),
                              np.einsum("li,li,li->l", rowsum, dy, dy)], axis=1)
        g_mean2d_t = np.stack([-2.0 * (a * s_x + b * s_y),
                               -2.0 * (b * s_x + c * s_y)], axis=1)

        np.add.at(g_color, sel, g_color_t)
        np.add.at(g_opacity, sel, g_opacity_t)
        np.add.at(g_conic, sel, g_conic_t)
        np.add.at(g_mean2d, sel, g_mean2d_t)

    grads = SceneGrads.zeros(scene)
    stats = ScreenStats(grad_norm=np.zeros(scene.n), visible=cache.valid.copy())
    if V:
        _splat_grads_to_scene(scene, cam, cache, g_mean2d, g_conic, g_color,
                              g_opacity, grads)
        ndc = g_mean2d * np.array([W / 2.0, H / 2.0])
        stats.grad_norm[cache.vidx] = np.linalg.norm(ndc, axis=1)
    return grads, stats


def _splat_grads_to_scene(scene: Scene, cam: Camera, cache: ForwardCache,
                          g_mean2d: np.ndarray, g_conic: np.ndarray,
                          g_color: np.ndarray, g_opacity: np.ndarray,
                          grads: SceneGrads) -> None:
    """Chain screen-space splat gradients into scene parameter gradients."""
    vidx = cache.vidx
    V = vidx.size
    pc = cache.pc
    z = pc[:, 2]
    dfm = cache.dfm

    # Color chain: clamp, SH basis, coefficients, view direction.
    dL_dpre = g_color * (cache.color_pre > 0.0)
    coeffs = np.concatenate([dfm.dc[vidx, None, :], scene.sh_rest[vidx]], axis=1)
    dL_dcoef = cache.basis[:, :, None] * dL_dpre[:, None, :]     # (V, B, 3)
    dL_ddc = np.zeros((scene.n, 3))
    dL_ddc[vidx] = dL_dcoef[:, 0, :]
    np.add.at(grads.sh_rest, vidx, dL_dcoef[:, 1:, :])
    bgrad = sh_basis_grad(cache.view_dir, scene.sh_degree)       # (V, B, 3)
    dL_ddir = np.einsum("vbc,vbk->vk", np.einsum("vc,vbc->vbc", dL_dpre, coeffs), bgrad)
    # dir = diff / |diff|: project out the radial component.
    dL_ddiff = (dL_ddir - cache.view_dir *
                np.sum(dL_ddir * cache.view_dir, axis=1, keepdims=True)) \
        / cache.view_dist[:, None]

    # Opacity chain.
    op = cache.opacity
    dL_dologit = np.zeros(scene.n)
    dL_dologit[vidx] = g_opacity * op * (1.0 - op)
    grads.opacity_logit += dL_dologit

    # mean2d -> camera-space position.
    dL_dpc = np.zeros((V, 3))
    dL_dpc[:, 0] = g_mean2d[:, 0] * cam.fx / z
    dL_dpc[:, 1] = g_mean2d[:, 1] * cam.fy / z
    dL_dpc[:, 2] = -(g_mean2d[:, 0] * cam.fx * pc[:, 0]
                     + g_mean2d[:, 1] * cam.fy * pc[:, 1]) / z ** 2

    # conic -> dilated 2D covariance: dL/dM2 = -A Gf A with A the conic.
    A = np.empty((V, 2, 2))
    A[:, 0, 0] = cache.conic[:, 0]
    A[:, 0, 1] = A[:, 1, 0] = cache.conic[:, 1]
    A[:, 1, 1] = cache.conic[:, 2]
    Gf = np.empty((V, 2, 2))
    Gf[:, 0, 0] = g_conic[:, 0]
    Gf[:, 0, 1] = Gf[:, 1, 0] = 0.5 * g_conic[:, 1]
    Gf[:, 1, 1] = g_conic[:, 2]
    dL_dcov = -np.einsum("vij,vjk,vkl->vil", A, Gf, A)           # (V, 2, 2) full form

    # cov2d = T Sigma T^T (+ const): into Sigma and T.
    J = np.zeros((V, 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * pc[:, 0] / z ** 2
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * pc[:, 1] / z ** 2
    T = J @ cam.rotation
    Sig = cache.Sigma[vidx]
    dL_dSigma = np.einsum("vji,vjk,vkl->vil", T, dL_dcov, T)     # T^T G T
    dL_dT = np.einsum("vij,vjk,vkl->vil", dL_dcov + np.swapaxes(dL_dcov, 1, 2), T, Sig)
    dL_dJ = np.einsum("vij,kj->vik", dL_dT, cam.rotation)
    dL_dpc[:, 0] += -cam.fx / z ** 2 * dL_dJ[:, 0, 2]
    dL_dpc[:, 1] += -cam.fy / z ** 2 * dL_dJ[:, 1, 2]
    dL_dpc[:, 2] += (-cam.fx / z ** 2 * dL_dJ[:, 0, 0]
                     - cam.fy / z ** 2 * dL_dJ[:, 1, 1]
                     + 2.0 * cam.fx * pc[:, 0] / z ** 3 * dL_dJ[:, 0, 2]
                     + 2.0 * cam.fy * pc[:, 1] / z ** 3 * dL_dJ[:, 1, 2])

    # Sigma = M M^T with M = R diag(s).
    M = cache.M[vidx]
    dL_dM = np.einsum("vij,vjk->vik", dL_dSigma + np.swapaxes(dL_dSigma, 1, 2), M)
    s = cache.s[vidx]
    R = cache.R[vidx]
    dL_ds = np.einsum("vij,vij->vj", dL_dM, R)
    np.add.at(grads.log_scale, vidx, dL_ds * s)
    dL_dR = dL_dM * s[:, None, :]
    dRdq = quat_rot_grad(cache.q_unit[vidx])                     # (V, 4, 3, 3)
    dL_dq_v = np.einsum("vij,vqij->vq", dL_dR, dRdq)

    # Camera-space position -> world position (plus the SH direction term).
    dL_dmu = np.zeros((scene.n, 3))
    dL_dmu[vidx] = dL_dpc @ cam.rotation + dL_ddiff
    dL_dq = np.zeros((scene.n, 4))
    dL_dq[vidx] = dL_dq_v

    deform_backward(scene, dfm, dL_dmu, dL_dq, dL_ddc, grads)


# -- reference renderer ------------------------------------------------------

def render_reference(scene: Scene, t: float, cam: Camera, background,
                     alpha_clamp: float = 0.99, dilation: float = 0.3) -> np.ndarray:
    """Brute-force oracle: full global depth sort, per-pixel blend over every
    splat, no tiles, no early stop. Independent transcription of the math."""
    from .dddm import deform_point

    t = _check_time(t)
    background = np.asarray(background, dtype=np.float64).reshape(3)
    H, W = cam.height, cam.width
    image = np.zeros((H, W, 3))
    trans = np.ones((H, W))
    Rw = cam.rotation
    tw = cam.translation

    entries = []
    for i in range(scene.n):
        g = scene.point(i)
        att = deform_point(g, t)
        pc = Rw @ att.mu_t + tw
        if not (cam.znear < pc[2] < cam.zfar):
            continue
        # Covariance straight from the definition.
        qw, qx, qy, qz = att.q_t
        R = np.array([
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy)],
            [2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx)],
            [2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy)]])
        S = np.diag(np.exp(g.log_scale))
        Sigma = R @ S @ S @ R.T
        z = pc[2]
        J = np.array([[cam.fx / z, 0, -cam.fx * pc[0] / z ** 2],
                      [0, cam.fy / z, -cam.fy * pc[1] / z ** 2]])
        cov = J @ Rw @ Sigma @ (J @ Rw).T + dilation * np.eye(2)
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
        if not np.isfinite(det) or det <= _DET_MIN:
            continue
        mean2d = np.array([cam.fx * pc[0] / z + cam.cx, cam.fy * pc[1] / z + cam.cy])
        rx = np.sqrt(CUTOFF_RHO2 * cov[0, 0])
        ry = np.sqrt(CUTOFF_RHO2 * cov[1, 1])
        if (mean2d[0] + rx < -TILE or mean2d[0] - rx > W + TILE
                or mean2d[1] + ry < -TILE or mean2d[1] - ry > H + TILE):
            continue
        conic = np.array([cov[1, 1] / det, -cov[0, 1] / det, cov[0, 0] / det])
        view = att.mu_t - cam.center
        view = view / np.linalg.norm(view)
        coeffs = np.vstack([att.dc_t, g.sh_coeffs[1:]])
        color = _reference_sh(coeffs, view, scene.sh_degree)
        opacity = 1.0 / (1.0 + np.exp(-g.opacity_logit))
        entries.append((z, i, mean2d, conic, color, opacity))

    entries.sort(key=lambda e: (e[0], e[1]))
    px = np.arange(W) + 0.5
    py = np.arange(H) + 0.5
    gx, gy = np.meshgrid(px, py)
    for z, i, mean2d, conic, color, opacity in entries:
        dx = gx - mean2d[0]
        dy = gy - mean2d[1]
        rho2 = conic[0] * dx * dx + 2 * conic[1] * dx * dy + conic[2] * dy * dy
        G = np.where(rho2 <= CUTOFF_RHO2, np.exp(-0.5 * rho2), 0.0)
        alpha = np.minimum(opacity * G, alpha_clamp)
        image += (trans * alpha)[:, :, None] * color[None, None, :]
        trans = trans * (1.0 - alpha)
    image += trans[:, :, None] * background[None, None, :]
    return image


def _reference_sh(coeffs: np.ndarray, d: np.ndarray, degree: int) -> np.ndarray:
    """Plain unrolled SH evaluation for the reference path."""
    x, y, z = d
    c = SH_C0 * coeffs[0]
    if degree >= 1:
        c = c - SH_C1 * y * coeffs[1] + SH_C1 * z * coeffs[2] - SH_C1 * x * coeffs[3]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        c = (c + SH_C2[0] * x * y * coeffs[4] + SH_C2[1] * y * z * coeffs[5]
             + SH_C2[2] * (2 * zz - xx - yy) * coeffs[6]
             + SH_C2[3] * x * z * coeffs[7] + SH_C2[4] * (xx - yy) * coeffs[8])
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        c = (c + SH_C3[0] * y * (3 * xx - yy) * coeffs[9]
             + SH_C3[1] * x * y * z * coeffs[10]
             + SH_C3[2] * y * (4 * zz - xx - yy) * coeffs[11]
             + SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * coeffs[12]
             + SH_C3[4] * x * (4 * zz - xx - yy) * coeffs[13]
             + SH_C3[5] * z * (xx - yy) * coeffs[14]
             + SH_C3[6] * x * (xx - 3 * yy) * coeffs[15])
    return np.maximum(c + 0.5, 0.0)
