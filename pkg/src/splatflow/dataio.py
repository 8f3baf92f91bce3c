"""Dataset ingestion, checkpointing, and point-cloud / image export.

File formats (bit-exact layouts in docs/formats.md):
  - manifest.json: frames with camera, image path, raw timestamp, split tag.
  - PNG frames via Pillow, decoded to float64 in [0,1].
  - points.ply / export: binary little-endian PLY, f32 coordinates, u8 colors.
  - checkpoint: 16-byte header, u64 point count, little-endian f32 arrays in
    a fixed field order, JSON trailer, u32 trailer length at the end.
"""

from __future__ import annotations

import json
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .config import TrainConfig
from .core import CH_DC, CH_MU, Camera, Frame, Scene, dc_to_rgb, sigmoid
from .dddm import deform_scene

MAGIC = b"SPLATFLOW4D\0"
CHECKPOINT_VERSION = 1

# Field serialization order; shapes are derived from the JSON trailer.
_CKPT_FIELDS = ("mu0", "q0", "log_scale", "opacity_logit", "sh_dc", "sh_rest",
                "poly", "four_sin", "four_cos", "dilation")

_SEED_FALLBACK_COUNT = 10000


class DataError(ValueError):
    """Raised for malformed datasets, images, or binary files."""


# -- images ------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as e:
        raise DataError(f"unreadable image {path}: {e}") from e
    return arr / 255.0


def save_png(image: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def save_npy(image: np.ndarray, path) -> None:
    np.save(path, np.asarray(image, dtype=np.float32))


# -- dataset -----------------------------------------------------------------

@dataclass
class Dataset:
    train_frames: list[Frame]
    holdout_frames: list[Frame]
    seed_points: list[tuple[np.ndarray, np.ndarray]]

    @property
    def frames(self) -> list[Frame]:
        return self.train_frames + self.holdout_frames


def _camera_from_json(d: dict) -> Camera:
    try:
        return Camera(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]),
                      cy=float(d["cy"]), width=int(d["width"]), height=int(d["height"]),
                      world_to_cam=np.asarray(d["world_to_cam"], dtype=np.float64),
                      znear=float(d.get("znear", 0.01)), zfar=float(d.get("zfar", 100.0)))
    except KeyError as e:
        raise DataError(f"camera record missing key {e}") from e


def load_dataset(directory) -> Dataset:
    """Load manifest + frames + seed points from a dataset directory.

    Timestamps are affinely normalized to [0,1]; a constant-time dataset maps
    every frame to t=0 with a warning. Without points.ply, 10,000 uniform
    random seed points are drawn (fixed generator) inside the bounding box of
    the camera centers.
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"missing manifest.json in {directory}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    records = manifest.get("frames", [])
    if not records:
        raise DataError("manifest has no frames")

    raw_t = np.array([float(r["time"]) for r in records])
    t_min, t_max = raw_t.min(), raw_t.max()
    if t_max > t_min:
        norm_t = (raw_t - t_min) / (t_max - t_min)
    else:
        warnings.warn("all frames share one timestamp; treating the dataset as static")
        norm_t = np.zeros_like(raw_t)

    cams = [_camera_from_json(r["camera"]) for r in records]
    paths = [directory / r["image"] for r in records]
    with ThreadPoolExecutor(max_workers=min(8, len(paths))) as pool:
        images = list(pool.map(load_image, paths))

    train, hold = [], []
    for r, cam, t, img in zip(records, cams, norm_t, images):
        frame = Frame(camera=cam, t=float(t), image=img)
        (hold if r.get("split", "train") == "holdout" else train).append(frame)

    ply_name = manifest.get("points", "points.ply")
    ply_path = directory / ply_name
    if ply_path.exists():
        pos, col = read_ply(ply_path)
        seeds = [(p, c) for p, c in zip(pos, col)]
    else:
        centers = np.stack([c.center for c in cams])
        lo, hi = centers.min(axis=0), centers.max(axis=0)
        pad = np.where(hi - lo < 1e-6, 1.0, 0.0)
        lo, hi = lo - pad, hi + pad
        rng = np.random.default_rng(0)
        pos = rng.uniform(lo, hi, size=(_SEED_FALLBACK_COUNT, 3))
        seeds = [(p, np.full(3, 0.5)) for p in pos]
    return Dataset(train_frames=train, holdout_frames=hold, seed_points=seeds)


# -- PLY ---------------------------------------------------------------------

_PLY_SIZES = {"float": 4, "float32": 4, "double": 8, "float64": 8,
              "uchar": 1, "uint8": 1, "char": 1, "int8": 1,
              "short": 2, "ushort": 2, "int": 4, "uint": 4, "int32": 4, "uint32": 4}
_PLY_DTYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
               "uchar": "u1", "uint8": "u1"}


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Read x/y/z + red/green/blue from a binary little-endian PLY.

    Returns positions (P,3) float64 and colors (P,3) float64 in [0,1].
    Unknown vertex properties are skipped by stride.
    """
    data = Path(path).read_bytes()
    if not data.startswith(b"ply"):
        raise DataError(f"malformed PLY at byte 0: missing 'ply' magic in {path}")
    end = data.find(b"end_header\n")
    if end < 0:
        raise DataError(f"malformed PLY at byte {len(data)}: no end_header in {path}")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    offset = end + len(b"end_header\n")

    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "binary_little_endian":
                raise DataError(f"malformed PLY at byte 4: format {tok[1]} unsupported")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise DataError("malformed PLY: list properties unsupported")
            props.append((tok[2], tok[1]))
    if count is None:
        raise DataError("malformed PLY: no vertex element")

    stride = 0
    layout = {}
    for name, typ in props:
        if typ not in _PLY_SIZES:
            raise DataError(f"malformed PLY: unknown property type {typ}")
        layout[name] = (stride, typ)
        stride += _PLY_SIZES[typ]
    need = offset + count * stride
    if len(data) < need:
        raise DataError(f"malformed PLY at byte {len(data)}: "
                        f"expected {need} bytes for {count} vertices")
    for req in ("x", "y", "z", "red", "green", "blue"):
        if req not in layout:
            raise DataError(f"malformed PLY: missing property {req}")

    def column(name):
        off, typ = layout[name]
        dt = _PLY_DTYPES.get(typ)
        if dt is None:
            raise DataError(f"malformed PLY: property {name} has type {typ}")
        return np.frombuffer(data, dtype=dt, count=count,
                             offset=offset + off).astype(np.float64) \
            if stride == _PLY_SIZES[typ] else np.ndarray(
                (count,), dtype=dt, buffer=data, offset=offset + off,
                strides=(stride,)).astype(np.float64)

    pos = np.stack([column("x"), column("y"), column("z")], axis=1)
    col = np.stack([column("red"), column("green"), column("blue")], axis=1) / 255.0
    return pos, col


def export_ply(scene: Scene, t: float, path) -> None:
    """Write the deformed point cloud at time t (positions, colors, opacity)."""
    dfm = deform_scene(scene, t)
    pos = dfm.mu.astype("<f4")
    rgb = (np.clip(dc_to_rgb(dfm.dc), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    opac = sigmoid(scene.opacity_logit).astype("<f4")
    P = scene.n
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {P}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "property float opacity\nend_header\n"
    ).encode("ascii")
    rec = np.zeros(P, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                             ("red", "u1"), ("green", "u1"), ("blue", "u1"),
                             ("opacity", "<f4")])
    rec["x"], rec["y"], rec["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
    rec["red"], rec["green"], rec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    rec["opacity"] = opac
    with open(path, "wb") as f:
        f.write(header)
        f.write(rec.tobytes())


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(scene: Scene, path, config: TrainConfig | None = None) -> None:
    """Serialize the scene (f32) plus optional config to one binary file."""
    trailer = {
        "sh_degree": scene.sh_degree,
        "frame_count": scene.frame_count,
        "poly_order": scene.poly_order,
        "fourier_order": scene.fourier_order,
        "config": json.loads(config.to_json()) if config is not None else None,
    }
    tbytes = json.dumps(trailer, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HH", CHECKPOINT_VERSION, 0))
        f.write(struct.pack("<Q", scene.n))
        for name in _CKPT_FIELDS:
            f.write(np.ascontiguousarray(getattr(scene, name), dtype="<f4").tobytes())
        f.write(tbytes)
        f.write(struct.pack("<I", len(tbytes)))


def load_checkpoint(path) -> tuple[Scene, TrainConfig | None]:
    data = Path(path).read_bytes()
    if len(data) < 28:
        raise DataError(f"checkpoint truncated at byte {len(data)}")
    if data[:12] != MAGIC:
        raise DataError("not a checkpoint: bad magic")
    version, _ = struct.unpack_from("<HH", data, 12)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (P,) = struct.unpack_from("<Q", data, 16)
    (tlen,) = struct.unpack_from("<I", data, len(data) - 4)
    tstart = len(data) - 4 - tlen
    if tstart < 24:
        raise DataError(f"checkpoint truncated at byte {len(data)}")
    trailer = json.loads(data[tstart:len(data) - 4].decode("utf-8"))
    deg = int(trailer["sh_degree"])
    B = (deg + 1) ** 2
    N1 = int(trailer["poly_order"]) + 1
    L = int(trailer["fourier_order"])
    shapes = {
        "mu0": (P, 3), "q0": (P, 4), "log_scale": (P, 3), "opacity_logit": (P,),
        "sh_dc": (P, 3), "sh_rest": (P, B - 1, 3), "poly": (P, 10, N1),
        "four_sin": (P, 10, L), "four_cos": (P, 10, L), "dilation": (P, 2),
    }
    offset = 24
    arrays = {}
    for name in _CKPT_FIELDS:
        n_items = int(np.prod(shapes[name]))
        nbytes = 4 * n_items
        if offset + nbytes > tstart:
            raise DataError(f"checkpoint truncated at byte {offset}")
        arrays[name] = np.frombuffer(data, dtype="<f4", count=n_items,
                                     offset=offset).astype(np.float64).reshape(shapes[name])
        offset += nbytes
    if offset != tstart:
        raise DataError(f"checkpoint has {tstart - offset} unexpected bytes at byte {offset}")
    scene = Scene(**arrays, frame_count=int(trailer["frame_count"]), sh_degree=deg)
    cfg = None
    if trailer.get("config") is not None:
        cfg = TrainConfig.from_json(json.dumps(trailer["config"]))
    return scene, cfg
