"""File formats: sRGB-encoded PNG/PPM images, raw float channel dumps,
binary LiDAR records, and ASCII PLY point-set exports.

Channel dumps ("PVGC"): 16-byte header = magic + u32 height, width, channels
(little-endian), followed by row-major float32 data.
LiDAR files ("PVGL"): magic + u32 record count, then float32 (x, y, z, t)
records, little-endian.
"""

import struct

import numpy as np
from PIL import Image

from .errors import ChecksumMismatch
from .points import PARAM_FIELDS, PointCloud

CHANNEL_MAGIC = b"PVGC"
LIDAR_MAGIC = b"PVGL"


# -- color transfer ----------------------------------------------------------------


def srgb_encode(linear):
    """Linear [0,1] -> sRGB [0,1]."""
    c = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(c, 1.0 / 2.4) - 0.055)


def srgb_decode(encoded):
    """sRGB [0,1] -> linear [0,1]."""
    c = np.clip(np.asarray(encoded, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.04045, c / 12.92, np.power((c + 0.055) / 1.055, 2.4))


def to_uint8(img_linear):
    return np.round(srgb_encode(img_linear) * 255.0).astype(np.uint8)


def write_png(path, img_linear):
    """8-bit PNG with sRGB encoding from a linear [0,1] image."""
    Image.fromarray(to_uint8(img_linear)).save(path, format="PNG")


def read_png(path):
    """Linear [0,1] image decoded from an sRGB 8-bit PNG."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return srgb_decode(arr)


def read_mask_png(path, threshold=127):
    """8-bit grayscale mask: values above the threshold count as set."""
    arr = np.asarray(Image.open(path).convert("L"))
    return arr > threshold


def write_mask_png(path, mask):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, format="PNG")


def write_ppm(path, img_linear):
    """ASCII (P3) PPM with the same sRGB 8-bit encoding as the PNG writer."""
    data = to_uint8(img_linear)
    h, w = data.shape[:2]
    with open(path, "w") as fh:
        fh.write(f"P3\n{w} {h}\n255\n")
        for row in data.reshape(h, -1):
            fh.write(" ".join(str(v) for v in row) + "\n")


# -- raw channel dumps ----------------------------------------------------------------


def write_channels(path, array):
    """Float32 dump of an (H, W) or (H, W, C) channel array."""
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W[, C]) array, got shape {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(CHANNEL_MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_channels(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != CHANNEL_MAGIC:
            raise ChecksumMismatch(f"{path}: not a channel dump")
        h, w, c = struct.unpack("<III", head[4:])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != h * w * c:
        raise ChecksumMismatch(f"{path}: truncated channel dump")
    out = data.reshape(h, w, c).astype(np.float64)
    return out[:, :, 0] if c == 1 else out


# -- LiDAR records ---------------------------------------------------------------------


def write_lidar(path, points_xyzt):
    arr = np.asarray(points_xyzt, dtype="<f4")
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"expected (N, 4) x,y,z,t records, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(LIDAR_MAGIC)
        fh.write(struct.pack("<I", arr.shape[0]))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_lidar(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8 or head[:4] != LIDAR_MAGIC:
            raise ChecksumMismatch(f"{path}: not a LiDAR file")
        (count,) = struct.unpack("<I", head[4:])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != count * 4:
        raise ChecksumMismatch(f"{path}: truncated LiDAR file")
    return data.reshape(count, 4).astype(np.float64)


# -- point-set PLY ----------------------------------------------------------------------

_PLY_PROPS = (
    ("x", "mu", 0), ("y", "mu", 1), ("z", "mu", 2),
    ("rot_w", "rot", 0), ("rot_x", "rot", 1), ("rot_y", "rot", 2), ("rot_z", "rot", 3),
    ("log_scale_x", "log_scale", 0), ("log_scale_y", "log_scale", 1), ("log_scale_z", "log_scale", 2),
    ("opacity_logit", "opacity_logit", None),
    ("red", "color", 0), ("green", "color", 1), ("blue", "color", 2),
    ("tau", "tau", None),
    ("log_beta", "log_beta", None),
    ("vel_x", "vel", 0), ("vel_y", "vel", 1), ("vel_z", "vel", 2),
)


def write_point_ply(path, points):
    """ASCII PLY with one double property per raw point parameter."""
    n = len(points)
    cols = []
    for _, attr, idx in _PLY_PROPS:
        arr = getattr(points, attr)
        cols.append(arr if idx is None else arr[:, idx])
    table = np.stack(cols, axis=1) if n else np.zeros((0, len(_PLY_PROPS)))
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        for name, _, _ in _PLY_PROPS:
            fh.write(f"property double {name}\n")
        fh.write("end_header\n")
        for row in table:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_point_ply(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n = None
    names = []
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "property":
            names.append(parts[2])
        elif line == "end_header":
            body_at = i + 1
            break
    if n is None or body_at is None:
        raise ValueError(f"{path}: malformed PLY header")
    expected = [p[0] for p in _PLY_PROPS]
    if names != expected:
        raise ValueError(f"{path}: unexpected property list {names}")
    table = np.array([[float(v) for v in lines[body_at + i].split()] for i in range(n)],
                     dtype=np.float64).reshape(n, len(expected))
    pc = PointCloud.zeros(n)
    for col, (_, attr, idx) in enumerate(_PLY_PROPS):
        target = getattr(pc, attr)
        if idx is None:
            target[:] = table[:, col]
        else:
            target[:, idx] = table[:, col]
    return pc
