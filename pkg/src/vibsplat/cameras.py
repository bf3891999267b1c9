"""Pinhole camera model, pose handling, and splat covariance projection.

Conventions (normalized by the dataset loader): world-to-camera extrinsics,
camera looks down +z, image origin top-left, pixel (row i, col j) sampled at
continuous coordinates (j + 0.5, i + 0.5).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BehindCamera
from .validation import check_array, check_positive, check_rotation

DEFAULT_NEAR_CLIP = 0.2   # meters
LOW_PASS_PX2 = 0.3        # screen-space covariance floor, px^2


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        check_positive(self.fx, "fx")
        check_positive(self.fy, "fy")
        if not (0.0 < self.cx < self.width) or not (0.0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, width, height):
        """Intrinsics for the same camera resampled to width x height."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy,
                                self.cx * sx, self.cy * sy, width, height)


@dataclass(frozen=True)
class CameraExtrinsics:
    rotation: np.ndarray     # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        object.__setattr__(self, "translation", check_array(self.translation, "translation", shape=(3,)))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def inverse(self):
        R = self.rotation.T
        return CameraExtrinsics(R, -R @ self.translation)

    @property
    def camera_center(self):
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass
class CameraFrame:
    """One posed image plus its optional supervision channels."""

    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics
    timestamp: float
    image: Optional[np.ndarray] = None             # (H, W, 3) linear RGB in [0, 1]
    sparse_inv_depth: Optional[np.ndarray] = None  # (H, W), 0 where unsampled
    sky_mask: Optional[np.ndarray] = None          # (H, W) bool
    camera_id: str = "cam0"
    frame_index: int = 0

    def __post_init__(self):
        shape = (self.intrinsics.height, self.intrinsics.width)
        if self.image is not None:
            self.image = check_array(self.image, "image", shape=shape + (3,))
            if self.image.min() < 0.0 or self.image.max() > 1.0 + 1e-9:
                raise ValueError("image: values must lie in [0, 1]")
        if self.sparse_inv_depth is not None:
            self.sparse_inv_depth = check_array(self.sparse_inv_depth, "sparse_inv_depth", shape=shape)
            if self.sparse_inv_depth.min() < 0.0:
                raise ValueError("sparse_inv_depth: must be nonnegative")
        if self.sky_mask is not None:
            self.sky_mask = np.asarray(self.sky_mask, dtype=bool)
            if self.sky_mask.shape != shape:
                raise ValueError(f"sky_mask: expected shape {shape}, got {self.sky_mask.shape}")

    def downsample(self, factor):
        """Area-averaged copy at 1/factor resolution (supervision included)."""
        if factor <= 1:
            return self
        from PIL import Image

        w = max(1, -(-self.intrinsics.width // factor))   # ceil division
        h = max(1, -(-self.intrinsics.height // factor))
        intr = self.intrinsics.scaled(w, h)

        image = None
        if self.image is not None:
            # Per-channel box filter keeps everything in float without 8-bit round trips.
            chans = []
            for c in range(3):
                ch = Image.fromarray(self.image[:, :, c].astype(np.float32), mode="F")
                chans.append(np.asarray(ch.resize((w, h), Image.BOX), dtype=np.float64))
            image = np.clip(np.stack(chans, axis=-1), 0.0, 1.0)

        sky = None
        if self.sky_mask is not None:
            ch = Image.fromarray(self.sky_mask.astype(np.float32), mode="F")
            sky = np.asarray(ch.resize((w, h), Image.BOX)) > 0.5

        inv_depth = None
        if self.sparse_inv_depth is not None:
            inv_depth = _block_max(self.sparse_inv_depth, factor, h, w)

        return CameraFrame(intr, self.extrinsics, self.timestamp, image, inv_depth, sky,
                           camera_id=self.camera_id, frame_index=self.frame_index)


def _block_max(arr, k, h, w):
    """Max-pool with zero padding; keeps the nearest (largest inverse) depth."""
    H, W = arr.shape
    padded = np.zeros((h * k, w * k), dtype=arr.dtype)
    padded[:H, :W] = arr
    return padded.reshape(h, k, w, k).max(axis=(1, 3))


# -- projection ------------------------------------------------------------------


def world_to_camera(x_world, ext):
    """Apply the world-to-camera rigid transform; works on (3,) or (N, 3)."""
    x = np.asarray(x_world)
    return x @ ext.rotation.T + ext.translation


def project_point(x_cam, intr, near_clip=DEFAULT_NEAR_CLIP):
    """Project one camera-space point; raises BehindCamera at/behind the clip."""
    x, y, z = np.asarray(x_cam, dtype=np.float64)
    if z <= near_clip:
        raise BehindCamera(f"z={z} <= near_clip={near_clip}")
    return np.array([intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy]), float(z)


def project_points(x_cam, intr, near_clip=DEFAULT_NEAR_CLIP):
    """Vectorized projection: (pixels (N,2), depths (N,), in-front mask (N,))."""
    x_cam = np.asarray(x_cam)
    z = x_cam[:, 2]
    valid = z > near_clip
    zs = np.where(valid, z, 1.0)  # dummy, masked out downstream
    px = np.stack([intr.fx * x_cam[:, 0] / zs + intr.cx,
                   intr.fy * x_cam[:, 1] / zs + intr.cy], axis=-1)
    return px, z, valid


def quat_to_rotation(q):
    """Rotation matrices from quaternions (w, x, y, z); input is normalized first.

    Accepts (4,) or (N, 4); returns (3, 3) or (N, 3, 3).
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=q.dtype)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def build_covariance(scale, rot):
    """World-space covariance R diag(s^2) R^T from linear scales and quaternions."""
    s = np.atleast_2d(np.asarray(scale, dtype=np.float64))
    R = quat_to_rotation(rot)
    single = R.ndim == 2
    R = R[None] if single else R
    M = R * s[:, None, :]               # columns scaled: R @ diag(s)
    cov = M @ np.swapaxes(M, -1, -2)
    return cov[0] if single else cov


def projection_jacobian(x_cam, intr):
    """Jacobian of the pinhole map at camera-space points; (N, 2, 3)."""
    x_cam = np.atleast_2d(np.asarray(x_cam))
    x, y, z = x_cam[:, 0], x_cam[:, 1], x_cam[:, 2]
    J = np.zeros((x_cam.shape[0], 2, 3), dtype=x_cam.dtype)
    J[:, 0, 0] = intr.fx / z
    J[:, 0, 2] = -intr.fx * x / (z * z)
    J[:, 1, 1] = intr.fy / z
    J[:, 1, 2] = -intr.fy * y / (z * z)
    return J


def project_covariance(cov, x_cam, intr, ext, near_clip=DEFAULT_NEAR_CLIP,
                       low_pass=LOW_PASS_PX2):
    """Screen-space 2x2 covariance of one world-space Gaussian.

    Applies the local-affine approximation of the perspective map around the
    point, then adds a small diagonal floor so degenerate splats still cover
    a fraction of a pixel.
    """
    x_cam = np.asarray(x_cam, dtype=np.float64)
    if x_cam[2] <= near_clip:
        raise BehindCamera(f"z={x_cam[2]} <= near_clip={near_clip}")
    W = ext.rotation
    cov_cam = W @ np.asarray(cov, dtype=np.float64) @ W.T
    J = projection_jacobian(x_cam[None], intr)[0]
    cov2d = J @ cov_cam @ J.T
    return cov2d + low_pass * np.eye(2)


def project_covariances(cov_world, x_cam, intr, ext, low_pass=LOW_PASS_PX2):
    """Vectorized screen-space covariances (no clipping checks); (N, 2, 2)."""
    W = ext.rotation
    cov_cam = np.einsum("ij,njk,lk->nil", W, cov_world, W)
    J = projection_jacobian(x_cam, intr)
    cov2d = np.einsum("nij,njk,nlk->nil", J, cov_cam, J)
    cov2d[:, 0, 0] += low_pass
    cov2d[:, 1, 1] += low_pass
    return cov2d


def pixel_grid(intr, jitter=None):
    """Continuous sample coordinates of every pixel center, shape (H, W, 2).

    ``jitter`` may be an (H, W, 2) array of offsets in (-0.5, 0.5) used to
    perturb ray directions within the pixel footprint.
    """
    u = np.arange(intr.width) + 0.5
    v = np.arange(intr.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    grid = np.stack([uu, vv], axis=-1)
    if jitter is not None:
        grid = grid + jitter
    return grid


def pixel_rays(intr, ext, jitter=None):
    """Unit world-space ray directions through every pixel sample, (H, W, 3)."""
    grid = pixel_grid(intr, jitter)
    d = np.empty(grid.shape[:2] + (3,), dtype=np.float64)
    d[..., 0] = (grid[..., 0] - intr.cx) / intr.fx
    d[..., 1] = (grid[..., 1] - intr.cy) / intr.fy
    d[..., 2] = 1.0
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ ext.rotation  # row vectors times R == R^T d
