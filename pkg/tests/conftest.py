"""Shared scene builders for the test suite."""

import numpy as np
import pytest

from vibsplat.cameras import CameraExtrinsics, CameraFrame, CameraIntrinsics
from vibsplat.cubemap import CubeMap
from vibsplat.points import PointCloud, SceneConfig, SnapshotSet
from vibsplat.rasterizer import RenderOptions, render


def make_frame(width=12, height=12, focal=None, t=0.0, ext=None, **kw):
    focal = focal if focal is not None else 1.2 * max(width, height)
    intr = CameraIntrinsics(focal, focal, width / 2.0, height / 2.0, width, height)
    ext = ext if ext is not None else CameraExtrinsics.identity()
    return CameraFrame(intr, ext, t, **kw)


def random_snapshots(rng, n, width, height, focal, z_range=(2.0, 6.0),
                     sigma_px=(0.7, 2.2), alpha=(0.1, 0.9)):
    """Snapshots whose means project inside the image with a margin."""
    z = rng.uniform(*z_range, n)
    u = rng.uniform(2.0, width - 2.0, n)
    v = rng.uniform(2.0, height - 2.0, n)
    center = np.stack([(u - width / 2.0) * z / focal,
                       (v - height / 2.0) * z / focal, z], axis=-1)
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    scale = rng.uniform(*sigma_px, (n, 3)) * z[:, None] / focal
    return SnapshotSet(
        center=center,
        rot=rot,
        scale=scale,
        alpha0=rng.uniform(*alpha, n),
        color=rng.uniform(0.0, 1.0, (n, 3)),
        avg_vel=rng.normal(scale=0.3, size=(n, 3)),
    )


def gradient_scene(seed, n_points=10, size=12, with_dt=False, mode="vibration",
                   max_tries=40):
    """A well-conditioned random scene for finite-difference gradient checks.

    The builder rejects seeds whose loss surface has a clamp or gate boundary
    within reach of the probe step: per-pixel alpha stays under the 0.99
    clamp (peak opacities capped at 0.75), transmittance stays above the
    early-out threshold, depth supervision only lands on pixels with a wide
    opacity margin around the 0.5 gate, the photometric target differs from
    the render by a fixed-sign 0.06 everywhere, and velocities are positive
    so the L1 velocity map has no sign crossings under perturbation.
    """
    cfg = SceneConfig()
    W = H = size
    focal = 1.2 * size
    t = 0.3
    dt = 0.015 if with_dt else 0.0

    for attempt in range(max_tries):
        rng = np.random.default_rng(seed * 1000 + attempt)
        n = n_points
        pc = PointCloud.zeros(n)
        z = rng.uniform(2.5, 4.0, n)
        u = rng.uniform(2.5, W - 2.5, n)
        v = rng.uniform(2.5, H - 2.5, n)
        pc.mu[:] = np.stack([(u - W / 2) * z / focal, (v - H / 2) * z / focal, z], axis=-1)
        rot = rng.normal(size=(n, 4))
        pc.rot[:] = rot / np.linalg.norm(rot, axis=1, keepdims=True)
        pc.log_scale[:] = np.log(rng.uniform(0.8, 1.6, (n, 3)) * z[:, None] / focal)
        peak = rng.uniform(0.25, 0.75, n)
        pc.opacity_logit[:] = np.log(peak / (1.0 - peak))
        pc.color[:] = rng.uniform(0.1, 0.9, (n, 3))
        beta = rng.uniform(0.25, 0.5, n)
        pc.log_beta[:] = np.log(beta)
        pc.tau[:] = t - rng.uniform(-0.3, 0.3, n) * beta
        pc.vel[:] = rng.uniform(0.05, 0.4, (n, 3))

        cube = CubeMap(rng.uniform(0.05, 0.95, (6, 8, 8, 3)))
        opts = RenderOptions(dtype=np.float64)
        probe = make_frame(W, H, focal, t)
        out = render(pc, cube, probe, cfg, opts=opts, dt=dt, mode=mode)

        if out.opacity.max() > 0.995:   # margin to the T < 1e-4 early-out
            continue

        gt = np.where(out.color > 0.5, out.color - 0.06, out.color + 0.06)
        covered = out.opacity > 0.65
        sid = np.zeros((H, W))
        pick = covered & (rng.random((H, W)) < 0.3)
        sid[pick] = 1.0 / np.maximum(out.depth[pick], 1e-6) + 0.1
        sky_mask = out.opacity < 0.3
        frame = make_frame(W, H, focal, t, image=np.clip(gt, 0, 1),
                           sparse_inv_depth=sid, sky_mask=sky_mask)
        return pc, cube, frame, cfg, opts, dt
    raise RuntimeError(f"no well-conditioned scene found for seed {seed}")


@pytest.fixture
def scene_cfg():
    return SceneConfig()
