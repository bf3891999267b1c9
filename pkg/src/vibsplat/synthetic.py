"""Synthetic scene generation with exact ground truth.

Scenes are built from explicit Gaussian arrangements: static planes/clusters
plus constant-velocity movers, viewed by a drifting identity-orientation
camera.  Frames are rendered with this project's own rasterizer in 64-bit
mode, so the supervision (images, exact depth, sky masks, per-frame dynamic
masks, LiDAR returns with timestamps) is self-consistent by construction.

World axes follow the camera: x right, y down, z forward.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import ioutils
from .cameras import CameraExtrinsics, CameraFrame, CameraIntrinsics
from .datasets import SceneDataset, project_lidar_depth, save_dataset
from .errors import SpecInvalid
from .points import SnapshotSet
from .rasterizer import RenderOptions, render_snapshots
from .cubemap import CubeMap


@dataclass
class MoverSpec:
    center: tuple            # position at t = 0 (start of sequence)
    velocity: tuple          # world units per scene-time unit
    radius: float = 0.4
    color: tuple = (0.9, 0.15, 0.1)
    n_points: int = 12
    sigma: float = 0.12


@dataclass
class PlaneSpec:
    origin: tuple            # grid center
    u_axis: tuple            # full extent along the first grid direction
    v_axis: tuple
    nu: int = 24
    nv: int = 12
    sigma: float = 0.22
    color_a: tuple = (0.45, 0.42, 0.38)
    color_b: tuple = (0.25, 0.28, 0.32)
    color_jitter: float = 0.05


@dataclass
class SyntheticSpec:
    name: str = "scene"
    width: int = 160
    height: int = 120
    focal: float = 140.0
    frame_count: int = 40
    frame_dt: float = 0.02
    camera_start: tuple = (0.0, 0.0, 0.0)
    camera_drift: tuple = (0.6, 0.0, 0.0)   # per scene-time unit
    planes: list = field(default_factory=list)
    movers: list = field(default_factory=list)
    sky_zenith: tuple = (0.25, 0.45, 0.75)
    sky_horizon: tuple = (0.65, 0.75, 0.85)
    sky_resolution: int = 32
    surface_opacity: float = 0.92
    lidar_static_per_frame: int = 120
    lidar_mover_per_frame: int = 12
    noise_level: float = 0.0

    def validate(self):
        if self.frame_count < 2:
            raise SpecInvalid("frame_count must be at least 2")
        if self.width < 8 or self.height < 8:
            raise SpecInvalid("resolution too small")
        if self.noise_level < 0.0:
            raise SpecInvalid("noise_level must be nonnegative")
        for m in self.movers:
            if not np.all(np.isfinite(m.velocity)):
                raise SpecInvalid("mover velocity must be finite")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["planes"] = [PlaneSpec(**p) if not isinstance(p, PlaneSpec) else p
                       for p in d.get("planes", [])]
        d["movers"] = [MoverSpec(**m) if not isinstance(m, MoverSpec) else m
                       for m in d.get("movers", [])]
        for key in ("camera_start", "camera_drift", "sky_zenith", "sky_horizon"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SyntheticOracle:
    """Exact scene knowledge kept aside for acceptance checks."""

    spec: SyntheticSpec
    static_snaps: SnapshotSet
    mover_points: list        # per mover: (n, 3) offsets around the center
    dynamic_masks: list       # per frame (H, W) bool, mover footprint
    depth_maps: list          # per frame (H, W) exact rendered depth
    sky_cube: CubeMap

    def mover_center(self, mover_index, t):
        """Center at time t; t may be a scalar or an array of times."""
        m = self.spec.movers[mover_index]
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            return np.asarray(m.center) + np.asarray(m.velocity) * float(t)
        return np.asarray(m.center) + t[:, None] * np.asarray(m.velocity)

    def mover_snapshots(self, t):
        """Snapshot set of all movers at time t."""
        parts = []
        for mi, m in enumerate(self.spec.movers):
            offs = self.mover_points[mi]
            center = self.mover_center(mi, t)
            parts.append(_blob_snapshots(center + offs, m.sigma, m.color,
                                         self.spec.surface_opacity))
        return _concat_snaps(parts)

    def inside_any_mover(self, positions, t, margin=1.5):
        """Bool mask: positions within margin * radius of a mover center at t.

        ``t`` may be one time or one time per position.
        """
        pos = np.atleast_2d(positions)
        hit = np.zeros(pos.shape[0], dtype=bool)
        for mi, m in enumerate(self.spec.movers):
            c = self.mover_center(mi, t)
            d = np.linalg.norm(pos - np.atleast_2d(c), axis=1)
            hit |= d <= margin * m.radius
        return hit


def _blob_snapshots(centers, sigma, color, opacity, color_jitter=None, rng=None):
    n = centers.shape[0]
    colors = np.tile(np.asarray(color, dtype=np.float64), (n, 1))
    if color_jitter is not None and rng is not None:
        colors = np.clip(colors + rng.uniform(-color_jitter, color_jitter, (n, 3)), 0.0, 1.0)
    return SnapshotSet(
        center=np.asarray(centers, dtype=np.float64),
        rot=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        scale=np.full((n, 3), sigma, dtype=np.float64),
        alpha0=np.full(n, opacity, dtype=np.float64),
        color=colors,
        avg_vel=np.zeros((n, 3)),
    )


def _concat_snaps(parts):
    parts = [p for p in parts if len(p)]
    if not parts:
        return _blob_snapshots(np.zeros((0, 3)), 0.1, (0, 0, 0), 0.0)
    return SnapshotSet(
        center=np.concatenate([p.center for p in parts]),
        rot=np.concatenate([p.rot for p in parts]),
        scale=np.concatenate([p.scale for p in parts]),
        alpha0=np.concatenate([p.alpha0 for p in parts]),
        color=np.concatenate([p.color for p in parts]),
        avg_vel=np.concatenate([p.avg_vel for p in parts]),
    )


def _plane_snapshots(plane, opacity, rng):
    iu = (np.arange(plane.nu) + 0.5) / plane.nu - 0.5
    iv = (np.arange(plane.nv) + 0.5) / plane.nv - 0.5
    uu, vv = np.meshgrid(iu, iv)
    origin = np.asarray(plane.origin, dtype=np.float64)
    u_ax = np.asarray(plane.u_axis, dtype=np.float64)
    v_ax = np.asarray(plane.v_axis, dtype=np.float64)
    centers = origin + uu.reshape(-1, 1) * u_ax + vv.reshape(-1, 1) * v_ax
    checker = ((uu * plane.nu).astype(int) + (vv * plane.nv).astype(int)) % 2 == 0
    base = np.where(checker.reshape(-1, 1), plane.color_a, plane.color_b)
    colors = np.clip(base + rng.uniform(-plane.color_jitter, plane.color_jitter,
                                        base.shape), 0.0, 1.0)
    snaps = _blob_snapshots(centers, plane.sigma, (0, 0, 0), opacity)
    snaps.color = colors
    return snaps


def face_texel_directions(face, resolution):
    """Unit direction of every texel center on one cube face, (F, F, 3).

    Inverts the dominant-axis mapping used by :class:`CubeMap`, so a cube
    built by evaluating a function of direction here reproduces it under
    sampling.
    """
    F = resolution
    g = (np.arange(F) + 0.5) / F * 2.0 - 1.0
    ss, tt = np.meshgrid(g, g)   # ss varies with x-index, tt with y-index
    one = np.ones_like(ss)
    if face == 0:
        d = np.stack([one, -tt, -ss], axis=-1)
    elif face == 1:
        d = np.stack([-one, -tt, ss], axis=-1)
    elif face == 2:
        d = np.stack([ss, one, tt], axis=-1)
    elif face == 3:
        d = np.stack([ss, -one, -tt], axis=-1)
    elif face == 4:
        d = np.stack([ss, -tt, one], axis=-1)
    else:
        d = np.stack([-ss, -tt, -one], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def cube_from_function(fn, resolution):
    """Cube map whose texels evaluate ``fn(dirs) -> (..., 3)``."""
    cube = CubeMap.constant(resolution, 0.0)
    for face in range(6):
        cube.texels[face] = fn(face_texel_directions(face, resolution))
    return cube


def make_sky_cube(spec):
    """Smooth gradient sky: horizon color blending to zenith upward (-y)."""
    zen = np.asarray(spec.sky_zenith)
    hor = np.asarray(spec.sky_horizon)

    def gradient(dirs):
        up = np.clip(-dirs[..., 1], 0.0, 1.0)  # y points down
        return hor + up[..., None] * (zen - hor)

    return cube_from_function(gradient, spec.sky_resolution)


def generate_synthetic(spec, rng):
    """Build the dataset and its oracle; raises SpecInvalid on a bad spec."""
    spec.validate()
    intr = CameraIntrinsics(spec.focal, spec.focal, spec.width / 2.0,
                            spec.height / 2.0, spec.width, spec.height)
    sky_cube = make_sky_cube(spec)
    opts = RenderOptions(dtype=np.float64)

    static_parts = [_plane_snapshots(p, spec.surface_opacity, rng) for p in spec.planes]
    static_snaps = _concat_snaps(static_parts)
    mover_points = [rng.normal(scale=m.radius / 2.0, size=(m.n_points, 3))
                    for m in spec.movers]

    times = np.arange(spec.frame_count) * spec.frame_dt
    cam_start = np.asarray(spec.camera_start, dtype=np.float64)
    drift = np.asarray(spec.camera_drift, dtype=np.float64)

    oracle = SyntheticOracle(spec=spec, static_snaps=static_snaps,
                             mover_points=mover_points, dynamic_masks=[],
                             depth_maps=[], sky_cube=sky_cube)

    frames = []
    lidar_records = []
    in_view = np.zeros(len(spec.movers), dtype=int)

    for fi, t in enumerate(times):
        cam_pos = cam_start + drift * t
        ext = CameraExtrinsics(np.eye(3), -cam_pos)
        frame = CameraFrame(intr, ext, float(t), camera_id="cam0", frame_index=fi)

        mover_snaps = oracle.mover_snapshots(t)
        full = _concat_snaps([static_snaps, mover_snaps])
        out = render_snapshots(full, sky_cube, frame, opts)

        image = np.clip(out.color, 0.0, 1.0)
        if spec.noise_level > 0.0:
            image = np.clip(image + rng.normal(scale=spec.noise_level, size=image.shape),
                            0.0, 1.0)

        sky_mask = out.opacity < 0.3
        if len(mover_snaps):
            mover_out = render_snapshots(mover_snaps, sky_cube, frame, opts)
            dyn_mask = mover_out.opacity > 0.05
        else:
            dyn_mask = np.zeros((spec.height, spec.width), dtype=bool)

        oracle.dynamic_masks.append(dyn_mask)
        oracle.depth_maps.append(out.depth)

        frame.image = image
        frame.sky_mask = sky_mask
        frames.append(frame)

        # Frustum bookkeeping for validation.
        for mi in range(len(spec.movers)):
            c = oracle.mover_center(mi, t) - cam_pos
            if c[2] > opts.near_clip:
                u = intr.fx * c[0] / c[2] + intr.cx
                v = intr.fy * c[1] / c[2] + intr.cy
                if 0 <= u < spec.width and 0 <= v < spec.height:
                    in_view[mi] += 1

        # LiDAR: static surface samples plus mover returns, stamped with t.
        if len(static_snaps) and spec.lidar_static_per_frame > 0:
            take = min(spec.lidar_static_per_frame, len(static_snaps))
            pick = rng.permutation(len(static_snaps))[:take]
            pts = static_snaps.center[pick]
            lidar_records.append(np.column_stack([pts, np.full(take, t)]))
        if len(mover_snaps) and spec.lidar_mover_per_frame > 0:
            take = min(spec.lidar_mover_per_frame, len(mover_snaps))
            pick = rng.permutation(len(mover_snaps))[:take]
            pts = mover_snaps.center[pick]
            lidar_records.append(np.column_stack([pts, np.full(take, t)]))

    if len(spec.movers) and np.any(in_view < spec.frame_count * 0.5):
        raise SpecInvalid(
            f"movers visible in only {in_view.tolist()} of {spec.frame_count} frames; "
            "camera path must keep each mover in frustum for at least half the sequence")

    lidar = np.concatenate(lidar_records) if lidar_records else np.zeros((0, 4))
    dataset = SceneDataset(frames=frames, lidar=lidar, time_offset=0.0,
                           time_scale=1.0, world_offset=np.zeros(3),
                           scene_radius=max(float(np.linalg.norm(drift) * times[-1]) / 2.0, 1.0),
                           frame_dt=spec.frame_dt)
    for frame in dataset.frames:
        frame.sparse_inv_depth = project_lidar_depth(lidar, frame, spec.frame_dt)
    return dataset, oracle


def write_synthetic(spec, out_dir, rng):
    """Generate and persist a synthetic scene; returns (dataset, oracle)."""
    dataset, oracle = generate_synthetic(spec, rng)
    os.makedirs(out_dir, exist_ok=True)
    save_dataset(dataset, out_dir)

    gt_dir = os.path.join(out_dir, "gt")
    os.makedirs(gt_dir, exist_ok=True)
    for fi in range(len(dataset.frames)):
        ioutils.write_mask_png(os.path.join(gt_dir, f"dynamic_{fi:04d}.png"),
                               oracle.dynamic_masks[fi])
        ioutils.write_channels(os.path.join(gt_dir, f"depth_{fi:04d}.pvgc"),
                               oracle.depth_maps[fi])
    info = {
        "spec": spec.to_dict(),
        "mover_points": [p.tolist() for p in oracle.mover_points],
    }
    with open(os.path.join(gt_dir, "info.json"), "w") as fh:
        json.dump(info, fh, indent=1, sort_keys=True)
    return dataset, oracle


def load_oracle(root):
    """Rebuild the oracle of a scene written by :func:`write_synthetic`."""
    gt_dir = os.path.join(root, "gt")
    with open(os.path.join(gt_dir, "info.json")) as fh:
        info = json.load(fh)
    spec = SyntheticSpec.from_dict(info["spec"])
    masks = []
    depths = []
    for fi in range(spec.frame_count):
        masks.append(ioutils.read_mask_png(os.path.join(gt_dir, f"dynamic_{fi:04d}.png")))
        depths.append(ioutils.read_channels(os.path.join(gt_dir, f"depth_{fi:04d}.pvgc")))
    rng = np.random.default_rng(0)
    static_parts = [_plane_snapshots(p, spec.surface_opacity, rng) for p in spec.planes]
    return SyntheticOracle(
        spec=spec,
        static_snaps=_concat_snaps(static_parts),
        mover_points=[np.asarray(p) for p in info["mover_points"]],
        dynamic_masks=masks,
        depth_maps=depths,
        sky_cube=make_sky_cube(spec),
    )


# -- bundled scene presets ---------------------------------------------------------


def preset(name):
    """Bundled synthetic scenes used by the acceptance suite."""
    if name == "mover-1":
        # The mover crosses well above the horizon so its image footprint
        # only ever covers sky; the ground supplies static structure and
        # LiDAR-supervised geometry.
        return SyntheticSpec(
            name="mover-1",
            width=160, height=120, focal=140.0, frame_count=40,
            camera_start=(0.0, 0.0, 0.0), camera_drift=(0.6, 0.0, 0.0),
            planes=[
                PlaneSpec(origin=(0.0, 1.4, 8.0), u_axis=(16.0, 0.0, 0.0),
                          v_axis=(0.0, 0.0, 12.0), nu=30, nv=16, sigma=0.30),
            ],
            movers=[MoverSpec(center=(-4.0, -1.3, 8.0), velocity=(10.3, 0.0, 0.0),
                              radius=0.45, color=(0.95, 0.15, 0.1), n_points=14,
                              sigma=0.16)],
        )
    if name == "backdrop":
        return SyntheticSpec(
            name="backdrop",
            width=128, height=96, focal=110.0, frame_count=24,
            camera_start=(0.0, 0.0, 0.0), camera_drift=(2.0, 0.0, 0.0),
            planes=[
                PlaneSpec(origin=(0.0, 1.2, 6.0), u_axis=(10.0, 0.0, 0.0),
                          v_axis=(0.0, 0.0, 8.0), nu=22, nv=12, sigma=0.26),
                # Far textured backdrop, well beyond twice the scene radius.
                PlaneSpec(origin=(0.0, -2.0, 40.0), u_axis=(44.0, 0.0, 0.0),
                          v_axis=(0.0, 18.0, 0.0), nu=26, nv=12, sigma=1.1,
                          color_a=(0.5, 0.55, 0.35), color_b=(0.3, 0.35, 0.45)),
            ],
            movers=[],
        )
    raise SpecInvalid(f"unknown preset {name!r}")
