"""Dataset ingestion: manifest parsing, time normalization, LiDAR projection,
point-set initialization, and static/dynamic export.

A scene lives in one directory with a line-based ``manifest.txt``.  Each
``frame`` line carries: camera id, image path, timestamp, the 12 row-major
world-to-camera floats of [R|t], fx fy cx cy, and width height.  Optional
scene-level lines name the LiDAR file and a sky-mask directory.

On load, timestamps are affinely mapped so consecutive frames of a camera
are ``frame_dt`` apart, and the world is recentered on the camera centroid;
both maps are recorded for round-tripping.
"""

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ioutils
from .cameras import CameraExtrinsics, CameraFrame, CameraIntrinsics
from .errors import ManifestMissing, TimestampDisorder, VersionMismatch
from .points import PointCloud, SceneConfig, classify_static, inverse_sigmoid

MANIFEST_NAME = "manifest.txt"
MANIFEST_VERSION = 1


@dataclass
class SceneDataset:
    frames: list
    lidar: np.ndarray                    # (M, 4) x, y, z, t in normalized scene units
    time_offset: float = 0.0             # raw -> normalized: (t - offset) * scale
    time_scale: float = 1.0
    world_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scene_radius: float = 1.0
    frame_dt: float = 0.02
    root: Optional[str] = None
    _level_cache: dict = field(default_factory=dict, repr=False)

    def frame_at_level(self, index, factor):
        """Downsampled view of frame ``index``; cached per (index, factor)."""
        if factor <= 1:
            return self.frames[index]
        key = (index, factor)
        if key not in self._level_cache:
            self._level_cache[key] = self.frames[index].downsample(factor)
        return self._level_cache[key]

    @property
    def time_span(self):
        ts = [f.timestamp for f in self.frames]
        return min(ts), max(ts)

    def split_every_fourth(self):
        """(train indices, test indices): every fourth frame is held out."""
        idx = np.arange(len(self.frames))
        test = idx[idx % 4 == 0]
        train = idx[idx % 4 != 0]
        return train, test


def normalize_timestamps(raw_times, camera_ids, frame_dt):
    """Affine map making consecutive same-camera frames ``frame_dt`` apart."""
    raw = np.asarray(raw_times, dtype=np.float64)
    diffs = []
    for cam in sorted(set(camera_ids)):
        ts = raw[[i for i, c in enumerate(camera_ids) if c == cam]]
        if np.any(np.diff(ts) <= 0.0):
            raise TimestampDisorder(f"camera {cam}: timestamps not strictly increasing")
        diffs.extend(np.diff(ts))
    offset = float(raw.min())
    scale = frame_dt / float(np.mean(diffs)) if diffs else 1.0
    return offset, scale


def load_dataset(root, frame_dt=0.02, near_clip_lidar=1e-6):
    manifest_path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ManifestMissing(f"no {MANIFEST_NAME} under {root}")

    lidar_rel = None
    mask_dir = None
    rows = []
    with open(manifest_path) as fh:
        for raw_line in fh:
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "version":
                if int(parts[1]) != MANIFEST_VERSION:
                    raise VersionMismatch(f"manifest version {parts[1]}")
            elif parts[0] == "lidar":
                lidar_rel = parts[1]
            elif parts[0] == "sky_masks":
                mask_dir = parts[1]
            elif parts[0] == "frame":
                if len(parts) != 1 + 3 + 12 + 4 + 2:
                    raise ValueError(f"malformed frame line: {line!r}")
                rows.append(parts[1:])
            else:
                raise ValueError(f"unknown manifest entry {parts[0]!r}")

    if not rows:
        raise ManifestMissing(f"{manifest_path}: no frames listed")

    camera_ids = [r[0] for r in rows]
    raw_times = [float(r[2]) for r in rows]
    offset, scale = normalize_timestamps(raw_times, camera_ids, frame_dt)

    extrinsics = []
    intrinsics = []
    for r in rows:
        vals = [float(v) for v in r[3:15]]
        mat = np.array(vals, dtype=np.float64).reshape(3, 4)
        extrinsics.append(CameraExtrinsics(mat[:, :3], mat[:, 3]))  # raises BadPose
        fx, fy, cx, cy = (float(v) for v in r[15:19])
        w, h = int(r[19]), int(r[20])
        intrinsics.append(CameraIntrinsics(fx, fy, cx, cy, w, h))

    centers = np.array([e.camera_center for e in extrinsics])
    world_offset = centers.mean(axis=0)
    displacement = np.linalg.norm(centers - world_offset, axis=1).max()
    scene_radius = float(displacement) if displacement > 1e-6 else 1.0

    lidar = np.zeros((0, 4))
    if lidar_rel is not None:
        lpath = os.path.join(root, lidar_rel)
        if not os.path.exists(lpath):
            raise ManifestMissing(f"LiDAR file missing: {lpath}")
        lidar = ioutils.read_lidar(lpath)
        lidar[:, :3] -= world_offset
        lidar[:, 3] = (lidar[:, 3] - offset) * scale

    frames = []
    for i, r in enumerate(rows):
        img_path = os.path.join(root, r[1])
        if not os.path.exists(img_path):
            raise ManifestMissing(f"image missing: {img_path}")
        image = ioutils.read_png(img_path)
        ext = extrinsics[i]
        # Recentred world: translation absorbs the offset.
        ext = CameraExtrinsics(ext.rotation, ext.translation + ext.rotation @ world_offset)
        t_norm = (raw_times[i] - offset) * scale

        sky = None
        if mask_dir is not None:
            stem = os.path.splitext(os.path.basename(r[1]))[0]
            mpath = os.path.join(root, mask_dir, stem + ".png")
            if os.path.exists(mpath):
                sky = ioutils.read_mask_png(mpath)

        frame = CameraFrame(intrinsics[i], ext, t_norm, image=image, sky_mask=sky,
                            camera_id=r[0], frame_index=i)
        frames.append(frame)

    ds = SceneDataset(frames=frames, lidar=lidar, time_offset=offset,
                      time_scale=scale, world_offset=world_offset,
                      scene_radius=scene_radius, frame_dt=frame_dt, root=root)
    for frame in ds.frames:
        frame.sparse_inv_depth = project_lidar_depth(ds.lidar, frame, frame_dt)
    return ds


def save_dataset(dataset, root):
    """Write the dataset back out (normalized coordinates and times)."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    have_masks = any(f.sky_mask is not None for f in dataset.frames)
    if have_masks:
        os.makedirs(os.path.join(root, "masks"), exist_ok=True)

    lines = [f"# scene manifest", f"version {MANIFEST_VERSION}"]
    if dataset.lidar.size:
        ioutils.write_lidar(os.path.join(root, "lidar.pvgl"), dataset.lidar)
        lines.append("lidar lidar.pvgl")
    if have_masks:
        lines.append("sky_masks masks")

    for i, f in enumerate(dataset.frames):
        rel = f"images/frame_{i:04d}.png"
        ioutils.write_png(os.path.join(root, rel), f.image)
        if f.sky_mask is not None:
            ioutils.write_mask_png(os.path.join(root, "masks", f"frame_{i:04d}.png"), f.sky_mask)
        ext = f.extrinsics
        vals = np.concatenate([np.column_stack([ext.rotation, ext.translation]).reshape(-1)])
        intr = f.intrinsics
        lines.append("frame " + " ".join(
            [f.camera_id, rel, f"{f.timestamp:.9g}"]
            + [f"{v:.17g}" for v in vals]
            + [f"{intr.fx:.17g}", f"{intr.fy:.17g}", f"{intr.cx:.17g}", f"{intr.cy:.17g}",
               str(intr.width), str(intr.height)]))
    with open(os.path.join(root, MANIFEST_NAME), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def project_lidar_depth(lidar, frame, frame_dt):
    """Sparse inverse-depth map from points within half a frame of the timestamp.

    Per pixel the nearest return wins (largest inverse depth); empty pixels
    stay zero.
    """
    intr = frame.intrinsics
    out = np.zeros((intr.height, intr.width))
    if lidar.size == 0:
        return out
    sel = np.abs(lidar[:, 3] - frame.timestamp) <= frame_dt / 2.0
    pts = lidar[sel, :3]
    if pts.size == 0:
        return out
    cam = pts @ frame.extrinsics.rotation.T + frame.extrinsics.translation
    z = cam[:, 2]
    front = z > 0.0
    cam, z = cam[front], z[front]
    u = intr.fx * cam[:, 0] / z + intr.cx
    v = intr.fy * cam[:, 1] / z + intr.cy
    iu = np.floor(u).astype(int)
    iv = np.floor(v).astype(int)
    ok = (iu >= 0) & (iu < intr.width) & (iv >= 0) & (iv < intr.height)
    np.maximum.at(out, (iv[ok], iu[ok]), 1.0 / z[ok])
    return out


def _uniform_directions(n, rng):
    d = rng.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def initialize_points(dataset, cfg, scene_cfg, rng):
    """Seed the point cloud: LiDAR returns plus random near/far fillers.

    Near points are uniform in distance over (0, r); far points uniform in
    inverse distance over (1/(1000 r), 1/r).  LiDAR-seeded peak times come
    from the return timestamps, random fillers draw theirs uniformly over
    the sequence's time span.
    """
    r = scene_cfg.scene_radius
    t_lo, t_hi = dataset.time_span
    pieces = []

    m = dataset.lidar.shape[0]
    if m and cfg.init_lidar > 0:
        take = min(cfg.init_lidar, m)
        pick = rng.permutation(m)[:take]
        pts = dataset.lidar[pick]
        pieces.append((pts[:, :3], pts[:, 3]))

    if cfg.init_near > 0:
        dirs = _uniform_directions(cfg.init_near, rng)
        radii = rng.uniform(0.0, r, cfg.init_near)
        taus = rng.uniform(t_lo, t_hi, cfg.init_near)
        pieces.append((dirs * radii[:, None], taus))

    if cfg.init_far > 0:
        dirs = _uniform_directions(cfg.init_far, rng)
        inv = rng.uniform(1.0 / (1000.0 * r), 1.0 / r, cfg.init_far)
        taus = rng.uniform(t_lo, t_hi, cfg.init_far)
        pieces.append((dirs / inv[:, None], taus))

    xyz = np.concatenate([p[0] for p in pieces])
    tau = np.concatenate([p[1] for p in pieces])
    n = xyz.shape[0]

    pc = PointCloud.zeros(n)
    pc.mu[:] = xyz
    pc.tau[:] = tau
    pc.log_beta[:] = np.log(cfg.beta_init)
    pc.opacity_logit[:] = inverse_sigmoid(cfg.opacity_init)
    pc.color[:] = 0.5
    pc.log_scale[:] = np.log(np.clip(_nn_spacing(xyz), 1e-4, r))[:, None]
    return pc


def _nn_spacing(xyz):
    """Mean distance to the 3 nearest neighbours, per point."""
    from scipy.spatial import cKDTree

    if xyz.shape[0] < 4:
        return np.full(xyz.shape[0], 0.1)
    tree = cKDTree(xyz)
    d, _ = tree.query(xyz, k=4)
    return np.sqrt((d[:, 1:] ** 2).mean(axis=1))


def export_split(points, scene_cfg, threshold, static_path, dynamic_path):
    """Partition by staticness ratio and write both halves as PLY files."""
    static_idx, dynamic_idx = classify_static(points, scene_cfg, threshold)
    ioutils.write_point_ply(static_path, points.select(static_idx))
    ioutils.write_point_ply(dynamic_path, points.select(dynamic_idx))
    return static_idx, dynamic_idx
