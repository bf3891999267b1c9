"""Deterministic tile-based forward rasterizer for Gaussian snapshots.

Projected splats are binned to 16x16 pixel tiles by the axis-aligned box of
their 3-sigma screen ellipse, depth-sorted once globally by (tile, depth,
source index), and alpha-composited front to back per pixel.  Color, depth,
accumulated opacity, and an average-velocity channel share one weighting;
the sky cube map fills whatever transmittance is left.

Everything is pure numpy and single-process: output is bit-identical across
runs because tile traversal order and per-tile compositing order are fixed
by the global sort.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels, cameras
from .cameras import DEFAULT_NEAR_CLIP, LOW_PASS_PX2
from .points import estimate_state, static_snapshot


@dataclass(frozen=True)
class RenderOptions:
    tile_size: int = 16
    near_clip: float = DEFAULT_NEAR_CLIP
    low_pass: float = LOW_PASS_PX2
    alpha_clamp: float = 0.99         # per-sample alpha ceiling
    min_alpha0: float = 1.0 / 255.0   # fragments fainter than this are culled
    termination: float = 1e-4         # stop compositing once T drops below
    radius_sigmas: float = 3.0        # extent of the binning ellipse
    sky_jitter: bool = False          # perturb sky rays within the pixel
    seed: int = 0
    dtype: type = np.float64


@dataclass
class RenderOutput:
    color: np.ndarray          # (H, W, 3) final color, sky composited
    foreground: np.ndarray     # (H, W, 3) splat-only color
    opacity: np.ndarray        # (H, W) accumulated alpha in [0, 1]
    depth: np.ndarray          # (H, W) opacity-normalized depth, 0 where empty
    velocity: np.ndarray       # (H, W, 3) rendered camera-space average velocity
    sky: np.ndarray            # (H, W, 3) cube-map color along each ray
    contributors: np.ndarray   # (H, W) fragments blended per pixel


@dataclass
class RenderGraph:
    """Forward intermediates recorded for the analytic backward pass."""

    snapshots: object
    keep: np.ndarray           # indices of surviving snapshots
    x_cam: np.ndarray          # (K, 3)
    px: np.ndarray             # (K, 2)
    z: np.ndarray              # (K,)
    cov3: np.ndarray           # (K, 3, 3) world-space covariance
    cov2d: np.ndarray          # (K, 2, 2) projected + low-pass floor
    inv_cov: np.ndarray        # (K, 3) packed (a, b, c) of the inverse
    alpha0: np.ndarray         # (K,)
    colors: np.ndarray         # (K, 3)
    vel_cam: np.ndarray        # (K, 3)
    tile_ids: np.ndarray       # (M,) sorted flat fragment -> tile map
    frag_ids: np.ndarray       # (M,) snapshot row (into keep arrays) per fragment
    tile_starts: np.ndarray    # boundaries of equal-tile runs in the above
    unique_tiles: np.ndarray
    sky_taps: tuple
    sky_dirs: np.ndarray
    opts: RenderOptions
    frame: object
    # temporal context, present when rendered from a point cloud
    points: object = None
    scene_cfg: object = None
    t: float = 0.0
    dt: float = 0.0
    mode: str = "vibration"
    static: bool = False


def sky_jitter_offsets(height, width, seed, frame_index):
    """Sub-pixel ray offsets from a counter-based stream keyed on (seed, frame).

    The whole field is generated in one deterministic draw, so results do not
    depend on traversal order or worker count.
    """
    key = ((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) | (int(frame_index) & 0xFFFFFFFFFFFFFFFF)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.random((height, width, 2)) - 0.5


def _tile_pixel_centers(ty, tx, tile, height, width, dtype):
    y0, y1 = ty * tile, min((ty + 1) * tile, height)
    x0, x1 = tx * tile, min((tx + 1) * tile, width)
    us = (np.arange(x0, x1) + 0.5).astype(dtype)
    vs = (np.arange(y0, y1) + 0.5).astype(dtype)
    uu, vv = np.meshgrid(us, vs)
    return (y0, y1, x0, x1), uu.ravel(), vv.ravel()


def cull_and_bin(snapshots, frame, opts=RenderOptions()):
    """Project snapshots and assign them to tiles.

    Returns (keep, px, z, cov2d, inv_cov, tile_ids, frag_ids): fragments are
    sorted by (tile, depth, source index) and ``frag_ids`` indexes the kept
    arrays.  A snapshot is dropped if it sits at/behind the near clip, its
    peak alpha is below 1/255, or its 3-sigma box misses the viewport.
    """
    intr = frame.intrinsics
    ext = frame.extrinsics
    dtype = np.dtype(opts.dtype)
    H, W = intr.height, intr.width

    center = snapshots.center.astype(dtype)
    x_cam = cameras.world_to_camera(center, ext).astype(dtype)
    z = x_cam[:, 2]
    alpha0 = np.asarray(snapshots.alpha0, dtype=dtype)
    front = (z > opts.near_clip) & (alpha0 >= opts.min_alpha0)

    idx = np.nonzero(front)[0]
    x_cam = x_cam[idx]
    z = z[idx]
    px, _, _ = cameras.project_points(x_cam, intr, opts.near_clip)
    px = px.astype(dtype)

    cov3 = cameras.build_covariance(snapshots.scale[idx], snapshots.rot[idx]).astype(dtype)
    cov2d = cameras.project_covariances(cov3, x_cam, intr, ext, low_pass=opts.low_pass)

    k = opts.radius_sigmas
    rx = k * np.sqrt(cov2d[:, 0, 0])
    ry = k * np.sqrt(cov2d[:, 1, 1])
    on_screen = ((px[:, 0] - rx < W) & (px[:, 0] + rx > 0.0)
                 & (px[:, 1] - ry < H) & (px[:, 1] + ry > 0.0))

    keep = idx[on_screen]
    x_cam, z, px = x_cam[on_screen], z[on_screen], px[on_screen]
    cov3, cov2d = cov3[on_screen], cov2d[on_screen]
    rx, ry = rx[on_screen], ry[on_screen]

    if keep.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return (keep, x_cam, px, z, cov3, cov2d,
                np.zeros((0, 3), dtype=dtype), empty, empty)

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    inv_cov = np.stack([c / det, -b / det, a / det], axis=-1)

    tile = opts.tile_size
    ntx = -(-W // tile)
    nty = -(-H // tile)
    tx0 = np.clip(np.floor((px[:, 0] - rx) / tile).astype(np.int64), 0, ntx - 1)
    tx1 = np.clip(np.floor((px[:, 0] + rx) / tile).astype(np.int64), 0, ntx - 1)
    ty0 = np.clip(np.floor((px[:, 1] - ry) / tile).astype(np.int64), 0, nty - 1)
    ty1 = np.clip(np.floor((px[:, 1] + ry) / tile).astype(np.int64), 0, nty - 1)

    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    frag_ids = np.repeat(np.arange(keep.size), counts)
    # Enumerate the (ty, tx) block of each fragment in row-major order.
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total) - np.repeat(offsets, counts)
    lx = local % np.repeat(nx, counts)
    ly = local // np.repeat(nx, counts)
    tile_ids = (np.repeat(ty0, counts) + ly) * ntx + (np.repeat(tx0, counts) + lx)

    src = np.asarray(snapshots.source_index)[keep]
    order = np.lexsort((src[frag_ids], z[frag_ids], tile_ids))
    tile_ids = tile_ids[order]
    frag_ids = frag_ids[order]

    return keep, x_cam, px, z, cov3, cov2d, inv_cov, tile_ids, frag_ids


def composite_tiles(keep_px, keep_z, inv_cov, alpha0, colors, vel_cam,
                    tile_ids, frag_ids, frame, opts):
    """Front-to-back compositing of the binned fragments (compiled kernel)."""
    intr = frame.intrinsics
    H, W = intr.height, intr.width
    dtype = np.dtype(opts.dtype)
    tile = opts.tile_size
    ntx = -(-W // tile)

    out_color = np.zeros((H, W, 3), dtype=dtype)
    out_opac = np.zeros((H, W), dtype=dtype)
    out_dsum = np.zeros((H, W), dtype=dtype)
    out_vel = np.zeros((H, W, 3), dtype=dtype)
    out_cnt = np.zeros((H, W), dtype=np.int32)

    unique_tiles, tile_starts = np.unique(tile_ids, return_index=True)
    bounds = np.append(tile_starts, tile_ids.size).astype(np.int64)

    if frag_ids.size:
        _kernels.composite_forward(
            np.ascontiguousarray(keep_px), np.ascontiguousarray(keep_z),
            np.ascontiguousarray(inv_cov[:, 0]), np.ascontiguousarray(inv_cov[:, 1]),
            np.ascontiguousarray(inv_cov[:, 2]), np.ascontiguousarray(alpha0),
            np.ascontiguousarray(colors), np.ascontiguousarray(vel_cam),
            frag_ids.astype(np.int64), bounds, unique_tiles.astype(np.int64),
            ntx, H, W, tile, float(opts.alpha_clamp), float(opts.termination),
            out_color, out_opac, out_dsum, out_vel, out_cnt)

    return out_color, out_opac, out_dsum, out_vel, out_cnt, unique_tiles, tile_starts


def composite_sky(fg_color, opacity, cube, frame, opts, frame_index=0):
    """Blend the cube map behind the splats: final = C + (1 - O) * sky."""
    intr = frame.intrinsics
    jitter = None
    if opts.sky_jitter:
        jitter = sky_jitter_offsets(intr.height, intr.width, opts.seed, frame_index)
    dirs = cameras.pixel_rays(intr, frame.extrinsics, jitter)
    taps = cube.taps(dirs)
    sky = cube.sample(dirs, taps).astype(fg_color.dtype)
    final = fg_color + (1.0 - opacity)[..., None] * sky
    return final, sky, taps, dirs


def render_snapshots(snapshots, cube, frame, opts=RenderOptions(), with_graph=False):
    """Rasterize an explicit snapshot set (no temporal model involved)."""
    (keep, x_cam, px, z, cov3, cov2d, inv_cov,
     tile_ids, frag_ids) = cull_and_bin(snapshots, frame, opts)

    dtype = np.dtype(opts.dtype)
    alpha0 = np.asarray(snapshots.alpha0, dtype=dtype)[keep]
    colors = np.asarray(snapshots.color, dtype=dtype)[keep]
    vel_cam = (np.asarray(snapshots.avg_vel, dtype=dtype)[keep]
               @ frame.extrinsics.rotation.T.astype(dtype))

    (fg, opac, dsum, vel, cnt, unique_tiles,
     tile_starts) = composite_tiles(px, z, inv_cov, alpha0, colors, vel_cam,
                                    tile_ids, frag_ids, frame, opts)

    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(opac > 0.0, dsum / np.where(opac > 0.0, opac, 1.0), 0.0)

    final, sky, taps, dirs = composite_sky(fg, opac, cube, frame, opts,
                                           frame_index=getattr(frame, "frame_index", 0))

    out = RenderOutput(color=final, foreground=fg, opacity=opac, depth=depth,
                       velocity=vel, sky=sky, contributors=cnt)
    if not with_graph:
        return out
    graph = RenderGraph(
        snapshots=snapshots, keep=keep, x_cam=x_cam, px=px, z=z, cov3=cov3,
        cov2d=cov2d, inv_cov=inv_cov, alpha0=alpha0, colors=colors,
        vel_cam=vel_cam, tile_ids=tile_ids, frag_ids=frag_ids,
        tile_starts=tile_starts, unique_tiles=unique_tiles, sky_taps=taps,
        sky_dirs=dirs, opts=opts, frame=frame,
    )
    return out, graph


def render(points, cube, frame, cfg, opts=RenderOptions(), t=None, dt=0.0,
           mode="vibration", static=False, with_graph=False):
    """Render the point set at time ``t`` (defaults to the frame timestamp).

    With ``dt`` nonzero the state at ``t - dt`` is carried forward by each
    point's average velocity before rasterizing, which is how the temporal
    smoothing steps render.  ``static=True`` ignores the temporal model
    entirely and rasterizes anchors at peak opacity.
    """
    t = frame.timestamp if t is None else float(t)
    if static:
        snaps = static_snapshot(points)
    else:
        snaps = estimate_state(points, t, float(dt), cfg, mode=mode)
    result = render_snapshots(snaps, cube, frame, opts, with_graph=with_graph)
    if with_graph:
        out, graph = result
        graph.points = points
        graph.scene_cfg = cfg
        graph.t = t
        graph.dt = float(dt)
        graph.mode = mode
        graph.static = static
        return out, graph
    return result


# -- velocity visualization ------------------------------------------------------


def _flow_wheel():
    """Standard 55-entry optical-flow color wheel."""
    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((RY + YG + GC + CB + BM + MR, 3))
    col = 0
    wheel[0:RY, 0] = 1.0
    wheel[0:RY, 1] = np.arange(RY) / RY
    col += RY
    wheel[col:col + YG, 0] = 1.0 - np.arange(YG) / YG
    wheel[col:col + YG, 1] = 1.0
    col += YG
    wheel[col:col + GC, 1] = 1.0
    wheel[col:col + GC, 2] = np.arange(GC) / GC
    col += GC
    wheel[col:col + CB, 1] = 1.0 - np.arange(CB) / CB
    wheel[col:col + CB, 2] = 1.0
    col += CB
    wheel[col:col + BM, 2] = 1.0
    wheel[col:col + BM, 0] = np.arange(BM) / BM
    col += BM
    wheel[col:col + MR, 2] = 1.0 - np.arange(MR) / MR
    wheel[col:col + MR, 0] = 1.0
    return wheel


def colorize_velocity(output, frame, max_speed=1.0):
    """Map the rendered velocity channel to the optical-flow color coding.

    The camera-space velocity is projected onto the image plane (x right,
    y down); hue encodes direction, saturation encodes speed relative to
    ``max_speed`` (clamped), zero motion renders white.
    """
    u = output.velocity[..., 0]
    v = output.velocity[..., 1]
    rad = np.sqrt(u * u + v * v) / max_speed
    rad = np.minimum(rad, 1.0)
    angle = np.arctan2(-v, -u) / np.pi  # in (-1, 1], flow-wheel convention

    wheel = _flow_wheel()
    n = wheel.shape[0]
    fk = (angle + 1.0) / 2.0 * (n - 1)
    k0 = np.floor(fk).astype(int) % n
    k1 = (k0 + 1) % n
    f = fk - np.floor(fk)
    col = (1.0 - f)[..., None] * wheel[k0] + f[..., None] * wheel[k1]
    # Blend toward white at low speeds.
    img = 1.0 - rad[..., None] * (1.0 - col)
    return np.clip(img, 0.0, 1.0)
