"""Training loop: smoothing-sample selection, coarse-to-fine schedule, Adam
updates with per-parameter learning rates, point-count control, checkpoints.

One step renders a state estimate carried forward by a random small time
shift (the temporal-smoothing self-supervision) against the ground-truth
frame, backpropagates the combined loss, and applies Adam with the learning
rates below.  Runs are deterministic for a fixed seed and config; in 64-bit
mode two identical runs produce byte-identical checkpoints.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cubemap import CubeMap
from .densify import ControlConfig, densify_and_prune, reset_opacity
from .errors import ChecksumMismatch, NonFiniteLoss, VersionMismatch
from .gradients import render_loss
from .losses import SSIM_WINDOW, LossWeights
from .optim import Adam, exponential_lr
from .points import PARAM_FIELDS, PointCloud, SceneConfig
from .rasterizer import RenderOptions

TRACE_COLUMNS = ("iteration", "total", "l1", "ssim", "depth", "opacity",
                 "velocity", "points", "level")


@dataclass
class TrainConfig:
    total_iters: int = 30000
    eta: float = 0.5                      # probability of a zero time shift
    delta: Optional[float] = None         # shift half-range; default 1.5 * frame_dt
    seed: int = 0
    dtype: str = "float32"                # "float64" for the deterministic/oracle mode
    dynamics_mode: str = "vibration"
    cycle_length: float = 0.2
    frame_dt: float = 0.02
    scene_radius: Optional[float] = None  # None: use the dataset estimate
    sky_resolution: int = 64
    sky_jitter: bool = True
    coarse_start_downsample: int = 16
    coarse_step_iters: int = 5000
    # learning rates; the anchor position decays exponentially and is scaled
    # by the scene radius, the peak time follows it scaled by frame_dt
    lr_mu_init: float = 1.6e-4
    lr_mu_final: float = 1.6e-6
    lr_vel: float = 1e-3
    lr_log_beta: float = 0.02
    lr_opacity: float = 0.005
    lr_color: float = 2.5e-3
    lr_log_scale: float = 5e-3
    lr_rot: float = 1e-3
    lr_cube: float = 0.01
    tau_lr_scale: float = 1.0
    adam_eps: float = 1e-15
    # initialization
    init_lidar: int = 6000
    init_near: int = 2000
    init_far: int = 2000
    beta_init: float = 0.3
    opacity_init: float = 0.1
    # losses and ablation switches
    weights: LossWeights = field(default_factory=LossWeights)
    control: Optional[ControlConfig] = None   # resolved against the scene radius
    grad_depth: bool = True
    grad_velocity: bool = True
    workers: int = 1   # execution is vectorized; results never depend on this

    def resolved_delta(self):
        return 1.5 * self.frame_dt if self.delta is None else self.delta

    def to_dict(self):
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("weights") is not None and not isinstance(d["weights"], LossWeights):
            d["weights"] = LossWeights(**d["weights"])
        if d.get("control") is not None and not isinstance(d["control"], ControlConfig):
            d["control"] = ControlConfig(**d["control"])
        return cls(**d)


@dataclass
class TrainState:
    points: PointCloud
    cube: CubeMap
    optimizer: Adam
    iteration: int
    rng: np.random.Generator
    grad_accum: np.ndarray     # (N,) summed positional-gradient norms
    grad_count: np.ndarray     # (N,) views in which the point was visible
    scene_cfg: SceneConfig
    config: TrainConfig
    time_offset: float = 0.0
    time_scale: float = 1.0
    world_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    control_events: list = field(default_factory=list)


def coarse_level(iteration, cfg):
    """Downsample factor at this iteration: halves every coarse_step_iters."""
    factor = cfg.coarse_start_downsample
    steps = iteration // cfg.coarse_step_iters
    for _ in range(steps):
        if factor <= 1:
            break
        factor //= 2
    return max(1, factor)


def sample_step(n_frames, eta, delta, rng):
    """Pick a training frame and the smoothing time shift for one step."""
    if n_frames <= 0:
        raise ValueError("no training frames")
    idx = int(rng.integers(n_frames))
    if rng.random() < eta:
        dt = 0.0
    else:
        dt = float(rng.uniform(-delta, delta))
    return idx, dt


def learning_rates(cfg, scene_radius, iteration):
    r = scene_radius
    mu_sched = exponential_lr(cfg.lr_mu_init * r, cfg.lr_mu_final * r, cfg.total_iters)
    mu_lr = mu_sched(iteration)
    return {
        "mu": mu_lr,
        "rot": cfg.lr_rot,
        "log_scale": cfg.lr_log_scale,
        "opacity_logit": cfg.lr_opacity,
        "color": cfg.lr_color,
        "tau": mu_lr * cfg.frame_dt * cfg.tau_lr_scale,
        "log_beta": cfg.lr_log_beta,
        "vel": cfg.lr_vel,
        "cube": cfg.lr_cube,
    }


def make_options(cfg):
    return RenderOptions(dtype=np.float64 if cfg.dtype == "float64" else np.float32,
                         sky_jitter=cfg.sky_jitter, seed=cfg.seed)


def train_step(state, frame, dt, cfg):
    """One optimization step against a (possibly downsampled) frame."""
    opts = make_options(cfg)
    use_ssim = (cfg.weights.lambda_r > 0.0
                and min(frame.intrinsics.height, frame.intrinsics.width) >= SSIM_WINDOW)
    try:
        breakdown, out, buf = render_loss(
            state.points, state.cube, frame, state.scene_cfg, cfg.weights,
            opts=opts, dt=dt, mode=cfg.dynamics_mode, use_ssim=use_ssim,
            grad_depth=cfg.grad_depth, grad_velocity=cfg.grad_velocity,
            with_grads=True)
    except NonFiniteLoss as exc:
        raise NonFiniteLoss(
            f"iteration={state.iteration} frame={frame.frame_index} {exc}") from exc

    if not buf.all_finite():
        raise NonFiniteLoss(
            f"iteration={state.iteration} frame={frame.frame_index} "
            f"non-finite gradients; breakdown={breakdown}")

    params = state.points.params()
    params["cube"] = state.cube.texels
    grads = buf.params()
    grads["cube"] = buf.cube
    lrs = learning_rates(cfg, state.scene_cfg.scene_radius, state.iteration)
    state.optimizer.step(params, grads, lrs)
    state.points.renormalize_rot()

    state.grad_accum += buf.pos_grad_norm
    state.grad_count += buf.visible
    return breakdown, out


def run_control(state, cfg):
    """Densify/prune and opacity reset on their schedules; returns log lines."""
    control = cfg.control
    it = state.iteration
    lines = []
    stop = control.densify_stop if control.densify_stop is not None else cfg.total_iters // 2

    due = (it >= control.densify_start and it <= stop
           and it % control.interval_iters == 0)
    if due:
        grad_mean = np.where(state.grad_count > 0,
                             state.grad_accum / np.maximum(state.grad_count, 1), 0.0)
        new_points, log = densify_and_prune(
            state.points, grad_mean, control, it, state.rng, state.scene_cfg)
        keep_index = np.nonzero(log.keep_mask)[0]
        n_new = log.clones + 2 * log.splits
        for name in PARAM_FIELDS:
            state.optimizer.remap_rows(name, keep_index, n_new)
        state.points = new_points
        state.grad_accum = np.zeros(len(new_points))
        state.grad_count = np.zeros(len(new_points), dtype=np.int64)
        state.control_events.append(log)
        lines.append(log.line())

    if reset_opacity(state.points, control, it):
        state.optimizer.reset_tensor("opacity_logit")
        lines.append(f"iteration={it} opacity_reset={control.opacity_reset_value}")
    return lines


def init_state(dataset, cfg, points=None):
    """Fresh training state; point initialization comes from the dataset."""
    from .datasets import initialize_points

    radius = cfg.scene_radius if cfg.scene_radius is not None else dataset.scene_radius
    scene_cfg = SceneConfig(cfg.cycle_length, cfg.frame_dt, radius)
    if cfg.control is None:
        cfg = dataclasses.replace(cfg, control=ControlConfig(scene_radius=radius))
    rng = np.random.default_rng(cfg.seed)
    if points is None:
        points = initialize_points(dataset, cfg, scene_cfg, rng)
    # Parameters always live in float64; cfg.dtype only picks the render precision.
    points = points.astype(np.float64)
    cube = CubeMap.constant(cfg.sky_resolution, 0.5)
    params = points.params()
    params["cube"] = cube.texels
    opt = Adam(params, eps=cfg.adam_eps)
    return TrainState(
        points=points, cube=cube, optimizer=opt, iteration=0, rng=rng,
        grad_accum=np.zeros(len(points)),
        grad_count=np.zeros(len(points), dtype=np.int64),
        scene_cfg=scene_cfg, config=cfg,
        time_offset=dataset.time_offset, time_scale=dataset.time_scale,
        world_offset=np.asarray(dataset.world_offset, dtype=np.float64),
    )


def train(dataset, cfg, state=None, trace_path=None, control_log_path=None,
          checkpoint_path=None, progress=None, stop_iteration=None):
    """Optimize until ``cfg.total_iters``; returns (state, loss trace rows).

    ``state`` may come from :func:`checkpoint_load` to resume bit-exactly.
    ``stop_iteration`` interrupts early (for checkpoint/resume workflows)
    without changing the schedules, which depend on ``total_iters``.
    """
    if state is None:
        state = init_state(dataset, cfg)
    cfg = state.config
    delta = cfg.resolved_delta()
    n_frames = len(dataset.frames)
    stop = cfg.total_iters if stop_iteration is None else min(stop_iteration, cfg.total_iters)
    trace = []
    trace_file = open(trace_path, "a") if trace_path else None
    if trace_file and state.iteration == 0:
        trace_file.write(",".join(TRACE_COLUMNS) + "\n")
    control_lines = []

    try:
        while state.iteration < stop:
            level = coarse_level(state.iteration, cfg)
            idx, dt = sample_step(n_frames, cfg.eta, delta, state.rng)
            frame = dataset.frame_at_level(idx, level)
            breakdown, _ = train_step(state, frame, dt, cfg)

            row = (state.iteration, breakdown["total"], breakdown["l1"],
                   breakdown["ssim"], breakdown["depth"], breakdown["opacity"],
                   breakdown["velocity"], len(state.points), level)
            trace.append(row)
            if trace_file:
                trace_file.write(",".join(f"{v:.10g}" if isinstance(v, float) else str(v)
                                          for v in row) + "\n")

            state.iteration += 1
            control_lines += run_control(state, cfg)
            if progress and state.iteration % progress == 0:
                print(f"[train] iter {state.iteration}/{cfg.total_iters} "
                      f"loss {breakdown['total']:.5f} points {len(state.points)} level {level}",
                      flush=True)
    finally:
        if trace_file:
            trace_file.close()

    if control_log_path:
        with open(control_log_path, "a") as fh:
            for line in control_lines:
                fh.write(line + "\n")
    if checkpoint_path:
        checkpoint_save(state, checkpoint_path)
    return state, trace


# -- checkpointing ---------------------------------------------------------------

CHECKPOINT_MAGIC = b"VSCK"
CHECKPOINT_VERSION = 1


def _jsonable(obj):
    """Recursively strip numpy scalar/array types for json.dumps."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _array_payload(state):
    arrays = {}
    for name in PARAM_FIELDS:
        arrays[f"points_{name}"] = getattr(state.points, name)
    arrays["cube"] = state.cube.texels
    arrays.update(state.optimizer.state_arrays())
    arrays["grad_accum"] = state.grad_accum
    arrays["grad_count"] = state.grad_count
    arrays["world_offset"] = state.world_offset
    return arrays


def checkpoint_save(state, path):
    """Write the complete training state; layout is stable and checksummed."""
    arrays = _array_payload(state)
    manifest = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        manifest.append({"name": name, "dtype": str(arr.dtype),
                         "shape": list(arr.shape), "nbytes": len(raw)})
        blobs.append(raw)

    header = {
        "version": CHECKPOINT_VERSION,
        "iteration": state.iteration,
        "scene": {"cycle_length": state.scene_cfg.cycle_length,
                  "frame_dt": state.scene_cfg.frame_dt,
                  "scene_radius": state.scene_cfg.scene_radius},
        "config": state.config.to_dict(),
        "adam_t": state.optimizer.t,
        "rng_state": state.rng.bit_generator.state,
        "time_offset": state.time_offset,
        "time_scale": state.time_scale,
        "arrays": manifest,
    }
    header_json = json.dumps(_jsonable(header), sort_keys=True).encode()
    payload = header_json + b"".join(blobs)
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        fh.write(np.uint32(len(header_json)).tobytes())
        fh.write(payload)
        fh.write(digest)


def checkpoint_load(path):
    """Reconstruct a TrainState; raises VersionMismatch / ChecksumMismatch."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise VersionMismatch(f"{path}: not a checkpoint (bad magic)")
    version = int(np.frombuffer(blob[4:8], dtype=np.uint32)[0])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    header_len = int(np.frombuffer(blob[8:12], dtype=np.uint32)[0])
    payload = blob[12:-32]
    digest = blob[-32:]
    if len(payload) < header_len or hashlib.sha256(payload).digest() != digest:
        raise ChecksumMismatch(f"{path}: payload digest mismatch or truncated file")

    header = json.loads(payload[:header_len].decode())
    arrays = {}
    offset = header_len
    for item in header["arrays"]:
        n = item["nbytes"]
        arr = np.frombuffer(payload[offset:offset + n], dtype=item["dtype"]).reshape(item["shape"])
        arrays[item["name"]] = arr.copy()
        offset += n

    cfg = TrainConfig.from_dict(header["config"])
    scene_cfg = SceneConfig(**header["scene"])
    points = PointCloud(**{name: arrays[f"points_{name}"] for name in PARAM_FIELDS})
    cube = CubeMap(arrays["cube"])
    params = points.params()
    params["cube"] = cube.texels
    opt = Adam(params, eps=cfg.adam_eps)
    opt.load_state_arrays(arrays, header["adam_t"])
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]

    return TrainState(
        points=points, cube=cube, optimizer=opt, iteration=header["iteration"],
        rng=rng, grad_accum=arrays["grad_accum"],
        grad_count=arrays["grad_count"].astype(np.int64),
        scene_cfg=scene_cfg, config=cfg,
        time_offset=header["time_offset"], time_scale=header["time_scale"],
        world_offset=arrays["world_offset"],
    )
