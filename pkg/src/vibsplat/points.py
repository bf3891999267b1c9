"""Time-parameterized Gaussian point set and its closed-form temporal evaluations.

Each point is an anisotropic 3D Gaussian whose mean vibrates sinusoidally
around an anchor position and whose opacity decays away from a per-point
peak time ``tau``.  A point with zero velocity and a decay window much
longer than the vibration cycle behaves exactly like a plain static
Gaussian, so one representation covers both static and moving content.

Storage follows the usual splatting conventions: scales and the decay
window ``beta`` live in log-space, opacity is a pre-sigmoid logit, and the
orientation quaternion is renormalized after every optimizer step.  All
evaluations here are pure functions, vectorized over the whole point set.
"""

from dataclasses import dataclass, field

import numpy as np

from .validation import check_array, check_positive

# Parameter tensors that make up one point, in canonical order.
PARAM_FIELDS = (
    "mu",            # (N, 3) anchor position of the vibration, world meters
    "rot",           # (N, 4) quaternion (w, x, y, z), kept ~unit norm
    "log_scale",     # (N, 3) per-axis std-dev, log meters
    "opacity_logit", # (N,)   pre-sigmoid peak opacity
    "color",         # (N, 3) linear RGB
    "tau",           # (N,)   peak time (scene time units)
    "log_beta",      # (N,)   opacity decay window, log scene-time units
    "vel",           # (N, 3) instantaneous velocity at t = tau
)

_FIELD_COLS = {"mu": 3, "rot": 4, "log_scale": 3, "opacity_logit": 0,
               "color": 3, "tau": 0, "log_beta": 0, "vel": 3}

# Mean trajectory variants, used by the dynamics-model ablations:
# "vibration" is the full sinusoidal model, "linear" its long-cycle limit,
# "constant" its zero-cycle limit (frozen mean).
DYNAMICS_MODES = ("vibration", "linear", "constant")


@dataclass(frozen=True)
class SceneConfig:
    """Scene-level priors shared by every point."""

    cycle_length: float = 0.2   # period of the mean vibration
    frame_dt: float = 0.02      # normalized spacing of consecutive frames
    scene_radius: float = 30.0  # foreground scope, meters

    def __post_init__(self):
        check_positive(self.cycle_length, "cycle_length")
        check_positive(self.frame_dt, "frame_dt")
        check_positive(self.scene_radius, "scene_radius")


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float64) if x.dtype.kind != "f" else x.dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(y):
    y = np.asarray(y)
    return np.log(y / (1.0 - y))


def quat_normalize(q):
    q = np.asarray(q)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


class PointCloud:
    """Struct-of-arrays container for the learnable point parameters."""

    def __init__(self, mu, rot, log_scale, opacity_logit, color, tau, log_beta, vel,
                 dtype=np.float64):
        values = {"mu": mu, "rot": rot, "log_scale": log_scale,
                  "opacity_logit": opacity_logit, "color": color,
                  "tau": tau, "log_beta": log_beta, "vel": vel}
        n = np.asarray(mu).shape[0]
        for name in PARAM_FIELDS:
            cols = _FIELD_COLS[name]
            shape = (n,) if cols == 0 else (n, cols)
            setattr(self, name, check_array(values[name], name, shape=shape, dtype=dtype))
        self.dtype = np.dtype(dtype)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def zeros(cls, n, dtype=np.float64):
        return cls(
            mu=np.zeros((n, 3)),
            rot=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
            log_scale=np.zeros((n, 3)),
            opacity_logit=np.zeros(n),
            color=np.full((n, 3), 0.5),
            tau=np.zeros(n),
            log_beta=np.full(n, np.log(0.3)),
            vel=np.zeros((n, 3)),
            dtype=dtype,
        )

    def copy(self):
        return PointCloud(**{k: getattr(self, k).copy() for k in PARAM_FIELDS}, dtype=self.dtype)

    def astype(self, dtype):
        return PointCloud(**{k: getattr(self, k) for k in PARAM_FIELDS}, dtype=dtype)

    def select(self, index):
        """Subset by boolean mask or index array, preserving order."""
        return PointCloud(**{k: getattr(self, k)[index] for k in PARAM_FIELDS}, dtype=self.dtype)

    @staticmethod
    def concatenate(clouds):
        clouds = list(clouds)
        dtype = clouds[0].dtype
        return PointCloud(
            **{k: np.concatenate([getattr(c, k) for c in clouds]) for k in PARAM_FIELDS},
            dtype=dtype,
        )

    def __len__(self):
        return self.mu.shape[0]

    def params(self):
        """Name -> array view of every learnable tensor."""
        return {k: getattr(self, k) for k in PARAM_FIELDS}

    # -- derived quantities ----------------------------------------------------

    @property
    def scale(self):
        return np.exp(self.log_scale)

    @property
    def beta(self):
        return np.exp(self.log_beta)

    @property
    def opacity(self):
        return sigmoid(self.opacity_logit)

    @property
    def unit_rot(self):
        return quat_normalize(self.rot)

    def renormalize_rot(self):
        self.rot /= np.linalg.norm(self.rot, axis=-1, keepdims=True)


@dataclass
class SnapshotSet:
    """Plain 3D Gaussians obtained by freezing the point set at one time."""

    center: np.ndarray        # (N, 3)
    rot: np.ndarray           # (N, 4) unit quaternions
    scale: np.ndarray         # (N, 3) linear (exponentiated) std-devs
    alpha0: np.ndarray        # (N,) peak opacity after sigmoid and decay
    color: np.ndarray         # (N, 3)
    avg_vel: np.ndarray       # (N, 3) decay-weighted velocity, world frame
    source_index: np.ndarray = field(default=None)  # (N,) into the point set

    def __post_init__(self):
        if self.source_index is None:
            self.source_index = np.arange(self.center.shape[0])

    def __len__(self):
        return self.center.shape[0]


# -- temporal evaluations ------------------------------------------------------


def _phase(t, tau, cycle_length):
    # Reduce t - tau modulo the cycle before scaling so the sine argument
    # stays small even when |t - tau| is many cycles.
    return np.remainder(np.asarray(t) - tau, cycle_length) * (2.0 * np.pi / cycle_length)


def mean_displacement_factor(points, t, cfg, mode="vibration"):
    """Scalar f(t) per point such that mean(t) = mu + f(t) * vel."""
    if mode == "vibration":
        amp = cfg.cycle_length / (2.0 * np.pi)
        return amp * np.sin(_phase(t, points.tau, cfg.cycle_length))
    if mode == "linear":
        return np.asarray(t) - points.tau
    if mode == "constant":
        return np.zeros_like(points.tau)
    raise ValueError(f"unknown dynamics mode {mode!r}")


def mean_displacement_factor_dtau(points, t, cfg, mode="vibration"):
    """d f(t) / d tau, matching :func:`mean_displacement_factor`."""
    if mode == "vibration":
        return -np.cos(_phase(t, points.tau, cfg.cycle_length))
    if mode == "linear":
        return -np.ones_like(points.tau)
    if mode == "constant":
        return np.zeros_like(points.tau)
    raise ValueError(f"unknown dynamics mode {mode!r}")


def evaluate_mean(points, t, cfg, mode="vibration"):
    """Mean position of every point at time ``t``, shape (N, 3).

    The displacement away from the anchor is bounded by
    ``cycle_length / (2 pi) * |vel|`` and averages to zero over any whole
    number of cycles, so points with long decay windows sit still.
    """
    f = mean_displacement_factor(points, t, cfg, mode)
    return points.mu + f[:, None] * points.vel


def evaluate_opacity(points, t):
    """Effective opacity at time ``t``: peak value times a Gaussian decay."""
    d = np.asarray(t) - points.tau
    return points.opacity * np.exp(-0.5 * d * d / (points.beta ** 2))


def opacity_decay(points, t):
    """Just the temporal decay factor in (0, 1], without the sigmoid."""
    d = np.asarray(t) - points.tau
    return np.exp(-0.5 * d * d / (points.beta ** 2))


def staticness(points, cfg):
    """Ratio of decay window to vibration cycle; large values mean static."""
    return points.beta / cfg.cycle_length


def velocity_decay_factor(points, cfg, mode="vibration"):
    """Weight in [0, 1] applied to ``vel`` to form the average velocity."""
    if mode == "vibration":
        return np.exp(-0.5 * staticness(points, cfg))
    if mode == "linear":   # infinite-cycle limit: no decay
        return np.ones_like(points.tau)
    if mode == "constant":  # zero-cycle limit: fully damped
        return np.zeros_like(points.tau)
    raise ValueError(f"unknown dynamics mode {mode!r}")


def average_velocity(points, cfg, mode="vibration"):
    """Opacity-decay-weighted velocity; the motion a point contributes on average."""
    return points.vel * velocity_decay_factor(points, cfg, mode)[:, None]


def snapshot_at(points, t, cfg, mode="vibration"):
    """Freeze the point set at time ``t`` into plain 3D Gaussians."""
    return estimate_state(points, t, 0.0, cfg, mode=mode)


def estimate_state(points, t, dt, cfg, mode="vibration"):
    """Predict the state at ``t`` from the state at ``t - dt``.

    The earlier state is carried forward by a straight-line translation of
    ``avg_vel * dt`` per point; with ``dt == 0`` this reduces exactly to
    :func:`snapshot_at`.
    """
    t_eval = np.asarray(t, dtype=points.dtype) - dt
    center = evaluate_mean(points, t_eval, cfg, mode)
    avg_vel = average_velocity(points, cfg, mode)
    if dt != 0.0:
        center = center + avg_vel * dt
    alpha0 = points.opacity * opacity_decay(points, t_eval)
    return SnapshotSet(
        center=center,
        rot=points.unit_rot,
        scale=points.scale,
        alpha0=alpha0,
        color=points.color.copy(),
        avg_vel=avg_vel,
        source_index=np.arange(len(points)),
    )


def static_snapshot(points):
    """Time-free snapshot: anchors and peak opacities, no decay, no motion."""
    return SnapshotSet(
        center=points.mu.copy(),
        rot=points.unit_rot,
        scale=points.scale,
        alpha0=np.asarray(points.opacity),
        color=points.color.copy(),
        avg_vel=np.zeros_like(points.vel),
        source_index=np.arange(len(points)),
    )


def classify_static(points, cfg, threshold=1.0):
    """Partition indices into (static, dynamic) by the staticness ratio.

    A point is dynamic iff its ratio falls below ``threshold``; with a
    threshold of zero everything is static because the ratio is positive.
    """
    if threshold < 0.0:
        raise ValueError("threshold: must be >= 0")
    rho = staticness(points, cfg)
    dynamic = rho < threshold
    idx = np.arange(len(points))
    return idx[~dynamic], idx[dynamic]
