"""Position-aware point-count control: clone, split, prune, opacity reset.

Growth is driven by the accumulated screen-space positional gradient: points
that consistently want to move get duplicated (small ones) or subdivided
(large ones).  Size thresholds are relaxed with distance through a scale
factor so the unbounded background can be covered by few large points while
the foreground stays fine-grained.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cameras import quat_to_rotation
from .points import PointCloud, average_velocity, inverse_sigmoid


@dataclass
class ControlConfig:
    grad_threshold: float = 1.7e-4
    scene_radius: float = 30.0
    clone_scale_g: Optional[float] = None     # default 0.01 * scene_radius
    prune_scale_b: Optional[float] = None     # default 0.5 * scene_radius
    interval_iters: int = 100
    densify_start: int = 500
    densify_stop: Optional[int] = None        # trainer default: total_iters // 2
    opacity_reset_iters: int = 3000
    opacity_reset_value: float = 0.01
    split_scale_decay: float = 0.8
    min_opacity_prune: float = 0.005
    beta_shrink_start: Optional[int] = 10000  # splits also shrink beta from here on
    position_aware: bool = True               # gamma(mu) == 1 everywhere when off

    def __post_init__(self):
        if self.clone_scale_g is None:
            self.clone_scale_g = 0.01 * self.scene_radius
        if self.prune_scale_b is None:
            self.prune_scale_b = 0.5 * self.scene_radius
        if not self.clone_scale_g < self.prune_scale_b:
            raise ValueError("clone_scale_g must be smaller than prune_scale_b")


@dataclass
class ControlLog:
    """Reconciliation record of one control event."""

    iteration: int
    n_before: int
    clones: int
    splits: int
    pruned: int
    n_after: int
    keep_mask: np.ndarray = field(repr=False, default=None)   # survivors among originals
    clone_src: np.ndarray = field(repr=False, default=None)   # original indices copied
    split_src: np.ndarray = field(repr=False, default=None)   # original indices subdivided

    def line(self):
        return (f"iteration={self.iteration} clones={self.clones} splits={self.splits} "
                f"pruned={self.pruned} total={self.n_after}")


def scale_factor(mu, scene_radius):
    """Distance-dependent size allowance: 1 inside 2r, then growing linearly."""
    norm = np.linalg.norm(np.atleast_2d(mu), axis=-1)
    gamma = np.where(norm < 2.0 * scene_radius, 1.0, norm / scene_radius - 1.0)
    return gamma if np.ndim(mu) > 1 else float(gamma[0])


def densify_and_prune(points, grad_mean, cfg, iteration, rng, scene_cfg,
                      split_children=2):
    """One control event; returns (new point cloud, reconciliation log).

    ``grad_mean`` is the per-point mean screen-space positional gradient norm
    accumulated since the previous event.  Over-threshold points are cloned
    when their largest axis fits under ``g * gamma`` and split otherwise;
    oversized or near-transparent points are pruned.  Split parents are
    replaced by ``split_children`` samples drawn from the parent Gaussian,
    with the peak time jittered and the position carried along the average
    velocity, so children spread over time as well as space.
    """
    n = len(points)
    grad_mean = np.asarray(grad_mean)
    if grad_mean.shape != (n,):
        raise ValueError(f"grad_mean: expected shape ({n},), got {grad_mean.shape}")

    if cfg.position_aware:
        gamma = scale_factor(points.mu, cfg.scene_radius)
    else:
        gamma = np.ones(n)
    max_scale = points.scale.max(axis=1)

    prune = (max_scale > cfg.prune_scale_b * gamma) | (points.opacity < cfg.min_opacity_prune)
    over = (grad_mean > cfg.grad_threshold) & ~prune
    clone = over & (max_scale <= cfg.clone_scale_g * gamma)
    split = over & ~clone

    keep_mask = ~(prune | split)
    survivors = points.select(keep_mask)
    pieces = [survivors]

    clone_src = np.nonzero(clone)[0]
    if clone_src.size:
        pieces.append(points.select(clone_src))  # exact copies

    split_src = np.nonzero(split)[0]
    if split_src.size:
        parents = points.select(np.repeat(split_src, split_children))
        k = len(parents)
        # Position samples from each parent's own Gaussian.
        local = rng.standard_normal((k, 3)) * parents.scale
        R = quat_to_rotation(parents.rot)
        offsets = np.einsum("kij,kj->ki", R, local)
        dtau = rng.standard_normal(k) * parents.beta
        drift = average_velocity(parents, scene_cfg) * dtau[:, None]

        children = parents.copy()
        children.mu = parents.mu + offsets + drift
        children.tau = parents.tau + dtau
        children.log_scale = parents.log_scale + np.log(cfg.split_scale_decay)
        if cfg.beta_shrink_start is not None and iteration >= cfg.beta_shrink_start:
            children.log_beta = parents.log_beta + np.log(cfg.split_scale_decay)
        pieces.append(children)

    new_points = PointCloud.concatenate(pieces) if len(pieces) > 1 else survivors
    log = ControlLog(
        iteration=iteration,
        n_before=n,
        clones=int(clone_src.size),
        splits=int(split_src.size),
        pruned=int(prune.sum()),
        n_after=len(new_points),
        keep_mask=keep_mask,
        clone_src=clone_src,
        split_src=split_src,
    )
    return new_points, log


def reset_opacity(points, cfg, iteration):
    """Clamp every point's effective opacity down to the reset value.

    Applies only on iterations that are positive multiples of
    ``opacity_reset_iters``; returns True when a reset happened.
    """
    if iteration <= 0 or iteration % cfg.opacity_reset_iters != 0:
        return False
    capped = np.minimum(points.opacity, cfg.opacity_reset_value)
    points.opacity_logit[:] = inverse_sigmoid(capped)
    return True
