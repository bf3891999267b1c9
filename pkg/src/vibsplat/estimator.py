"""Scikit-learn style estimator facade over the reconstruction engine.

``SceneReconstructor`` follows the usual conventions: hyperparameters in
``__init__`` (so ``get_params`` / ``set_params`` / ``clone`` work), learned
state in trailing-underscore attributes after ``fit``, and ``predict`` maps
camera frames to rendered images.
"""

import numbers

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .densify import ControlConfig
from .losses import LossWeights, psnr
from .rasterizer import render
from .training import TrainConfig, init_state, make_options, train


class SceneReconstructor(BaseEstimator):
    """Fits a time-vibrating Gaussian point set to a posed image sequence.

    Parameters mirror the trainer configuration; anything not exposed here
    can be passed prebuilt via ``train_config``.

    Attributes after ``fit``: ``state_`` (full trainer state), ``points_``,
    ``cube_``, ``scene_config_``, ``history_`` (loss-trace rows).
    """

    def __init__(self, n_iterations=2000, eta=0.5, cycle_length=0.2,
                 scene_radius=None, seed=0, dtype="float32",
                 dynamics_mode="vibration", coarse_start_downsample=4,
                 coarse_step_iters=None, sky_resolution=64,
                 lambda_r=0.2, lambda_d=0.1, lambda_o=0.05, lambda_v=0.01,
                 grad_threshold=1.7e-4, position_aware=True,
                 train_config=None):
        self.n_iterations = n_iterations
        self.eta = eta
        self.cycle_length = cycle_length
        self.scene_radius = scene_radius
        self.seed = seed
        self.dtype = dtype
        self.dynamics_mode = dynamics_mode
        self.coarse_start_downsample = coarse_start_downsample
        self.coarse_step_iters = coarse_step_iters
        self.sky_resolution = sky_resolution
        self.lambda_r = lambda_r
        self.lambda_d = lambda_d
        self.lambda_o = lambda_o
        self.lambda_v = lambda_v
        self.grad_threshold = grad_threshold
        self.position_aware = position_aware
        self.train_config = train_config

    def _build_config(self, dataset):
        if self.train_config is not None:
            return self.train_config
        for name in ("n_iterations", "sky_resolution"):
            v = getattr(self, name)
            if not isinstance(v, numbers.Integral) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        radius = self.scene_radius if self.scene_radius is not None else dataset.scene_radius
        step = (self.coarse_step_iters if self.coarse_step_iters is not None
                else max(1, self.n_iterations // 4))
        return TrainConfig(
            total_iters=int(self.n_iterations),
            eta=self.eta,
            seed=self.seed,
            dtype=self.dtype,
            dynamics_mode=self.dynamics_mode,
            cycle_length=self.cycle_length,
            scene_radius=radius,
            sky_resolution=int(self.sky_resolution),
            coarse_start_downsample=self.coarse_start_downsample,
            coarse_step_iters=step,
            weights=LossWeights(self.lambda_r, self.lambda_d, self.lambda_o, self.lambda_v),
            control=ControlConfig(grad_threshold=self.grad_threshold,
                                  scene_radius=radius,
                                  position_aware=self.position_aware),
        )

    def fit(self, dataset, frame_indices=None):
        """Optimize against the dataset (optionally a subset of its frames)."""
        if frame_indices is not None:
            sub = _subset_view(dataset, frame_indices)
        else:
            sub = dataset
        cfg = self._build_config(sub)
        state = init_state(sub, cfg)
        state, trace = train(sub, cfg, state=state)
        self.state_ = state
        self.points_ = state.points
        self.cube_ = state.cube
        self.scene_config_ = state.scene_cfg
        self.history_ = trace
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("call fit before predict/score")

    def predict(self, frames, times=None):
        """Rendered images for camera frames (times default to frame stamps)."""
        self._check_fitted()
        opts = make_options(self.state_.config)
        out = []
        for i, frame in enumerate(frames):
            t = None if times is None else times[i]
            res = render(self.points_, self.cube_, frame, self.scene_config_,
                         opts=opts, t=t, mode=self.state_.config.dynamics_mode)
            out.append(res.color)
        return out

    def score(self, frames):
        """Mean PSNR (dB) against the frames' own images."""
        self._check_fitted()
        preds = self.predict(frames)
        return float(np.mean([psnr(p, f.image) for p, f in zip(preds, frames)]))


def _subset_view(dataset, indices):
    import copy

    sub = copy.copy(dataset)
    sub.frames = [dataset.frames[i] for i in indices]
    sub._level_cache = {}
    return sub
