"""Dynamic-scene reconstruction with time-vibrating Gaussian splats.

A deterministic CPU engine: each scene point is an anisotropic Gaussian
whose mean vibrates sinusoidally around an anchor and whose opacity decays
around a per-point peak time.  A tile-based software rasterizer renders
color/depth/opacity/velocity channels differentiably, and training fits the
point set to posed image sequences with LiDAR depth and sky-mask
supervision.
"""

from .cameras import CameraExtrinsics, CameraFrame, CameraIntrinsics
from .cubemap import CubeMap, sample_cubemap
from .densify import ControlConfig, densify_and_prune, reset_opacity, scale_factor
from .errors import (BadPose, BehindCamera, ChecksumMismatch, DimMismatch,
                     ManifestMissing, NonFiniteLoss, SpecInvalid,
                     TimestampDisorder, VersionMismatch, VibsplatError)
from .estimator import SceneReconstructor
from .gradients import GradientBuffer, backward, finite_difference_oracle, render_loss
from .losses import LossWeights, l1_loss, psnr, ssim_loss, ssim_metric, total_loss
from .points import (PointCloud, SceneConfig, SnapshotSet, average_velocity,
                     classify_static, estimate_state, evaluate_mean,
                     evaluate_opacity, snapshot_at, staticness)
from .rasterizer import RenderOptions, RenderOutput, colorize_velocity, render
from .synthetic import SyntheticSpec, generate_synthetic, preset, write_synthetic
from .training import (TrainConfig, TrainState, checkpoint_load, checkpoint_save,
                       coarse_level, sample_step, train, train_step)
from .datasets import SceneDataset, load_dataset, project_lidar_depth, save_dataset

__version__ = "0.1.0"
