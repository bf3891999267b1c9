"""Calibration probe: ablation orderings (not shipped)."""
import sys
import time

import numpy as np

from vibsplat.densify import ControlConfig
from vibsplat.losses import psnr
from vibsplat.rasterizer import render
from vibsplat.synthetic import generate_synthetic, preset
from vibsplat.training import TrainConfig, init_state, make_options, train

scale = int(sys.argv[1]) if len(sys.argv) > 1 else 2
iters = int(sys.argv[2]) if len(sys.argv) > 2 else 1500

spec = preset("mover-1")
spec.width //= scale
spec.height //= scale
spec.focal /= scale
ds, oracle = generate_synthetic(spec, np.random.default_rng(0))
train_idx, test_idx = ds.split_every_fourth()


def run(tag, **kw):
    cfg = TrainConfig(
        total_iters=iters, dtype="float32", seed=0, scene_radius=8.0,
        sky_resolution=64, init_lidar=1500, init_near=300, init_far=200,
        coarse_start_downsample=4, coarse_step_iters=max(1, int(iters * 0.4)),
        control=ControlConfig(scene_radius=8.0, grad_threshold=0.12,
                              densify_start=300, interval_iters=100,
                              opacity_reset_iters=100000),
        **kw)
    t0 = time.time()
    state, _ = train(ds, cfg, state=init_state(ds, cfg))
    opts = make_options(cfg)
    scores = []
    for i in test_idx:
        out = render(state.points, state.cube, ds.frames[i], state.scene_cfg,
                     opts=opts, mode=cfg.dynamics_mode)
        scores.append(psnr(out.color, ds.frames[i].image))
    recon = []
    for i in train_idx[::4]:
        out = render(state.points, state.cube, ds.frames[i], state.scene_cfg,
                     opts=opts, mode=cfg.dynamics_mode)
        recon.append(psnr(out.color, ds.frames[i].image))
    print(f"{tag:12s} heldout {np.mean(scores):6.2f} dB  recon {np.mean(recon):6.2f} dB"
          f"  points {len(state.points)}  ({time.time()-t0:.0f}s)")
    return np.mean(scores)


pvg = run("vibration")
const = run("constant", dynamics_mode="constant")
linear = run("linear", dynamics_mode="linear")
eta1 = run("eta=1", eta=1.0)
print(f"\norderings: pvg-const {pvg-const:+.2f} dB, pvg-linear {pvg-linear:+.2f} dB, "
      f"pvg-eta1 {pvg-eta1:+.2f} dB")
