"""Calibration probe 2: scene-design sweep for ablation orderings (not shipped)."""
import itertools
import sys
import time

import numpy as np

from vibsplat.densify import ControlConfig
from vibsplat.losses import psnr
from vibsplat.rasterizer import render
from vibsplat.synthetic import MoverSpec, generate_synthetic, preset
from vibsplat.training import TrainConfig, init_state, make_options, train

scale = 2
iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1500


def build_scene(speed, z, radius, n_seed, lam_v):
    spec = preset("mover-1")
    spec.width //= scale
    spec.height //= scale
    spec.focal /= scale
    x0 = -speed * 0.78 / 2.0
    spec.movers = [MoverSpec(center=(x0, -1.3, z), velocity=(speed, 0.0, 0.0),
                             radius=radius, color=(0.95, 0.15, 0.1),
                             n_points=14, sigma=radius / 2.8)]
    spec.lidar_mover_per_frame = n_seed
    ds, oracle = generate_synthetic(spec, np.random.default_rng(0))
    return ds, oracle


def run(ds, tag, lam_v=0.01, **kw):
    from vibsplat.losses import LossWeights
    cfg = TrainConfig(
        total_iters=iters, dtype="float32", seed=0, scene_radius=8.0,
        sky_resolution=64, init_lidar=1500, init_near=300, init_far=200,
        coarse_start_downsample=4, coarse_step_iters=max(1, int(iters * 0.4)),
        weights=LossWeights(lambda_v=lam_v),
        control=ControlConfig(scene_radius=8.0, grad_threshold=0.12,
                              densify_start=300, interval_iters=100,
                              opacity_reset_iters=100000),
        **kw)
    state, _ = train(ds, cfg, state=init_state(ds, cfg))
    opts = make_options(cfg)
    train_idx, test_idx = ds.split_every_fourth()
    scores = []
    for i in test_idx:
        out = render(state.points, state.cube, ds.frames[i], state.scene_cfg,
                     opts=opts, mode=cfg.dynamics_mode)
        scores.append(psnr(out.color, ds.frames[i].image))
    return np.mean(scores), state


for (speed, z, radius, n_seed) in [(14.0, 6.5, 0.4, 3), (18.0, 6.5, 0.45, 3),
                                   (14.0, 6.5, 0.4, 8)]:
    ds, oracle = build_scene(speed, z, radius, n_seed, 0.01)
    t0 = time.time()
    pvg, st = run(ds, "pvg")
    const, _ = run(ds, "const", dynamics_mode="constant")
    linear, _ = run(ds, "linear", dynamics_mode="linear")
    eta1, _ = run(ds, "eta1", eta=1.0)
    from vibsplat.points import staticness
    rho = staticness(st.points, st.scene_cfg)
    inside = oracle.inside_any_mover(st.points.mu, st.points.tau, margin=2.0)
    print(f"speed={speed} z={z} r={radius} seeds={n_seed}: "
          f"pvg {pvg:.2f} const {const:.2f} lin {linear:.2f} eta1 {eta1:.2f} | "
          f"d_const {pvg-const:+.2f} d_lin {pvg-linear:+.2f} d_eta {pvg-eta1:+.2f} | "
          f"mover rho med {np.median(rho[inside]):.2f} ({time.time()-t0:.0f}s)", flush=True)
