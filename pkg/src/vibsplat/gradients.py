"""Analytic reverse-mode gradients through the render-plus-loss pipeline.

The backward pass re-traverses the recorded tiles, converts per-pixel loss
gradients into per-fragment gradients with the suffix-sum form of the
compositing derivative, and then chains through covariance projection,
covariance construction, the pinhole map, and the temporal point model.
An independent central-difference oracle lives alongside for verification.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import losses as losses_mod
from . import rasterizer
from .cameras import projection_jacobian, quat_to_rotation
from .errors import NonFiniteLoss
from .points import (PARAM_FIELDS, mean_displacement_factor,
                     mean_displacement_factor_dtau, sigmoid,
                     velocity_decay_factor)


@dataclass
class GradientBuffer:
    """Per-parameter gradients plus the densification statistics."""

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    tau: np.ndarray
    log_beta: np.ndarray
    vel: np.ndarray
    cube: np.ndarray
    pos_grad_norm: np.ndarray   # (N,) L2 norm of the screen-space positional gradient
    visible: np.ndarray         # (N,) bool, point survived culling this view

    @classmethod
    def zeros(cls, n_points, cube_resolution, dtype=np.float64):
        return cls(
            mu=np.zeros((n_points, 3), dtype=dtype),
            rot=np.zeros((n_points, 4), dtype=dtype),
            log_scale=np.zeros((n_points, 3), dtype=dtype),
            opacity_logit=np.zeros(n_points, dtype=dtype),
            color=np.zeros((n_points, 3), dtype=dtype),
            tau=np.zeros(n_points, dtype=dtype),
            log_beta=np.zeros(n_points, dtype=dtype),
            vel=np.zeros((n_points, 3), dtype=dtype),
            cube=np.zeros((6, cube_resolution, cube_resolution, 3), dtype=dtype),
            pos_grad_norm=np.zeros(n_points, dtype=dtype),
            visible=np.zeros(n_points, dtype=bool),
        )

    def params(self):
        return {k: getattr(self, k) for k in PARAM_FIELDS}

    def all_finite(self):
        for k in PARAM_FIELDS:
            if not np.all(np.isfinite(getattr(self, k))):
                return False
        return bool(np.all(np.isfinite(self.cube)))


def _quat_rotation_grad(g_R, q_unit):
    """Pull a rotation-matrix gradient back to the unit quaternion; (K, 4)."""
    w, x, y, z = q_unit[:, 0], q_unit[:, 1], q_unit[:, 2], q_unit[:, 3]
    zero = np.zeros_like(w)

    def contract(rows):
        d = np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)  # (K, 3, 3)
        return 2.0 * np.einsum("kij,kij->k", g_R, d)

    gw = contract([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    gx = contract([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    gy = contract([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    gz = contract([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])
    return np.stack([gw, gx, gy, gz], axis=-1)


def backward(graph, output, pixel_grads, cube):
    """Gradients of a scalar loss w.r.t. every point parameter and sky texel.

    ``pixel_grads`` maps channel name -> dL/d(channel) for the rendered
    color (sky composited), opacity, normalized depth, and velocity maps,
    as produced by :func:`vibsplat.losses.evaluate_losses`.
    """
    if graph.points is None or graph.static:
        raise ValueError("backward requires a graph recorded from the temporal render path")
    points = graph.points
    opts = graph.opts
    frame = graph.frame
    intr = frame.intrinsics
    Wmat = frame.extrinsics.rotation
    keep = graph.keep
    K = keep.size

    buf = GradientBuffer.zeros(len(points), cube.resolution, dtype=np.float64)
    if K == 0:
        # Sky-only image: cube still learns through (1 - O) = 1.
        g_final = np.asarray(pixel_grads["color"], dtype=np.float64)
        cube.scatter_gradient(graph.sky_taps, g_final, out=buf.cube)
        return buf

    g_final = np.asarray(pixel_grads["color"], dtype=np.float64)
    gO = np.asarray(pixel_grads["opacity"], dtype=np.float64).copy()
    gD = np.asarray(pixel_grads["depth"], dtype=np.float64)
    gV = np.asarray(pixel_grads["velocity"], dtype=np.float64)

    # Sky blend: final = C + (1 - O) * sky.
    sky = np.asarray(output.sky, dtype=np.float64)
    gC = g_final
    gO += np.einsum("hwc,hwc->hw", g_final, -sky)
    cube.scatter_gradient(graph.sky_taps,
                          (1.0 - output.opacity)[..., None] * g_final, out=buf.cube)

    # Depth normalization: depth = dsum / O where O > 0.
    O = np.asarray(output.opacity, dtype=np.float64)
    pos = O > 0.0
    safe_O = np.where(pos, O, 1.0)
    gdsum = np.where(pos, gD / safe_O, 0.0)
    gO += np.where(pos, -gD * np.asarray(output.depth, np.float64) / safe_O, 0.0)

    # -- compositing backward: compiled back-to-front re-walk --------------------
    tile = opts.tile_size
    H, Wpx = intr.height, intr.width
    ntx = -(-Wpx // tile)

    g_alpha0 = np.zeros(K)
    g_px = np.zeros((K, 2))
    g_inv = np.zeros((K, 3))
    g_z = np.zeros(K)
    g_color = np.zeros((K, 3))
    g_vcam = np.zeros((K, 3))

    bounds = np.append(graph.tile_starts, graph.tile_ids.size).astype(np.int64)
    if graph.frag_ids.size:
        _kernels.composite_backward(
            np.ascontiguousarray(graph.px, dtype=np.float64),
            np.ascontiguousarray(graph.z, dtype=np.float64),
            np.ascontiguousarray(graph.inv_cov[:, 0], dtype=np.float64),
            np.ascontiguousarray(graph.inv_cov[:, 1], dtype=np.float64),
            np.ascontiguousarray(graph.inv_cov[:, 2], dtype=np.float64),
            np.ascontiguousarray(graph.alpha0, dtype=np.float64),
            np.ascontiguousarray(graph.colors, dtype=np.float64),
            np.ascontiguousarray(graph.vel_cam, dtype=np.float64),
            graph.frag_ids.astype(np.int64), bounds,
            graph.unique_tiles.astype(np.int64), ntx, H, Wpx, tile,
            float(opts.alpha_clamp), float(opts.termination),
            np.ascontiguousarray(gC, dtype=np.float64),
            np.ascontiguousarray(gO, dtype=np.float64),
            np.ascontiguousarray(gdsum, dtype=np.float64),
            np.ascontiguousarray(gV, dtype=np.float64),
            g_alpha0, g_px, g_inv, g_z, g_color, g_vcam)

    # Densification statistic: norm of the screen-space positional gradient.
    buf.pos_grad_norm[keep] = np.linalg.norm(g_px, axis=1)
    buf.visible[keep] = True

    # -- covariance and projection backward -------------------------------------
    x_cam = graph.x_cam.astype(np.float64)
    cov2d = graph.cov2d.astype(np.float64)
    cov3 = graph.cov3.astype(np.float64)

    inv_cov = graph.inv_cov.astype(np.float64)
    inv_mat = np.empty((K, 2, 2))
    inv_mat[:, 0, 0] = inv_cov[:, 0]
    inv_mat[:, 0, 1] = inv_mat[:, 1, 0] = inv_cov[:, 1]
    inv_mat[:, 1, 1] = inv_cov[:, 2]
    G = np.empty((K, 2, 2))
    G[:, 0, 0] = g_inv[:, 0]
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * g_inv[:, 1]
    G[:, 1, 1] = g_inv[:, 2]
    g_cov2d = -np.einsum("kij,kjl,klm->kim", inv_mat, G, inv_mat)

    J = projection_jacobian(x_cam, intr)
    cov_cam = np.einsum("ij,kjl,ml->kim", Wmat, cov3, Wmat)
    g_cov_cam = np.einsum("kji,kjl,klm->kim", J, g_cov2d, J)
    g_J = 2.0 * np.einsum("kij,kjl,klm->kim", g_cov2d, J, cov_cam)
    g_cov3 = np.einsum("ji,kjl,lm->kim", Wmat, g_cov_cam, Wmat)

    xc, yc, zc = x_cam[:, 0], x_cam[:, 1], x_cam[:, 2]
    fx, fy = intr.fx, intr.fy
    inv_z2 = 1.0 / (zc * zc)
    g_x = g_J[:, 0, 2] * (-fx * inv_z2)
    g_y = g_J[:, 1, 2] * (-fy * inv_z2)
    g_zc = (g_J[:, 0, 0] * (-fx * inv_z2) + g_J[:, 1, 1] * (-fy * inv_z2)
            + g_J[:, 0, 2] * (2.0 * fx * xc * inv_z2 / zc)
            + g_J[:, 1, 2] * (2.0 * fy * yc * inv_z2 / zc))

    # Pinhole mean projection and the raw depth channel.
    g_x += g_px[:, 0] * (fx / zc)
    g_zc += g_px[:, 0] * (-fx * xc * inv_z2)
    g_y += g_px[:, 1] * (fy / zc)
    g_zc += g_px[:, 1] * (-fy * yc * inv_z2)
    g_zc += g_z
    g_center = np.stack([g_x, g_y, g_zc], axis=-1) @ Wmat

    # Covariance construction: cov3 = R diag(s^2) R^T.
    q_raw = points.rot[keep].astype(np.float64)
    norm = np.linalg.norm(q_raw, axis=1, keepdims=True)
    q_unit = q_raw / norm
    R = quat_to_rotation(q_unit)
    s = np.exp(points.log_scale[keep].astype(np.float64))
    D = s * s
    sym = g_cov3 + np.swapaxes(g_cov3, 1, 2)
    g_R = np.einsum("kij,kjl,kl->kil", sym, R, D)
    g_D = np.einsum("kji,kjl,kli->ki", R, g_cov3, R)
    g_log_scale = 2.0 * D * g_D

    g_q_unit = _quat_rotation_grad(g_R, q_unit)
    g_q = (g_q_unit - np.sum(g_q_unit * q_unit, axis=1, keepdims=True) * q_unit) / norm

    # Velocity channel back to world coordinates.
    g_avg_vel = g_vcam.astype(np.float64) @ Wmat

    # -- temporal model ----------------------------------------------------------
    sub = points.select(keep)
    t_eval = graph.t - graph.dt
    f = mean_displacement_factor(sub, t_eval, graph.scene_cfg, graph.mode)
    df_dtau = mean_displacement_factor_dtau(sub, t_eval, graph.scene_cfg, graph.mode)
    decay_fac = velocity_decay_factor(sub, graph.scene_cfg, graph.mode)

    g_avg_total = g_avg_vel + (g_center * graph.dt if graph.dt != 0.0 else 0.0)
    g_mu = g_center
    g_vel = g_center * f[:, None] + g_avg_total * decay_fac[:, None]
    g_tau = np.einsum("ki,ki->k", g_center, sub.vel) * df_dtau
    if graph.mode == "vibration":
        g_beta_lin = np.einsum("ki,ki->k", g_avg_total, sub.vel) \
            * (-decay_fac / (2.0 * graph.scene_cfg.cycle_length))
    else:
        g_beta_lin = np.zeros(K)

    # Opacity: alpha0 = sigmoid(o) * exp(-0.5 dd^2 / beta^2).
    g_a0 = g_alpha0.astype(np.float64)
    sig = sigmoid(sub.opacity_logit)
    beta = sub.beta
    dd = t_eval - sub.tau
    decay = np.exp(-0.5 * dd * dd / (beta * beta))
    g_logit = g_a0 * decay * sig * (1.0 - sig)
    g_tau += g_a0 * sig * decay * dd / (beta * beta)
    g_beta_lin += g_a0 * sig * decay * dd * dd / (beta ** 3)
    g_log_beta = g_beta_lin * beta

    buf.mu[keep] = g_mu
    buf.rot[keep] = g_q
    buf.log_scale[keep] = g_log_scale
    buf.opacity_logit[keep] = g_logit
    buf.color[keep] = g_color.astype(np.float64)
    buf.tau[keep] = g_tau
    buf.log_beta[keep] = g_log_beta
    buf.vel[keep] = g_vel
    return buf


# -- convenience wrappers -----------------------------------------------------------


def render_loss(points, cube, frame, cfg, weights, opts=None, dt=0.0,
                mode="vibration", use_ssim=True, grad_depth=True,
                grad_velocity=True, with_grads=False):
    """Forward render + all losses; optionally also the full gradient buffer."""
    opts = opts or rasterizer.RenderOptions()
    out, graph = rasterizer.render(points, cube, frame, cfg, opts=opts,
                                   dt=dt, mode=mode, with_graph=True)
    breakdown, pixel_grads = losses_mod.evaluate_losses(
        out, frame, weights, use_ssim=use_ssim,
        grad_depth=grad_depth, grad_velocity=grad_velocity)
    if not with_grads:
        return breakdown, out
    bad = [k for k, v in breakdown.items() if not np.isfinite(v)]
    if bad:
        raise NonFiniteLoss(f"non-finite loss terms {bad}: {breakdown}")
    buf = backward(graph, out, pixel_grads, cube)
    return breakdown, out, buf


def finite_difference(loss_fn, array, indices=None, step=1e-4):
    """Central-difference gradient of ``loss_fn()`` w.r.t. entries of ``array``.

    The array is perturbed in place and restored; ``indices`` (flat) limits
    the probe to a subset, with zeros reported elsewhere.
    """
    flat = array.reshape(-1)
    grad = np.zeros_like(flat, dtype=np.float64)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        orig = flat[i]
        flat[i] = orig + step
        hi = loss_fn()
        flat[i] = orig - step
        lo = loss_fn()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(array.shape)


def finite_difference_oracle(points, cube, frame, cfg, weights, param, step=1e-4,
                             opts=None, dt=0.0, mode="vibration", use_ssim=True,
                             indices=None):
    """Independent numeric gradient of the total loss for one parameter tensor.

    ``param`` names a point field (e.g. ``"mu"``) or ``"cube"``; requires the
    64-bit render mode for trustworthy differences.
    """
    opts = opts or rasterizer.RenderOptions()

    def value():
        breakdown, _ = render_loss(points, cube, frame, cfg, weights,
                                   opts=opts, dt=dt, mode=mode, use_ssim=use_ssim)
        return breakdown["total"]

    target = cube.texels if param == "cube" else getattr(points, param)
    return finite_difference(value, target, indices=indices, step=step)
