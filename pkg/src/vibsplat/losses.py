"""Training losses, their pixel-space gradients, and evaluation metrics.

Every loss returns both its value and the exact gradient with respect to
the rendered channel it supervises, so the renderer's backward pass can
consume plain per-pixel gradient maps.  SSIM uses an 11x11 Gaussian window
(sigma 1.5) evaluated only where the window fits ("valid" windows), which
keeps the constant-image closed form exact.
"""

from dataclasses import dataclass

import numpy as np

from .validation import check_same_shape

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 99.0
_LOG_CLAMP = 1e-6
_DEPTH_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 0.2    # SSIM share of the photometric term
    lambda_d: float = 0.1    # inverse-depth supervision
    lambda_o: float = 0.05   # opacity entropy / sky mask
    lambda_v: float = 0.01   # velocity-map sparsity

    def __post_init__(self):
        if not 0.0 <= self.lambda_r <= 1.0:
            raise ValueError("lambda_r must lie in [0, 1]")
        for name in ("lambda_d", "lambda_o", "lambda_v"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")


# -- photometric ------------------------------------------------------------------


def l1_loss(pred, gt):
    """Mean absolute difference over all pixels and channels, with gradient."""
    pred, gt = check_same_shape(pred, gt)
    diff = pred - gt
    n = diff.size
    value = float(np.abs(diff).sum() / n)
    return value, np.sign(diff) / n


def _gauss_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _corr_valid_axis(a, kernel, axis):
    n = kernel.size
    length = a.shape[axis] - n + 1
    out = np.zeros(a.shape[:axis] + (length,) + a.shape[axis + 1:], dtype=a.dtype)
    sl = [slice(None)] * a.ndim
    for i in range(n):
        sl[axis] = slice(i, i + length)
        out += kernel[i] * a[tuple(sl)]
    return out


def _corr_valid_adjoint_axis(g, kernel, full_len, axis):
    n = kernel.size
    length = g.shape[axis]
    out = np.zeros(g.shape[:axis] + (full_len,) + g.shape[axis + 1:], dtype=g.dtype)
    sl = [slice(None)] * g.ndim
    for i in range(n):
        sl[axis] = slice(i, i + length)
        out[tuple(sl)] += kernel[i] * g
    return out


def window_filter(img):
    """Valid-mode separable Gaussian filtering of (H, W) or (H, W, C)."""
    k = _gauss_kernel()
    return _corr_valid_axis(_corr_valid_axis(np.asarray(img, dtype=np.float64), k, 0), k, 1)


def window_filter_adjoint(g, height, width):
    """Exact adjoint of :func:`window_filter` back to an (height, width, ...) grid."""
    k = _gauss_kernel()
    return _corr_valid_adjoint_axis(_corr_valid_adjoint_axis(np.asarray(g), k, width, 1), k, height, 0)


def _ssim_terms(x, y):
    mx = window_filter(x)
    my = window_filter(y)
    sxx = window_filter(x * x) - mx * mx
    syy = window_filter(y * y) - my * my
    sxy = window_filter(x * y) - mx * my
    a1 = 2.0 * mx * my + SSIM_C1
    a2 = 2.0 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    return mx, my, a1, a2, b1, b2


def ssim_map(pred, gt):
    """Per-window SSIM values; shape (H-10, W-10[, C])."""
    pred, gt = check_same_shape(pred, gt)
    if pred.shape[0] < SSIM_WINDOW or pred.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    _, _, a1, a2, b1, b2 = _ssim_terms(np.asarray(pred, dtype=np.float64),
                                       np.asarray(gt, dtype=np.float64))
    return (a1 * a2) / (b1 * b2)


def ssim_metric(pred, gt):
    return float(np.mean(ssim_map(pred, gt)))


def ssim_loss(pred, gt):
    """1 - mean SSIM, with the analytic gradient w.r.t. ``pred``."""
    pred, gt = check_same_shape(pred, gt)
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    mx, my, a1, a2, b1, b2 = _ssim_terms(x, y)
    s = (a1 * a2) / (b1 * b2)
    n = s.size

    # Partials of the SSIM map w.r.t. its windowed statistics.
    ds_dmx = 2.0 * my * a2 / (b1 * b2) - 2.0 * mx * s / b1
    ds_dsxx = -s / b2
    ds_dsxy = 2.0 * a1 / (b1 * b2)

    # sxx and sxy were formed from raw correlations minus products of means.
    g_mu = ds_dmx + ds_dsxx * (-2.0 * mx) + ds_dsxy * (-my)
    h, w = x.shape[0], x.shape[1]
    dmean = (window_filter_adjoint(g_mu, h, w)
             + 2.0 * x * window_filter_adjoint(ds_dsxx, h, w)
             + y * window_filter_adjoint(ds_dsxy, h, w)) / n
    return float(1.0 - s.mean()), -dmean


# -- geometric / regularization ----------------------------------------------------


def depth_loss(depth, opacity, sparse_inv_depth):
    """Sparse inverse-depth L1 on confidently covered pixels.

    Supervision applies where a depth sample exists and accumulated opacity
    exceeds 0.5; the sum is still normalized by the full pixel count.
    """
    depth, sparse_inv_depth = check_same_shape(depth, sparse_inv_depth, "depth", "sparse_inv_depth")
    hw = depth.shape[0] * depth.shape[1]
    gate = (sparse_inv_depth > 0.0) & (opacity > 0.5)
    inv = 1.0 / np.maximum(depth, _DEPTH_EPS)
    resid = np.where(gate, sparse_inv_depth - inv, 0.0)
    value = float(np.abs(resid).sum() / hw)
    # d|Ds - 1/depth| / d depth = sign(Ds - 1/depth) / depth^2
    grad = np.where(gate & (depth > _DEPTH_EPS),
                    np.sign(resid) / np.maximum(depth, _DEPTH_EPS) ** 2, 0.0) / hw
    return value, grad


def opacity_loss(opacity, sky_mask=None):
    """Entropy push toward 0/1 plus a transparency prior on sky pixels."""
    o = np.asarray(opacity, dtype=np.float64)
    hw = o.shape[0] * o.shape[1]
    oc = np.clip(o, _LOG_CLAMP, 1.0 - _LOG_CLAMP)
    in_band = (o > _LOG_CLAMP) & (o < 1.0 - _LOG_CLAMP)
    log_o = np.log(oc)
    log_1mo = np.log(1.0 - oc)

    value = float(-(o * log_o).sum() / hw)
    grad = -(log_o + np.where(in_band, o / oc, 0.0)) / hw
    if sky_mask is not None:
        m = np.asarray(sky_mask, dtype=np.float64)
        value += float(-(m * log_1mo).sum() / hw)
        grad = grad + np.where(in_band, m / (1.0 - oc), 0.0) / hw
    return value, grad


def velocity_loss(velocity):
    """L1 sparsity of the rendered velocity map, summed over channels."""
    v = np.asarray(velocity, dtype=np.float64)
    hw = v.shape[0] * v.shape[1]
    return float(np.abs(v).sum() / hw), np.sign(v) / hw


def total_loss(l1, ssim, depth, opac, vel, weights):
    """Weighted combination; returns (total, per-term breakdown)."""
    total = ((1.0 - weights.lambda_r) * l1 + weights.lambda_r * ssim
             + weights.lambda_d * depth + weights.lambda_o * opac
             + weights.lambda_v * vel)
    return total, {"l1": l1, "ssim": ssim, "depth": depth,
                   "opacity": opac, "velocity": vel, "total": total}


def evaluate_losses(output, frame, weights, use_ssim=True,
                    grad_depth=True, grad_velocity=True):
    """All loss terms against one frame's supervision, plus pixel gradients.

    Returns (breakdown dict, pixel-gradient dict) where the gradients cover
    the rendered color / opacity / depth / velocity channels.  ``use_ssim``
    is switched off by the trainer when the coarse level is smaller than the
    SSIM window.
    """
    gcolor = np.zeros_like(output.color)
    gopac = np.zeros_like(output.opacity)
    gdepth = np.zeros_like(output.depth)
    gvel = np.zeros_like(output.velocity)

    l1_v, l1_g = l1_loss(output.color, frame.image)
    gcolor += (1.0 - weights.lambda_r) * l1_g
    if use_ssim and weights.lambda_r > 0.0:
        ss_v, ss_g = ssim_loss(output.color, frame.image)
        gcolor += weights.lambda_r * ss_g
    else:
        ss_v = 0.0

    if frame.sparse_inv_depth is not None and weights.lambda_d > 0.0:
        d_v, d_g = depth_loss(output.depth, output.opacity, frame.sparse_inv_depth)
        if grad_depth:
            gdepth += weights.lambda_d * d_g
    else:
        d_v = 0.0

    o_v, o_g = opacity_loss(output.opacity, frame.sky_mask)
    gopac += weights.lambda_o * o_g

    v_v, v_g = velocity_loss(output.velocity)
    if grad_velocity:
        gvel += weights.lambda_v * v_g

    _, breakdown = total_loss(l1_v, ss_v, d_v, o_v, v_v, weights)
    grads = {"color": gcolor, "opacity": gopac, "depth": gdepth, "velocity": gvel}
    return breakdown, grads


# -- metrics ---------------------------------------------------------------------


def psnr(pred, gt):
    """Peak signal-to-noise ratio in dB for [0, 1] images; capped at 99."""
    pred, gt = check_same_shape(pred, gt)
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - gt) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def format_metric_report(records):
    """Structured text: one ``frame id  psnr  ssim`` line plus an aggregate."""
    lines = ["# frame  psnr_db  ssim"]
    for frame_id, p, s in records:
        lines.append(f"{frame_id}  {p:.4f}  {s:.6f}")
    if records:
        mp = np.mean([r[1] for r in records])
        ms = np.mean([r[2] for r in records])
        lines.append(f"mean  {mp:.4f}  {ms:.6f}")
    return "\n".join(lines) + "\n"
