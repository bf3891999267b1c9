"""Compiled inner loops of the tile rasterizer (single-threaded numba).

Both kernels walk the flat (tile, fragment) table produced by the binning
stage.  Compositing is sequential per pixel in the global sort order, so
results are bit-stable across runs; the backward kernel re-walks each pixel
back to front, reconstructing transmittance from the stored final value via
division by (1 - alpha), which is safe because alpha is clamped at 0.99.
Scalar accumulators are kept in double precision regardless of the buffer
dtype.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def composite_forward(px, z, inv_a, inv_b, inv_c, alpha0, color, vel,
                      frag_ids, bounds, unique_tiles, ntx, height, width,
                      tile, alpha_clamp, termination,
                      out_color, out_opac, out_dsum, out_vel, out_cnt):
    for ti in range(unique_tiles.shape[0]):
        tid = unique_tiles[ti]
        ty = tid // ntx
        tx = tid % ntx
        x0 = tx * tile
        y0 = ty * tile
        x1 = min(x0 + tile, width)
        y1 = min(y0 + tile, height)
        lo = bounds[ti]
        hi = bounds[ti + 1]
        for yy in range(y0, y1):
            vv = yy + 0.5
            for xx in range(x0, x1):
                uu = xx + 0.5
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                osum = 0.0
                dsum = 0.0
                v0 = 0.0
                v1 = 0.0
                v2 = 0.0
                cnt = 0
                for k in range(lo, hi):
                    if T < termination:
                        break
                    f = frag_ids[k]
                    dx = uu - px[f, 0]
                    dy = vv - px[f, 1]
                    power = -0.5 * (inv_a[f] * dx * dx
                                    + 2.0 * inv_b[f] * dx * dy
                                    + inv_c[f] * dy * dy)
                    alpha = alpha0[f] * np.exp(power)
                    if alpha > alpha_clamp:
                        alpha = alpha_clamp
                    w = T * alpha
                    if w > 0.0:
                        c0 += w * color[f, 0]
                        c1 += w * color[f, 1]
                        c2 += w * color[f, 2]
                        osum += w
                        dsum += w * z[f]
                        v0 += w * vel[f, 0]
                        v1 += w * vel[f, 1]
                        v2 += w * vel[f, 2]
                        cnt += 1
                    T *= 1.0 - alpha
                out_color[yy, xx, 0] = c0
                out_color[yy, xx, 1] = c1
                out_color[yy, xx, 2] = c2
                out_opac[yy, xx] = osum
                out_dsum[yy, xx] = dsum
                out_vel[yy, xx, 0] = v0
                out_vel[yy, xx, 1] = v1
                out_vel[yy, xx, 2] = v2
                out_cnt[yy, xx] = cnt


@njit(cache=True, fastmath=False)
def composite_backward(px, z, inv_a, inv_b, inv_c, alpha0, color, vel,
                       frag_ids, bounds, unique_tiles, ntx, height, width,
                       tile, alpha_clamp, termination,
                       g_color_px, g_opac_px, g_dsum_px, g_vel_px,
                       g_alpha0, g_px, g_inv, g_z, g_color, g_vel):
    max_run = 0
    for ti in range(unique_tiles.shape[0]):
        run = bounds[ti + 1] - bounds[ti]
        if run > max_run:
            max_run = run
    gw_scratch = np.empty(max_run)

    for ti in range(unique_tiles.shape[0]):
        tid = unique_tiles[ti]
        ty = tid // ntx
        tx = tid % ntx
        x0 = tx * tile
        y0 = ty * tile
        x1 = min(x0 + tile, width)
        y1 = min(y0 + tile, height)
        lo = bounds[ti]
        hi = bounds[ti + 1]
        for yy in range(y0, y1):
            vv = yy + 0.5
            for xx in range(x0, x1):
                uu = xx + 0.5
                gc0 = g_color_px[yy, xx, 0]
                gc1 = g_color_px[yy, xx, 1]
                gc2 = g_color_px[yy, xx, 2]
                go = g_opac_px[yy, xx]
                gd = g_dsum_px[yy, xx]
                gv0 = g_vel_px[yy, xx, 0]
                gv1 = g_vel_px[yy, xx, 1]
                gv2 = g_vel_px[yy, xx, 2]

                # Forward re-walk: cache Gaussian weights, find the live run.
                T = 1.0
                n_live = 0
                for k in range(lo, hi):
                    if T < termination:
                        break
                    f = frag_ids[k]
                    dx = uu - px[f, 0]
                    dy = vv - px[f, 1]
                    power = -0.5 * (inv_a[f] * dx * dx
                                    + 2.0 * inv_b[f] * dx * dy
                                    + inv_c[f] * dy * dy)
                    g = np.exp(power)
                    gw_scratch[k - lo] = g
                    alpha = alpha0[f] * g
                    if alpha > alpha_clamp:
                        alpha = alpha_clamp
                    T *= 1.0 - alpha
                    n_live += 1

                # Back-to-front: reconstruct transmittance, apply the chain rule.
                s_accum = 0.0
                for k in range(lo + n_live - 1, lo - 1, -1):
                    f = frag_ids[k]
                    g = gw_scratch[k - lo]
                    raw = alpha0[f] * g
                    alpha = raw if raw < alpha_clamp else alpha_clamp
                    T = T / (1.0 - alpha)
                    w = T * alpha
                    q = (gc0 * color[f, 0] + gc1 * color[f, 1] + gc2 * color[f, 2]
                         + go + gd * z[f]
                         + gv0 * vel[f, 0] + gv1 * vel[f, 1] + gv2 * vel[f, 2])
                    if raw < alpha_clamp:
                        g_alpha = T * q - s_accum / (1.0 - alpha)
                        g_alpha0[f] += g_alpha * g
                        gpow = g_alpha * alpha0[f] * g
                        dx = uu - px[f, 0]
                        dy = vv - px[f, 1]
                        g_px[f, 0] += gpow * (inv_a[f] * dx + inv_b[f] * dy)
                        g_px[f, 1] += gpow * (inv_b[f] * dx + inv_c[f] * dy)
                        g_inv[f, 0] += gpow * (-0.5 * dx * dx)
                        g_inv[f, 1] += gpow * (-dx * dy)
                        g_inv[f, 2] += gpow * (-0.5 * dy * dy)
                    s_accum += q * w
                    if w > 0.0:
                        g_z[f] += w * gd
                        g_color[f, 0] += w * gc0
                        g_color[f, 1] += w * gc1
                        g_color[f, 2] += w * gc2
                        g_vel[f, 0] += w * gv0
                        g_vel[f, 1] += w * gv1
                        g_vel[f, 2] += w * gv2
