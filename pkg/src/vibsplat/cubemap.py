"""Learnable environment cube map used as the sky background.

Directions are looked up on the dominant-axis face and sampled bilinearly
with clamp-to-edge taps; the same taps drive the texel gradient scatter in
the backward pass.
"""

import numpy as np

from .validation import check_array

# Face order: +x, -x, +y, -y, +z, -z (OpenGL convention).
_FACE_AXES = (
    (0, +1), (0, -1), (1, +1), (1, -1), (2, +1), (2, -1),
)


class CubeMap:
    def __init__(self, texels):
        texels = check_array(texels, "texels", dtype=np.float64)
        if texels.ndim != 4 or texels.shape[0] != 6 or texels.shape[3] != 3 \
                or texels.shape[1] != texels.shape[2]:
            raise ValueError(f"texels: expected (6, F, F, 3), got {texels.shape}")
        F = texels.shape[1]
        if F <= 0 or (F & (F - 1)) != 0:
            raise ValueError(f"face resolution must be a power of two, got {F}")
        self.texels = texels

    @property
    def resolution(self):
        return self.texels.shape[1]

    @classmethod
    def constant(cls, resolution, value=0.5):
        face = np.full((6, resolution, resolution, 3), 0.0) + np.asarray(value, dtype=np.float64)
        return cls(face)

    def copy(self):
        return CubeMap(self.texels.copy())

    def astype(self, dtype):
        return CubeMap(self.texels.astype(dtype))

    def taps(self, dirs):
        """Bilinear tap layout for unit directions of shape (..., 3).

        Returns (face, ix0, iy0, fx, fy) arrays broadcast over the leading
        shape; corner texels are (ix0, iy0) .. (ix0+1, iy0+1) clamped to the
        face, blended with fractions (fx, fy).
        """
        d = np.asarray(dirs, dtype=np.float64)
        flat = d.reshape(-1, 3)
        ax, ay, az = np.abs(flat[:, 0]), np.abs(flat[:, 1]), np.abs(flat[:, 2])

        face = np.where(ax >= ay, np.where(ax >= az, 0, 4), np.where(ay >= az, 2, 4))
        major = np.choose(face // 2, [flat[:, 0], flat[:, 1], flat[:, 2]])
        face = face + (major < 0)
        ma = np.maximum(np.abs(major), 1e-12)

        # Per-face (s, t) coordinates; signs follow the OpenGL cube layout.
        x, y, z = flat[:, 0], flat[:, 1], flat[:, 2]
        sc = np.select(
            [face == 0, face == 1, face == 2, face == 3, face == 4, face == 5],
            [-z, z, x, x, x, -x])
        tc = np.select(
            [face == 0, face == 1, face == 2, face == 3, face == 4, face == 5],
            [-y, -y, z, -z, -y, -y])
        u = 0.5 * (sc / ma + 1.0)
        v = 0.5 * (tc / ma + 1.0)

        F = self.resolution
        fx_pos = u * F - 0.5
        fy_pos = v * F - 0.5
        ix0 = np.floor(fx_pos).astype(np.int64)
        iy0 = np.floor(fy_pos).astype(np.int64)
        fx = fx_pos - ix0
        fy = fy_pos - iy0

        lead = d.shape[:-1]
        return (face.reshape(lead), ix0.reshape(lead), iy0.reshape(lead),
                fx.reshape(lead), fy.reshape(lead))

    def sample(self, dirs, taps=None):
        """Bilinear color lookup for unit directions (..., 3) -> (..., 3)."""
        if taps is None:
            taps = self.taps(dirs)
        face, ix0, iy0, fx, fy = (t.reshape(-1) for t in taps)
        F = self.resolution
        x0 = np.clip(ix0, 0, F - 1)
        x1 = np.clip(ix0 + 1, 0, F - 1)
        y0 = np.clip(iy0, 0, F - 1)
        y1 = np.clip(iy0 + 1, 0, F - 1)
        t = self.texels
        c = ((1 - fx) * (1 - fy))[:, None] * t[face, y0, x0] \
            + (fx * (1 - fy))[:, None] * t[face, y0, x1] \
            + ((1 - fx) * fy)[:, None] * t[face, y1, x0] \
            + (fx * fy)[:, None] * t[face, y1, x1]
        lead = np.asarray(dirs).shape[:-1]
        return c.reshape(lead + (3,))

    def scatter_gradient(self, taps, grad_color, out=None):
        """Accumulate d(loss)/d(texels) given per-sample color gradients.

        ``taps`` comes from :meth:`taps` on the same directions; ``grad_color``
        has shape (..., 3) matching the tap leading shape.
        """
        face, ix0, iy0, fx, fy = (t.reshape(-1) for t in taps)
        g = np.asarray(grad_color).reshape(-1, 3)
        F = self.resolution
        if out is None:
            out = np.zeros_like(self.texels)
        x0 = np.clip(ix0, 0, F - 1)
        x1 = np.clip(ix0 + 1, 0, F - 1)
        y0 = np.clip(iy0, 0, F - 1)
        y1 = np.clip(iy0 + 1, 0, F - 1)
        np.add.at(out, (face, y0, x0), ((1 - fx) * (1 - fy))[:, None] * g)
        np.add.at(out, (face, y0, x1), (fx * (1 - fy))[:, None] * g)
        np.add.at(out, (face, y1, x0), ((1 - fx) * fy)[:, None] * g)
        np.add.at(out, (face, y1, x1), (fx * fy)[:, None] * g)
        return out


def sample_cubemap(cube, direction):
    """Single-direction lookup; ``direction`` must be unit length."""
    d = check_array(direction, "direction", shape=(3,))
    n = np.linalg.norm(d)
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"direction: expected unit norm, got {n}")
    return cube.sample(d[None])[0]
