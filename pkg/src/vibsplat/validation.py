"""Small input-validation helpers used at module boundaries.

These mirror the style of scikit-learn's ``check_array``: normalize dtype,
verify shape and finiteness, and raise early with a parameter name in the
message instead of letting bad inputs surface as shape errors deep inside
the renderer.
"""

import numpy as np

from .errors import BadPose, DimMismatch


def check_array(value, name, shape=None, dtype=np.float64, finite=True):
    """Coerce ``value`` to an ndarray and validate its shape.

    ``shape`` entries set to ``None`` act as wildcards, e.g. ``(None, 3)``
    accepts any number of rows with exactly three columns.
    """
    arr = np.asarray(value, dtype=dtype)
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(f"{name}: expected {len(shape)} dims, got shape {arr.shape}")
        for axis, want in enumerate(shape):
            if want is not None and arr.shape[axis] != want:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    if finite and arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_positive(value, name):
    value = float(value)
    if not value > 0.0:
        raise ValueError(f"{name}: must be > 0, got {value}")
    return value


def check_unit_interval(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name}: must lie in [0, 1], got {value}")
    return value


def check_rotation(matrix, name="rotation", atol=1e-6):
    """Validate a 3x3 world-to-camera rotation: orthonormal, det +1."""
    R = check_array(matrix, name, shape=(3, 3))
    if not np.allclose(R.T @ R, np.eye(3), atol=atol):
        raise BadPose(f"{name}: not orthonormal within {atol}")
    if np.linalg.det(R) < 0.0:
        raise BadPose(f"{name}: improper rotation (det < 0)")
    return R


def check_same_shape(a, b, name_a="pred", name_b="target"):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimMismatch(f"{name_a} {a.shape} vs {name_b} {b.shape}")
    return a, b
