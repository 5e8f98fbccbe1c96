"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numpy as np


def check_points3d(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of points, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("point coordinates must be finite")
    return arr


def check_binary_mask(bits) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D mask, got shape {arr.shape}")
    return arr.astype(bool)


def check_tilt(tilt_deg: float) -> float:
    tilt = float(tilt_deg)
    if not 0.0 <= tilt < 90.0:
        raise ValueError(f"tilt must be in [0, 90), got {tilt}")
    return tilt


def check_aligned(a, b, what: str = "series") -> None:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"{what} lengths differ: {a.shape[0]} vs {b.shape[0]}")
    bad = np.flatnonzero(a != b)
    if len(bad):
        raise ValueError(f"{what} misaligned at row {int(bad[0])}: {a[bad[0]]} vs {b[bad[0]]}")
