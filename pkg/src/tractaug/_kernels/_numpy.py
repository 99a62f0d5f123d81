"""Pure-numpy reference implementations of the hot kernels.

Each function accumulates in exactly the same operation order as its numba
twin in ``_numba.py``, so the two backends produce bit-identical results.
Keep the loop/offset ordering in sync when editing either file.
"""

from __future__ import annotations

import math

import numpy as np

_OFFSETS = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]


def neighborhood_mean_std(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel mean and standard deviation over the 3x3x3 neighborhood.

    Out-of-bounds neighbors are clamped to the nearest edge voxel.
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    nx, ny, nz = data.shape
    padded = np.pad(data, 1, mode="edge")
    total = np.zeros_like(data)
    total_sq = np.zeros_like(data)
    for dx, dy, dz in _OFFSETS:
        window = padded[1 + dx : 1 + dx + nx, 1 + dy : 1 + dy + ny, 1 + dz : 1 + dz + nz]
        total += window
        total_sq += window * window
    mean = total / 27.0
    var = total_sq / 27.0 - mean * mean
    np.maximum(var, 0.0, out=var)
    return mean, np.sqrt(var)


def gradient_magnitude(data: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude with edge-clamped neighbors."""
    data = np.ascontiguousarray(data, dtype=np.float64)
    padded = np.pad(data, 1, mode="edge")
    gx = (padded[2:, 1:-1, 1:-1] - padded[:-2, 1:-1, 1:-1]) * 0.5
    gy = (padded[1:-1, 2:, 1:-1] - padded[1:-1, :-2, 1:-1]) * 0.5
    gz = (padded[1:-1, 1:-1, 2:] - padded[1:-1, 1:-1, :-2]) * 0.5
    return np.sqrt(gx * gx + gy * gy + gz * gz)


def tube_mask(dims: tuple[int, int, int], points: np.ndarray, radius: float) -> np.ndarray:
    """Rasterize a polyline dilated by ``radius`` into a uint8 mask.

    A voxel is set when its center lies within ``radius`` of any segment.
    Work is confined to each segment's bounding box, so cost scales with
    tube volume rather than grid volume.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    mask = np.zeros(dims, dtype=np.uint8)
    r2 = float(radius) * float(radius)
    for k in range(points.shape[0] - 1):
        ax, ay, az = points[k]
        bx, by, bz = points[k + 1]
        abx, aby, abz = bx - ax, by - ay, bz - az
        len2 = abx * abx + aby * aby + abz * abz
        lo = [0, 0, 0]
        hi = [0, 0, 0]
        for i, (a_i, b_i) in enumerate([(ax, bx), (ay, by), (az, bz)]):
            lo[i] = max(0, int(math.floor(min(a_i, b_i) - radius)))
            hi[i] = min(dims[i] - 1, int(math.ceil(max(a_i, b_i) + radius)))
        if lo[0] > hi[0] or lo[1] > hi[1] or lo[2] > hi[2]:
            continue
        xs = np.arange(lo[0], hi[0] + 1, dtype=np.float64)[:, None, None]
        ys = np.arange(lo[1], hi[1] + 1, dtype=np.float64)[None, :, None]
        zs = np.arange(lo[2], hi[2] + 1, dtype=np.float64)[None, None, :]
        px, py, pz = xs - ax, ys - ay, zs - az
        if len2 > 0.0:
            t = np.clip((px * abx + py * aby + pz * abz) / len2, 0.0, 1.0)
        else:
            t = np.zeros((xs.size, ys.size, zs.size))
        dx = px - t * abx
        dy = py - t * aby
        dz = pz - t * abz
        d2 = dx * dx + dy * dy + dz * dz
        view = mask[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1]
        view |= (d2 <= r2).astype(np.uint8)
    return mask
