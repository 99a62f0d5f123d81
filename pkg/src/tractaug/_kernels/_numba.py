"""Numba-compiled twins of the kernels in ``_numpy.py``.

Loop and offset ordering mirror the numpy implementations exactly so both
backends return bit-identical arrays. Kernels are single-threaded on
purpose: results must not depend on worker count.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _mean_std_kernel(data, mean, std):
    nx, ny, nz = data.shape
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                total = 0.0
                total_sq = 0.0
                for dx in range(-1, 2):
                    cx = min(max(x + dx, 0), nx - 1)
                    for dy in range(-1, 2):
                        cy = min(max(y + dy, 0), ny - 1)
                        for dz in range(-1, 2):
                            cz = min(max(z + dz, 0), nz - 1)
                            v = data[cx, cy, cz]
                            total += v
                            total_sq += v * v
                m = total / 27.0
                var = total_sq / 27.0 - m * m
                if var < 0.0:
                    var = 0.0
                mean[x, y, z] = m
                std[x, y, z] = math.sqrt(var)


def neighborhood_mean_std(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    data = np.ascontiguousarray(data, dtype=np.float64)
    mean = np.empty_like(data)
    std = np.empty_like(data)
    _mean_std_kernel(data, mean, std)
    return mean, std


@njit(cache=True)
def _gradient_kernel(data, out):
    nx, ny, nz = data.shape
    for x in range(nx):
        xp = min(x + 1, nx - 1)
        xm = max(x - 1, 0)
        for y in range(ny):
            yp = min(y + 1, ny - 1)
            ym = max(y - 1, 0)
            for z in range(nz):
                zp = min(z + 1, nz - 1)
                zm = max(z - 1, 0)
                gx = (data[xp, y, z] - data[xm, y, z]) * 0.5
                gy = (data[x, yp, z] - data[x, ym, z]) * 0.5
                gz = (data[x, y, zp] - data[x, y, zm]) * 0.5
                out[x, y, z] = math.sqrt(gx * gx + gy * gy + gz * gz)


def gradient_magnitude(data: np.ndarray) -> np.ndarray:
    data = np.ascontiguousarray(data, dtype=np.float64)
    out = np.empty_like(data)
    _gradient_kernel(data, out)
    return out


@njit(cache=True)
def _tube_kernel(mask, points, radius):
    nx, ny, nz = mask.shape
    r2 = radius * radius
    for k in range(points.shape[0] - 1):
        ax, ay, az = points[k, 0], points[k, 1], points[k, 2]
        bx, by, bz = points[k + 1, 0], points[k + 1, 1], points[k + 1, 2]
        abx, aby, abz = bx - ax, by - ay, bz - az
        len2 = abx * abx + aby * aby + abz * abz
        lo_x = max(0, int(math.floor(min(ax, bx) - radius)))
        hi_x = min(nx - 1, int(math.ceil(max(ax, bx) + radius)))
        lo_y = max(0, int(math.floor(min(ay, by) - radius)))
        hi_y = min(ny - 1, int(math.ceil(max(ay, by) + radius)))
        lo_z = max(0, int(math.floor(min(az, bz) - radius)))
        hi_z = min(nz - 1, int(math.ceil(max(az, bz) + radius)))
        for x in range(lo_x, hi_x + 1):
            px = x - ax
            for y in range(lo_y, hi_y + 1):
                py = y - ay
                for z in range(lo_z, hi_z + 1):
                    pz = z - az
                    if len2 > 0.0:
                        t = (px * abx + py * aby + pz * abz) / len2
                        if t < 0.0:
                            t = 0.0
                        elif t > 1.0:
                            t = 1.0
                    else:
                        t = 0.0
                    dx = px - t * abx
                    dy = py - t * aby
                    dz = pz - t * abz
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 <= r2:
                        mask[x, y, z] = 1


def tube_mask(dims: tuple[int, int, int], points: np.ndarray, radius: float) -> np.ndarray:
    points = np.ascontiguousarray(points, dtype=np.float64)
    mask = np.zeros(dims, dtype=np.uint8)
    _tube_kernel(mask, points, float(radius))
    return mask
