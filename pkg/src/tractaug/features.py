"""Per-voxel feature extraction feeding the voxelwise segmenter.

Seven features per voxel: raw intensity, mean and standard deviation
over the 3x3x3 neighborhood (edge-clamped), gradient magnitude from
central differences, and the normalized (x, y, z) coordinates. Rows are
the volume's voxels flattened in C order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import gradient_magnitude, neighborhood_mean_std
from .volume import Volume3D

FEATURE_NAMES = (
    "intensity",
    "local_mean",
    "local_std",
    "gradient_magnitude",
    "coord_x",
    "coord_y",
    "coord_z",
)


@dataclass(frozen=True)
class FeatureConfig:
    names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        unknown = [n for n in self.names if n not in FEATURE_NAMES]
        if unknown:
            raise ValueError(f"unknown feature names: {unknown}")
        if not self.names:
            raise ValueError("at least one feature required")

    @property
    def count(self) -> int:
        return len(self.names)


def _normalized_coords(dims) -> list[np.ndarray]:
    grids = []
    for ax, dim in enumerate(dims):
        if dim > 1:
            axis_vals = np.arange(dim, dtype=np.float64) / (dim - 1)
        else:
            axis_vals = np.zeros(1)
        shape = [1, 1, 1]
        shape[ax] = dim
        grids.append(
            np.broadcast_to(axis_vals.reshape(shape), dims)
        )
    return grids


def extract_features(x: Volume3D) -> np.ndarray:
    """(voxel_count, 7) float64 feature matrix for one volume."""
    data = x.data.astype(np.float64)
    mean, std = neighborhood_mean_std(data)
    grad = gradient_magnitude(data)
    cx, cy, cz = _normalized_coords(x.geometry.dims)
    out = np.empty((x.geometry.voxel_count, len(FEATURE_NAMES)))
    for i, arr in enumerate((data, mean, std, grad, cx, cy, cz)):
        out[:, i] = arr.reshape(-1)
    return out
