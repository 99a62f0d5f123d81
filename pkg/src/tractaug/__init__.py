"""Volumetric cutout augmentation, one-shot transfer training, and ensembling."""

__version__ = "0.1.0"

from .volume import (
    BinaryMask3D,
    Geometry,
    GeometryMismatchError,
    TractLabelMap,
    Volume3D,
    content_hash,
    mask_union,
    voxelwise_mask_apply,
)

__all__ = [
    "BinaryMask3D",
    "Geometry",
    "GeometryMismatchError",
    "TractLabelMap",
    "Volume3D",
    "content_hash",
    "mask_union",
    "voxelwise_mask_apply",
    "__version__",
]
