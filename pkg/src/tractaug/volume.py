"""3D volume, binary-mask, and multi-channel label containers.

Conventions shared by the whole package:

* arrays have shape ``dims = (R_x, R_y, R_z)`` and are indexed ``[x, y, z]``;
* the canonical byte serialization (used for hashing, equality, and file
  I/O) is x-fastest, i.e. ``tobytes(order="F")``, independent of the
  in-memory layout;
* scalar volumes are float32, masks are uint8 with values in {0, 1};
* all containers are immutable after construction, so they can be shared
  freely across worker processes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BinaryMask3D",
    "Geometry",
    "GeometryMismatchError",
    "TractLabelMap",
    "Volume3D",
    "content_hash",
    "mask_union",
    "voxelwise_mask_apply",
]


class GeometryMismatchError(ValueError):
    """Raised when an operation receives containers on different grids."""


def _require_same_geometry(a, b, op: str) -> None:
    if a.geometry != b.geometry:
        raise GeometryMismatchError(
            f"{op}: geometries differ ({a.geometry.dims} vs {b.geometry.dims})"
        )


@dataclass(frozen=True)
class Geometry:
    """Voxel grid metadata: dimensions, spacing (mm), and voxel-to-world affine."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three positive reals, got {self.spacing}")
        if self.affine is None:
            affine = np.diag((*spacing, 1.0))
        else:
            affine = np.array(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got shape {affine.shape}")
        if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise ValueError("affine upper-left 3x3 block is singular")
        affine.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def voxel_count(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Geometry):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and np.array_equal(self.affine, other.affine)
        )

    def __hash__(self) -> int:
        return hash((self.dims, self.spacing, self.affine.tobytes()))

    def _canonical_bytes(self) -> bytes:
        return (
            np.asarray(self.dims, dtype="<i8").tobytes()
            + np.asarray(self.spacing, dtype="<f8").tobytes()
            + self.affine.astype("<f8").tobytes(order="C")
        )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Volume3D:
    """A scalar 3D image: float32 values on a :class:`Geometry` grid."""

    geometry: Geometry
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.shape != self.geometry.dims:
            raise ValueError(
                f"data shape {data.shape} does not match dims {self.geometry.dims}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        object.__setattr__(self, "data", _freeze(data.copy()))

    def canonical_bytes(self) -> bytes:
        return self.data.astype("<f4").tobytes(order="F")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Volume3D):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.data, other.data)

    def __hash__(self) -> int:
        return content_hash(self)


@dataclass(frozen=True)
class BinaryMask3D:
    """A binary 3D mask: uint8 {0, 1} values on a :class:`Geometry` grid."""

    geometry: Geometry
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.shape != self.geometry.dims:
            raise ValueError(
                f"mask shape {raw.shape} does not match dims {self.geometry.dims}"
            )
        if raw.dtype == np.bool_:
            data = raw.astype(np.uint8)
        else:
            data = raw.astype(np.uint8, casting="unsafe")
            if not np.array_equal(data, raw):
                raise ValueError("mask values must be 0 or 1")
        if data.max(initial=0) > 1:
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", _freeze(data.copy()))

    def canonical_bytes(self) -> bytes:
        return self.data.tobytes(order="F")

    @property
    def voxel_count(self) -> int:
        """Number of set voxels."""
        return int(self.data.sum(dtype=np.int64))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask3D):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.data, other.data)

    def __hash__(self) -> int:
        return content_hash(self)


@dataclass(frozen=True)
class TractLabelMap:
    """Ordered, uniquely named binary channels on one grid (one per tract)."""

    geometry: Geometry
    channels: tuple[tuple[str, BinaryMask3D], ...]

    def __post_init__(self):
        channels = tuple((str(name), mask) for name, mask in self.channels)
        if len(channels) < 1:
            raise ValueError("label map needs at least one channel")
        names = [name for name, _ in channels]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate tract names: {names}")
        for name, mask in channels:
            if mask.geometry != self.geometry:
                raise GeometryMismatchError(
                    f"channel {name!r}: geometry differs from label map geometry"
                )
        object.__setattr__(self, "channels", channels)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.channels)

    @property
    def masks(self) -> tuple[BinaryMask3D, ...]:
        return tuple(mask for _, mask in self.channels)

    def __len__(self) -> int:
        return len(self.channels)

    def mask(self, name: str) -> BinaryMask3D:
        for channel_name, channel_mask in self.channels:
            if channel_name == name:
                return channel_mask
        raise KeyError(name)

    def select(self, names) -> "TractLabelMap":
        """Sub-map with the given channels, in the order requested."""
        return TractLabelMap(self.geometry, tuple((n, self.mask(n)) for n in names))

    def stacked(self) -> np.ndarray:
        """Channel data stacked into a (N, R_x, R_y, R_z) uint8 array."""
        return np.stack([mask.data for _, mask in self.channels])

    @classmethod
    def from_arrays(cls, geometry: Geometry, named_arrays) -> "TractLabelMap":
        return cls(
            geometry,
            tuple((name, BinaryMask3D(geometry, arr)) for name, arr in named_arrays),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, TractLabelMap):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.names == other.names
            and all(a == b for a, b in zip(self.masks, other.masks))
        )

    def __hash__(self) -> int:
        return content_hash(self)


def voxelwise_mask_apply(x: Volume3D, m: BinaryMask3D) -> Volume3D:
    """Zero out the masked region: output equals ``x`` where ``m`` is 0.

    Unmasked voxels are preserved bit-exactly; masked voxels become 0.0.
    """
    _require_same_geometry(x, m, "voxelwise_mask_apply")
    out = np.where(m.data.astype(bool), np.float32(0.0), x.data)
    return Volume3D(x.geometry, out)


def mask_union(masks) -> BinaryMask3D:
    """Voxelwise OR of one or more masks on the same grid."""
    masks = list(masks)
    if not masks:
        raise ValueError("mask_union needs at least one mask")
    first = masks[0]
    acc = first.data.copy()
    for other in masks[1:]:
        _require_same_geometry(first, other, "mask_union")
        np.bitwise_or(acc, other.data, out=acc)
    return BinaryMask3D(first.geometry, acc)


_TYPE_TAGS = {Volume3D: b"VOL1", BinaryMask3D: b"MSK1", TractLabelMap: b"LBL1"}


def content_hash(x) -> int:
    """64-bit digest of the canonical serialization of a container.

    Deterministic across platforms and in-memory layouts; equal content
    implies equal hash, and distinct content collides only with
    probability ~2**-64.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(_TYPE_TAGS[type(x)])
    h.update(x.geometry._canonical_bytes())
    if isinstance(x, TractLabelMap):
        for name, mask in x.channels:
            encoded = name.encode("utf-8")
            h.update(len(encoded).to_bytes(4, "little"))
            h.update(encoded)
            h.update(mask.canonical_bytes())
    else:
        h.update(x.canonical_bytes())
    return int.from_bytes(h.digest(), "little")
