"""Minimal NIfTI-1 reader/writer for 3D volumes and binary masks.

Single-file NIfTI-1 only (.nii or .nii.gz), datatypes uint8, int16,
int32, float32, float64. The encoder is deterministic: fixed header
fields, little-endian output, Fortran-order voxel data, gzip mtime 0.
Both byte orders are accepted on read. The affine is taken from the
sform when sform_code > 0, from the qform quaternion when qform_code
> 0, and from a pixdim diagonal otherwise.
"""

from __future__ import annotations

import gzip
import io
import os
import zlib

import numpy as np

from .volume import BinaryMask3D, Geometry, Volume3D


class NiftiError(Exception):
    """Base class for NIfTI parse failures."""


class BadMagicError(NiftiError):
    """File is not a single-file NIfTI-1 image."""


class UnsupportedDatatypeError(NiftiError):
    pass


class Non3DImageError(NiftiError):
    pass


class TruncatedFileError(NiftiError):
    pass


_HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p1", "<f4"),
        ("intent_p2", "<f4"),
        ("intent_p3", "<f4"),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "i1"),
        ("xyzt_units", "i1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern_b", "<f4"),
        ("quatern_c", "<f4"),
        ("quatern_d", "<f4"),
        ("qoffset_x", "<f4"),
        ("qoffset_y", "<f4"),
        ("qoffset_z", "<f4"),
        ("srow_x", "<f4", (4,)),
        ("srow_y", "<f4", (4,)),
        ("srow_z", "<f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert _HEADER_DTYPE.itemsize == 348

_HEADER_SIZE = 348
_VOX_OFFSET = 352

_DTYPE_BY_CODE = {
    2: np.dtype("u1"),
    4: np.dtype("<i2"),
    8: np.dtype("<i4"),
    16: np.dtype("<f4"),
    64: np.dtype("<f8"),
}


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
        f.seek(0)
        if head == b"\x1f\x8b":
            try:
                with gzip.GzipFile(fileobj=f) as gz:
                    return gz.read()
            except (EOFError, zlib.error) as e:
                raise TruncatedFileError(
                    f"{path}: corrupt gzip stream ({e})"
                ) from e
        return f.read()


def _parse_header(buf: bytes, path):
    if len(buf) < _HEADER_SIZE:
        raise TruncatedFileError(
            f"{path}: {len(buf)} bytes, shorter than the 348-byte header"
        )
    hdr = np.frombuffer(buf, dtype=_HEADER_DTYPE, count=1)[0]
    if int(hdr["sizeof_hdr"]) != _HEADER_SIZE:
        swapped = np.frombuffer(
            buf, dtype=_HEADER_DTYPE.newbyteorder(">"), count=1
        )[0]
        if int(swapped["sizeof_hdr"]) != _HEADER_SIZE:
            raise BadMagicError(f"{path}: not a NIfTI-1 header")
        hdr = swapped
    magic = bytes(hdr["magic"])
    if magic != b"n+1":
        if magic == b"ni1":
            raise BadMagicError(
                f"{path}: two-file (.hdr/.img) NIfTI is not supported"
            )
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    return hdr


def _image_dims(hdr, path) -> tuple[int, int, int]:
    dim = hdr["dim"]
    ndim = int(dim[0])
    if not 1 <= ndim <= 7:
        raise BadMagicError(f"{path}: corrupt dim[0]={ndim}")
    if ndim < 3:
        raise Non3DImageError(f"{path}: image is {ndim}D, expected 3D")
    extra = [int(d) for d in dim[4 : ndim + 1]]
    if any(d > 1 for d in extra):
        raise Non3DImageError(
            f"{path}: image is {ndim}D with non-singleton trailing dims"
        )
    dims = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in dims):
        raise Non3DImageError(f"{path}: degenerate dims {dims}")
    return dims


def _affine_from_header(hdr, spacing):
    if int(hdr["sform_code"]) > 0:
        aff = np.eye(4)
        aff[0] = np.asarray(hdr["srow_x"], dtype=np.float64)
        aff[1] = np.asarray(hdr["srow_y"], dtype=np.float64)
        aff[2] = np.asarray(hdr["srow_z"], dtype=np.float64)
        return aff
    if int(hdr["qform_code"]) > 0:
        b = float(hdr["quatern_b"])
        c = float(hdr["quatern_c"])
        d = float(hdr["quatern_d"])
        a = np.sqrt(max(0.0, 1.0 - b * b - c * c - d * d))
        rot = np.array(
            [
                [
                    a * a + b * b - c * c - d * d,
                    2 * (b * c - a * d),
                    2 * (b * d + a * c),
                ],
                [
                    2 * (b * c + a * d),
                    a * a + c * c - b * b - d * d,
                    2 * (c * d - a * b),
                ],
                [
                    2 * (b * d - a * c),
                    2 * (c * d + a * b),
                    a * a + d * d - b * b - c * c,
                ],
            ]
        )
        qfac = -1.0 if float(hdr["pixdim"][0]) < 0 else 1.0
        aff = np.eye(4)
        aff[:3, 0] = rot[:, 0] * spacing[0]
        aff[:3, 1] = rot[:, 1] * spacing[1]
        aff[:3, 2] = rot[:, 2] * spacing[2] * qfac
        aff[:3, 3] = [
            float(hdr["qoffset_x"]),
            float(hdr["qoffset_y"]),
            float(hdr["qoffset_z"]),
        ]
        return aff
    return np.diag([spacing[0], spacing[1], spacing[2], 1.0])


def _read_array(path):
    """Parse a file into (raw ndarray with scaling applied, Geometry)."""
    buf = _read_bytes(path)
    hdr = _parse_header(buf, path)
    dims = _image_dims(hdr, path)

    code = int(hdr["datatype"])
    if code not in _DTYPE_BY_CODE:
        raise UnsupportedDatatypeError(
            f"{path}: datatype code {code} not supported"
        )
    dtype = _DTYPE_BY_CODE[code]
    if not hdr.dtype.isnative:
        dtype = dtype.newbyteorder(">")

    offset = int(hdr["vox_offset"])
    if offset < _HEADER_SIZE:
        raise BadMagicError(f"{path}: invalid vox_offset {offset}")
    count = dims[0] * dims[1] * dims[2]
    need = offset + count * dtype.itemsize
    if len(buf) < need:
        raise TruncatedFileError(
            f"{path}: need {need} bytes for voxel data, have {len(buf)}"
        )
    flat = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    data = flat.reshape(dims, order="F")

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if slope == 0.0:
        slope = 1.0
    if slope != 1.0 or inter != 0.0:
        data = data.astype(np.float64) * slope + inter

    raw_spacing = [float(s) for s in hdr["pixdim"][1:4]]
    spacing = tuple(abs(s) if s != 0.0 else 1.0 for s in raw_spacing)
    geometry = Geometry(
        dims=dims, spacing=spacing, affine=_affine_from_header(hdr, spacing)
    )
    return data, geometry


def read_volume(path) -> Volume3D:
    data, geometry = _read_array(path)
    return Volume3D(geometry, np.asarray(data, dtype=np.float32))


def read_mask(path) -> BinaryMask3D:
    data, geometry = _read_array(path)
    values = np.unique(np.asarray(data))
    if not np.isin(values, (0, 1)).all():
        raise ValueError(
            f"{path}: mask values must be 0/1, found {values[:8]}"
        )
    return BinaryMask3D(geometry, np.asarray(data, dtype=np.uint8))


def _encode(data: np.ndarray, geometry: Geometry, code: int) -> bytes:
    hdr = np.zeros((), dtype=_HEADER_DTYPE)
    hdr["sizeof_hdr"] = _HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *geometry.dims, 1, 1, 1, 1]
    hdr["datatype"] = code
    hdr["bitpix"] = 8 * data.dtype.itemsize
    hdr["pixdim"] = [1.0, *geometry.spacing, 0.0, 0.0, 0.0, 0.0]
    hdr["vox_offset"] = float(_VOX_OFFSET)
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["sform_code"] = 1
    hdr["srow_x"] = geometry.affine[0]
    hdr["srow_y"] = geometry.affine[1]
    hdr["srow_z"] = geometry.affine[2]
    hdr["magic"] = b"n+1"
    # 4 zero bytes: no header extensions
    return hdr.tobytes() + b"\x00" * 4 + data.tobytes(order="F")


def write_volume(x: Volume3D | BinaryMask3D, path) -> None:
    """Write a volume (float32) or mask (uint8) as single-file NIfTI-1."""
    if isinstance(x, BinaryMask3D):
        payload = _encode(x.data.astype("u1"), x.geometry, code=2)
    elif isinstance(x, Volume3D):
        payload = _encode(x.data.astype("<f4"), x.geometry, code=16)
    else:
        raise TypeError(f"expected Volume3D or BinaryMask3D, got {type(x)}")
    path = os.fspath(path)
    if path.endswith(".gz"):
        buf = io.BytesIO()
        with gzip.GzipFile(
            fileobj=buf, mode="wb", compresslevel=6, mtime=0
        ) as gz:
            gz.write(payload)
        payload = buf.getvalue()
    with open(path, "wb") as f:
        f.write(payload)


write_mask = write_volume
