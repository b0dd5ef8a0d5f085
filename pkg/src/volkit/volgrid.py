"""Dense 3D volumes, binary masks, and a minimal NIfTI-1 reader/writer.

Geometry is voxel-grid based: every grid carries physical voxel spacing in
millimeters but no orientation matrix. Orientation (qform/sform) is read and
discarded because none of the metrics downstream depend on it.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

# NIfTI-1 datatype codes for the dtypes we support.
_DTYPE_TO_CODE = {
    "uint8": (2, 8),
    "int16": (4, 16),
    "float32": (16, 32),
    "float64": (64, 64),
}
_CODE_TO_DTYPE = {code: name for name, (code, _) in _DTYPE_TO_CODE.items()}

_HEADER_SIZE = 348
_VOX_OFFSET = 352


class NiftiError(Exception):
    """Raised for malformed, unsupported, or truncated NIfTI-1 files."""


@dataclass(frozen=True)
class VolumeGrid:
    """A dense scalar field on a regular 3D grid with physical spacing.

    ``data`` is indexed ``[x, y, z]``; the serialized voxel order is
    x-fastest, matching the NIfTI on-disk layout.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"expected 3D data, got ndim={self.data.ndim}")
        if self.data.dtype.name not in _DTYPE_TO_CODE:
            raise ValueError(f"unsupported dtype {self.data.dtype.name}")
        if any(d < 1 for d in self.data.shape):
            raise ValueError(f"non-positive dims {self.data.shape}")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(not np.isfinite(s) or s <= 0 for s in sp):
            raise ValueError(f"spacing must be three positive finite values, got {self.spacing}")
        object.__setattr__(self, "spacing", sp)
        self.data.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def dtype_tag(self) -> str:
        return self.data.dtype.name

    def __eq__(self, other) -> bool:
        if not isinstance(other, VolumeGrid):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class BinaryMask:
    """A VolumeGrid whose voxels are exactly 0 or 1."""

    grid: VolumeGrid

    def __post_init__(self):
        vals = self.grid.data
        if not np.isin(vals, (0, 1)).all():
            raise ValueError("mask voxels must all be exactly 0 or 1")

    @property
    def data(self) -> np.ndarray:
        return self.grid.data

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.grid.dims

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.grid.spacing

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.data))


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_nifti(path) -> VolumeGrid:
    """Read a single-file NIfTI-1 volume (.nii or .nii.gz).

    Accepts 3D images and 4D images with a singleton 4th dimension; both
    endiannesses are handled (detected via dim[0]). scl_slope/scl_inter are
    applied when they describe a non-identity affine rescale, promoting the
    data to float64.
    """
    raw = _read_bytes(path)
    if len(raw) < _HEADER_SIZE:
        raise NiftiError(f"file too short for a NIfTI-1 header ({len(raw)} bytes)")

    # Endianness detection: dim[0] must land in [1, 7] under the right byte order.
    byte_order = "<"
    (dim0,) = struct.unpack_from("<h", raw, 40)
    if not 1 <= dim0 <= 7:
        byte_order = ">"
        (dim0,) = struct.unpack_from(">h", raw, 40)
        if not 1 <= dim0 <= 7:
            raise NiftiError("cannot determine byte order: dim[0] invalid in both orders")

    (sizeof_hdr,) = struct.unpack_from(byte_order + "i", raw, 0)
    if sizeof_hdr != _HEADER_SIZE:
        raise NiftiError(f"sizeof_hdr is {sizeof_hdr}, expected {_HEADER_SIZE}")
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise NiftiError(f"unsupported magic {magic!r}; only single-file 'n+1' accepted")

    dim = struct.unpack_from(byte_order + "8h", raw, 40)
    if dim[0] not in (3, 4):
        raise NiftiError(f"dim[0]={dim[0]}; only 3D (or squeezable 4D) images supported")
    if dim[0] == 4 and dim[4] > 1:
        raise NiftiError(f"4D image with dim[4]={dim[4]}; only singleton 4th dimension supported")
    nx, ny, nz = int(dim[1]), int(dim[2]), int(dim[3])
    if min(nx, ny, nz) < 1:
        raise NiftiError(f"non-positive image dims {(nx, ny, nz)}")

    (datatype,) = struct.unpack_from(byte_order + "h", raw, 70)
    if datatype not in _CODE_TO_DTYPE:
        raise NiftiError(f"unsupported datatype code {datatype}")
    dtype = np.dtype(_CODE_TO_DTYPE[datatype]).newbyteorder(byte_order)

    pixdim = struct.unpack_from(byte_order + "8f", raw, 76)
    spacing = tuple(abs(float(p)) for p in pixdim[1:4])
    (vox_offset,) = struct.unpack_from(byte_order + "f", raw, 108)
    slope, inter = struct.unpack_from(byte_order + "2f", raw, 112)

    offset = int(vox_offset)
    n_voxels = nx * ny * nz
    need = offset + n_voxels * dtype.itemsize
    if len(raw) < need:
        raise NiftiError(f"truncated payload: need {need} bytes, have {len(raw)}")

    flat = np.frombuffer(raw, dtype=dtype, count=n_voxels, offset=offset)
    data = flat.reshape((nx, ny, nz), order="F").astype(dtype.newbyteorder("="))
    if slope != 0.0 and (slope, inter) != (1.0, 0.0):
        data = data.astype(np.float64) * slope + inter
    return VolumeGrid(data=data, spacing=spacing)


def write_nifti(grid: VolumeGrid, path) -> None:
    """Write a single-file uncompressed little-endian NIfTI-1 volume.

    The emitted file round-trips bit-exactly through :func:`load_nifti`
    (scl_slope=1, scl_inter=0, vox_offset=352).
    """
    code, bitpix = _DTYPE_TO_CODE[grid.dtype_tag]
    nx, ny, nz = grid.dims

    header = bytearray(_HEADER_SIZE)
    struct.pack_into("<i", header, 0, _HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", header, 70, code, bitpix)
    struct.pack_into("<8f", header, 76, 1.0, *grid.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, float(_VOX_OFFSET))
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # scl_slope, scl_inter
    header[344:348] = b"n+1\x00"

    payload = np.asfortranarray(grid.data).astype("<" + grid.data.dtype.str[1:]).tobytes(order="F")
    with open(path, "wb") as f:
        f.write(bytes(header))
        f.write(b"\x00" * (_VOX_OFFSET - _HEADER_SIZE))  # no extensions
        f.write(payload)


def binarize(grid: VolumeGrid, threshold: float) -> BinaryMask:
    """Threshold a grid into a mask: voxel -> 1 iff value > threshold."""
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    data = (np.asarray(grid.data, dtype=np.float64) > threshold).astype(np.uint8)
    return BinaryMask(VolumeGrid(data=data, spacing=grid.spacing))


def mask_volume_ml(mask: BinaryMask) -> float:
    """Foreground volume in milliliters (voxel count x voxel volume / 1000)."""
    sx, sy, sz = mask.spacing
    return mask.foreground_count() * sx * sy * sz / 1000.0
