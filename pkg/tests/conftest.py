import struct
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from volkit.volgrid import BinaryMask, VolumeGrid


def make_mask(data, spacing=(1.0, 1.0, 1.0)) -> BinaryMask:
    arr = np.asarray(data, dtype=np.uint8)
    return BinaryMask(VolumeGrid(data=arr, spacing=spacing))


def random_mask(rng, dims, spacing=(1.0, 1.0, 1.0), p=None) -> BinaryMask:
    if p is None:
        p = rng.uniform(0.2, 0.8)
    data = (rng.random(dims) < p).astype(np.uint8)
    return make_mask(data, spacing)


def random_nonempty_mask(rng, dims, spacing=(1.0, 1.0, 1.0)) -> BinaryMask:
    while True:
        m = random_mask(rng, dims, spacing)
        if m.foreground_count() > 0:
            return m


def build_nifti1_bytes(data, spacing, byte_order="<"):
    """Assemble a single-file NIfTI-1 byte stream directly from the format
    layout (348-byte header, 4 pad bytes, voxels x-fastest). Independent of
    the package writer; used as the third-party-file oracle."""
    data = np.asarray(data)
    code = {"uint8": 2, "int16": 4, "float32": 16, "float64": 64}[data.dtype.name]
    bitpix = data.dtype.itemsize * 8
    nx, ny, nz = data.shape

    header = bytearray(348)
    struct.pack_into(byte_order + "i", header, 0, 348)
    struct.pack_into(byte_order + "8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into(byte_order + "2h", header, 70, code, bitpix)
    struct.pack_into(byte_order + "8f", header, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into(byte_order + "f", header, 108, 352.0)
    struct.pack_into(byte_order + "2f", header, 112, 1.0, 0.0)
    header[344:348] = b"n+1\x00"

    voxels = bytearray()
    pack_char = {2: "B", 4: "h", 16: "f", 64: "d"}[code]
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                voxels += struct.pack(byte_order + pack_char, data[x, y, z])
    return bytes(header) + b"\x00" * 4 + bytes(voxels)
