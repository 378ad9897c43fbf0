"""Volumetric raster containers, NIfTI-1 subset file I/O, and slice rendering.

Volumes are axis-aligned 3D scalar grids of CT intensities in Hounsfield
Units; masks are integer label grids sharing the same geometry. File support
is deliberately a narrow NIfTI-1 subset: 3 spatial dimensions, int16 or
float32 data, optional gzip. Anything else is rejected loudly. Orientation
matrices beyond axis-aligned spacing are ignored; inputs are assumed
canonically oriented.
"""

from __future__ import annotations

import gzip
import io
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

# NIfTI-1 datatype codes accepted by this subset reader
_DT_INT16 = 4
_DT_FLOAT32 = 16

_HDR_SIZE = 348
_VOX_OFFSET = 352.0


@dataclass(frozen=True)
class Volume:
    """3D scalar grid of HU values with voxel spacing and origin in mm.

    values has shape (nx, ny, nz), dtype float32. Immutable by convention:
    the array is set read-only at construction.
    """

    values: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float32, copy=True)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"volume must be 3D with all dims >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("volume contains non-finite values")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing components must be > 0, got {self.spacing}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz


@dataclass(frozen=True)
class Mask:
    """3D non-negative integer label grid aligned with a Volume (0 = background)."""

    labels: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        m = np.asarray(self.labels)
        if not np.issubdtype(m.dtype, np.integer):
            raise ValueError(f"mask labels must be integers, got dtype {m.dtype}")
        m = m.astype(np.int32, copy=True)
        if m.ndim != 3 or min(m.shape) < 1:
            raise ValueError(f"mask must be 3D with all dims >= 1, got shape {m.shape}")
        if m.min() < 0:
            raise ValueError("mask labels must be non-negative")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing components must be > 0, got {self.spacing}")
        m.flags.writeable = False
        object.__setattr__(self, "labels", m)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz


@dataclass(frozen=True)
class WindowSpec:
    """HU display window (level +- width/2 maps to the 8-bit gray range)."""

    level: float = 40.0   # soft-tissue abdominal default
    width: float = 400.0

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError(f"window width must be > 0, got {self.width}")


@dataclass(frozen=True)
class Image2D:
    """8-bit grayscale slice plus its PNG encoding."""

    pixels: np.ndarray  # uint8, shape (height, width)
    png: bytes


def check_geometry(a: Volume | Mask, b: Volume | Mask) -> None:
    """Raise if the two grids do not share dims and spacing."""
    if a.dims != b.dims:
        raise ValueError(f"dims mismatch: {a.dims} vs {b.dims}")
    if not np.allclose(a.spacing, b.spacing, rtol=1e-6, atol=0):
        raise ValueError(f"spacing mismatch: {a.spacing} vs {b.spacing}")


# ---------------------------------------------------------------------------
# NIfTI-1 subset I/O
# ---------------------------------------------------------------------------

def _read_raw(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_header(raw: bytes, path):
    if len(raw) < _HDR_SIZE:
        raise ValueError(f"{path}: file too short for a NIfTI-1 header")
    for order in ("<", ">"):
        (sizeof_hdr,) = struct.unpack(order + "i", raw[:4])
        if sizeof_hdr == _HDR_SIZE:
            break
    else:
        raise ValueError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise ValueError(f"{path}: not a NIfTI-1 file (bad magic {magic!r})")
    dim = struct.unpack(order + "8h", raw[40:56])
    (datatype, bitpix) = struct.unpack(order + "2h", raw[70:74])
    pixdim = struct.unpack(order + "8f", raw[76:108])
    (vox_offset,) = struct.unpack(order + "f", raw[108:112])
    (scl_slope, scl_inter) = struct.unpack(order + "2f", raw[112:120])
    (sform_code,) = struct.unpack(order + "h", raw[254:256])
    qoffset = struct.unpack(order + "3f", raw[268:280])
    srow = struct.unpack(order + "12f", raw[280:328])
    if dim[0] != 3:
        raise ValueError(f"{path}: only 3D volumes supported, got dim[0]={dim[0]}")
    if datatype == _DT_INT16:
        dtype = np.dtype(order + "i2")
    elif datatype == _DT_FLOAT32:
        dtype = np.dtype(order + "f4")
    else:
        raise ValueError(f"{path}: unsupported NIfTI datatype {datatype} (need int16 or float32)")
    nx, ny, nz = int(dim[1]), int(dim[2]), int(dim[3])
    if min(nx, ny, nz) < 1:
        raise ValueError(f"{path}: non-positive dimensions {(nx, ny, nz)}")
    spacing = tuple(abs(float(p)) for p in pixdim[1:4])
    if any(s <= 0 for s in spacing):
        raise ValueError(f"{path}: non-positive voxel spacing {spacing}")
    if sform_code > 0:
        origin = (float(srow[3]), float(srow[7]), float(srow[11]))
    else:
        origin = tuple(float(q) for q in qoffset)
    slope = float(scl_slope) if (scl_slope != 0.0 and np.isfinite(scl_slope)) else 1.0
    inter = float(scl_inter) if np.isfinite(scl_inter) else 0.0
    return (nx, ny, nz), dtype, spacing, origin, int(vox_offset), slope, inter


def read_volume(path) -> Volume:
    """Read a NIfTI-1 (.nii / .nii.gz) file into a Volume.

    Scale slope/intercept from the header are applied so values are HU.
    """
    raw = _read_raw(path)
    dims, dtype, spacing, origin, offset, slope, inter = _parse_header(raw, path)
    n = dims[0] * dims[1] * dims[2]
    data = np.frombuffer(raw, dtype=dtype, count=n, offset=offset)
    arr = data.reshape(dims, order="F").astype(np.float32)
    if slope != 1.0 or inter != 0.0:
        arr = arr * np.float32(slope) + np.float32(inter)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: non-finite values after applying scale slope/intercept")
    return Volume(values=arr, spacing=spacing, origin=origin)


def read_mask(path) -> Mask:
    """Read a NIfTI-1 file as an integer label mask."""
    v = read_volume(path)
    labels = np.rint(v.values).astype(np.int32)
    if not np.allclose(v.values, labels, atol=1e-3):
        raise ValueError(f"{path}: mask file contains non-integer values")
    return Mask(labels=labels, spacing=v.spacing, origin=v.origin)


def _build_header(dims, spacing, origin, datatype, bitpix) -> bytes:
    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, datatype, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, spacing[0], spacing[1], spacing[2], 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, _VOX_OFFSET)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<2h", hdr, 252, 0, 1)      # qform_code, sform_code
    struct.pack_into("<4f", hdr, 280, spacing[0], 0, 0, origin[0])  # srow_x
    struct.pack_into("<4f", hdr, 296, 0, spacing[1], 0, origin[1])  # srow_y
    struct.pack_into("<4f", hdr, 312, 0, 0, spacing[2], origin[2])  # srow_z
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + b"\x00\x00\x00\x00"  # no header extensions


def _write_raw(path, payload: bytes) -> None:
    path = str(path)
    if path.endswith(".gz"):
        # fixed mtime so identical volumes produce identical bytes
        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
            gz.write(payload)
        payload = buf.getvalue()
    with open(path, "wb") as f:
        f.write(payload)


def write_volume(v: Volume, path) -> None:
    """Write a Volume as float32 NIfTI-1 (.nii or .nii.gz by extension)."""
    hdr = _build_header(v.dims, v.spacing, v.origin, _DT_FLOAT32, 32)
    data = v.values.astype("<f4").tobytes(order="F")
    _write_raw(path, hdr + data)


def write_mask(m: Mask, path) -> None:
    """Write a Mask as int16 NIfTI-1."""
    if m.labels.max(initial=0) > np.iinfo(np.int16).max:
        raise ValueError("mask labels exceed int16 range")
    hdr = _build_header(m.dims, m.spacing, m.origin, _DT_INT16, 16)
    data = m.labels.astype("<i2").tobytes(order="F")
    _write_raw(path, hdr + data)


# ---------------------------------------------------------------------------
# Slice rendering
# ---------------------------------------------------------------------------

_AXES = {"x": 0, "y": 1, "z": 2}


def render_slice(v: Volume, axis: str, index: int, w: WindowSpec | None = None) -> Image2D:
    """Render one slice as an 8-bit windowed grayscale image.

    pixel = clamp(round(255 * (HU - (level - width/2)) / width), 0, 255),
    rounding half up. Monotone non-decreasing in HU for a fixed window.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    w = w or WindowSpec()
    ax = _AXES[axis]
    if not 0 <= index < v.dims[ax]:
        raise IndexError(f"slice index {index} out of bounds for axis {axis} (size {v.dims[ax]})")
    sl = np.take(v.values, index, axis=ax)
    lo = w.level - w.width / 2.0
    scaled = 255.0 * (sl.astype(np.float64) - lo) / w.width
    pixels = np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
    # rows = second in-plane axis so the png is width-by-height in volume order
    pixels = pixels.T
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="L").save(buf, format="PNG")
    return Image2D(pixels=pixels, png=buf.getvalue())
