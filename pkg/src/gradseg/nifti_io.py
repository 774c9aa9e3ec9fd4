"""NIfTI-1 single-file reader/writer and the in-memory volume types.

Axis convention (used by every module in the package): voxel arrays have
shape ``(nx, ny, nz)`` and are indexed ``data[i, j, k]`` where ``i`` runs
along the first NIfTI axis (the fastest-varying one on disk). ``spacing`` is
``(sx, sy, sz)`` in mm in the same order. When a *linear index* is needed
(e.g. to order connected components) it is the C-order index
``(i * ny + j) * nz + k``, i.e. ``np.ravel_multi_index`` on the array shape.

Only ``.nii`` / ``.nii.gz`` single files with datatypes uint8, int16, int32,
float32 and float64 are accepted. Files may be big- or little-endian; the
writer emits little-endian unless asked otherwise.
"""

from __future__ import annotations

import gzip
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .errors import (
    CorruptHeader,
    DataTruncated,
    NiftiError,
    UnsupportedDatatype,
    ValueOverflow,
    WrongMagic,
)

HEADER_SIZE = 348
WRITE_VOX_OFFSET = 352

DT_UINT8 = 2
DT_INT16 = 4
DT_INT32 = 8
DT_FLOAT32 = 16
DT_FLOAT64 = 64

# datatype code -> (numpy kind, bitpix)
DATATYPES = {
    DT_UINT8: ("u1", 8),
    DT_INT16: ("i2", 16),
    DT_INT32: ("i4", 32),
    DT_FLOAT32: ("f4", 32),
    DT_FLOAT64: ("f8", 64),
}

_HEADER_FMT = "i10s18sihbb8h3f4h8f3fhbb2f2f2i80s24s2h6f4f4f4f16s4s"
_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"


class NonFiniteValue(ValueOverflow):
    """NaN or infinity where only finite values are allowed."""


def _as_spacing(spacing) -> tuple[float, float, float]:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3:
        raise ValueError(f"spacing must have 3 components, got {len(sp)}")
    if not all(np.isfinite(s) and s > 0 for s in sp):
        raise ValueError(f"spacing components must be finite and > 0, got {sp}")
    return sp


def _default_affine(spacing) -> np.ndarray:
    aff = np.zeros((3, 4))
    aff[0, 0], aff[1, 1], aff[2, 2] = spacing
    return aff


def _check_affine(affine, spacing) -> np.ndarray:
    if affine is None:
        return _default_affine(spacing)
    aff = np.array(affine, dtype=np.float64)
    if aff.shape == (4, 4):
        aff = aff[:3]
    if aff.shape != (3, 4):
        raise ValueError(f"affine must be 3x4 (or 4x4), got {aff.shape}")
    return aff


@dataclass(eq=False)
class Volume3:
    """Dense scalar volume; ``data`` is float64 of shape ``(nx, ny, nz)``."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be 3D with extents >= 1, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise NonFiniteValue("volume contains NaN or infinite values", field="data")
        self.data = data
        self.spacing = _as_spacing(self.spacing)
        self.affine = _check_affine(self.affine, self.spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def with_data(self, data) -> "Volume3":
        return Volume3(data, self.spacing, self.affine.copy())


@dataclass(eq=False)
class LabelMask3:
    """Integer label grid (0 background, 1 GTVp, 2 GTVn); ``data`` is uint8."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"mask data must be 3D with extents >= 1, got shape {data.shape}")
        if data.dtype != np.uint8:
            if data.dtype == bool:
                data = data.astype(np.uint8)
            else:
                if data.size and (data.min() < 0 or data.max() > 255 or not np.all(data == np.round(data))):
                    raise ValueOverflow("mask labels must be integers in 0..255", field="data")
                data = data.astype(np.uint8)
        self.data = data
        self.spacing = _as_spacing(self.spacing)
        self.affine = _check_affine(self.affine, self.spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def binary(self, label: int) -> np.ndarray:
        return self.data == label

    def with_data(self, data) -> "LabelMask3":
        return LabelMask3(data, self.spacing, self.affine.copy())


def same_geometry(a, b, atol: float = 1e-6) -> bool:
    return a.shape == b.shape and np.allclose(a.spacing, b.spacing, rtol=0, atol=atol)


@dataclass
class NiftiHeader:
    sizeof_hdr: int
    dim: tuple
    datatype_code: int
    bitpix: int
    pixdim: tuple
    vox_offset: float
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    quatern: tuple  # (b, c, d)
    qoffset: tuple  # (x, y, z)
    srow_x: tuple
    srow_y: tuple
    srow_z: tuple
    magic: bytes
    xyzt_units: int = 0
    descrip: bytes = b""
    byteorder: str = "<"
    raw_fields: dict = field(default_factory=dict, repr=False)

    @property
    def swapped(self) -> bool:
        """True when the file's byte order differs from little-endian."""
        return self.byteorder == ">"

    @property
    def shape(self) -> tuple:
        n = self.dim[0]
        return tuple(int(x) for x in self.dim[1 : n + 1])

    @property
    def spacing(self) -> tuple[float, float, float]:
        n = self.dim[0]
        # axes beyond the declared rank have unit spacing by construction
        # shortest decimal that round-trips the stored float32: 1.2 reads back as 1.2
        return tuple(float(str(np.float32(self.pixdim[a]))) if a <= n else 1.0 for a in (1, 2, 3))

    @property
    def numpy_dtype(self) -> np.dtype:
        return np.dtype(DATATYPES[self.datatype_code][0]).newbyteorder(self.byteorder)

    def affine(self) -> np.ndarray:
        """3x4 placement: sform if present, else qform, else diag(pixdim)."""
        if self.sform_code > 0:
            return np.array([self.srow_x, self.srow_y, self.srow_z], dtype=np.float64)
        if self.qform_code > 0:
            return _qform_affine(self.quatern, self.qoffset, self.pixdim)
        return _default_affine(self.spacing)


def _qform_affine(quatern, qoffset, pixdim) -> np.ndarray:
    b, c, d = (float(x) for x in quatern)
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 1e-7 else 0.0
    if a == 0.0:
        norm = np.sqrt(b * b + c * c + d * d)
        b, c, d = b / norm, c / norm, d / norm
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    zooms = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac], dtype=np.float64)
    out = np.zeros((3, 4))
    out[:, :3] = rot * zooms
    out[:, 3] = qoffset
    return out


def _detect_byteorder(buf: bytes) -> str:
    if struct.unpack("<i", buf[:4])[0] == HEADER_SIZE:
        return "<"
    if struct.unpack(">i", buf[:4])[0] == HEADER_SIZE:
        return ">"
    raise CorruptHeader(
        f"sizeof_hdr is {struct.unpack('<i', buf[:4])[0]} (expected {HEADER_SIZE} in either byte order)",
        field="sizeof_hdr",
    )


def parse_header(buf: bytes) -> NiftiHeader:
    """Decode and validate a 348-byte NIfTI-1 header."""
    if len(buf) != HEADER_SIZE:
        raise CorruptHeader(f"header buffer is {len(buf)} bytes, expected {HEADER_SIZE}", field="sizeof_hdr")
    order = _detect_byteorder(buf)
    f = struct.unpack(order + _HEADER_FMT, buf)
    sizeof_hdr = f[0]
    dim = tuple(f[7:15])
    intent = f[15:18]
    intent_code, datatype, bitpix, slice_start = f[18:22]
    pixdim = tuple(f[22:30])
    vox_offset, scl_slope, scl_inter = f[30:33]
    xyzt_units = f[35]
    descrip = f[42]
    qform_code, sform_code = f[44:46]
    quatern = tuple(f[46:49])
    qoffset = tuple(f[49:52])
    srow_x, srow_y, srow_z = tuple(f[52:56]), tuple(f[56:60]), tuple(f[60:64])
    magic = f[65]

    if magic == _MAGIC_PAIR:
        raise WrongMagic("detached .hdr/.img pairs ('ni1') are not supported", field="magic")
    if magic != _MAGIC_SINGLE:
        raise WrongMagic(f"expected b'n+1\\x00', got {magic!r}", field="magic")
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(
            f"datatype code {datatype} not in {{uint8=2, int16=4, int32=8, float32=16, float64=64}}",
            field="datatype",
        )
    if bitpix != DATATYPES[datatype][1]:
        raise CorruptHeader(f"bitpix {bitpix} inconsistent with datatype {datatype}", field="bitpix")
    if not 1 <= dim[0] <= 7:
        raise CorruptHeader(f"dim[0] = {dim[0]} outside 1..7", field="dim")
    if any(x < 1 for x in dim[1 : dim[0] + 1]):
        raise CorruptHeader(f"extents {dim[1:dim[0] + 1]} must all be >= 1", field="dim")
    for a in range(1, min(dim[0], 3) + 1):
        if not (np.isfinite(pixdim[a]) and pixdim[a] > 0):
            raise CorruptHeader(f"pixdim[{a}] = {pixdim[a]} must be > 0", field="pixdim")
    if not np.isfinite(vox_offset) or vox_offset < HEADER_SIZE:
        raise CorruptHeader(f"vox_offset {vox_offset} precedes end of header", field="vox_offset")

    return NiftiHeader(
        sizeof_hdr=sizeof_hdr,
        dim=dim,
        datatype_code=datatype,
        bitpix=bitpix,
        pixdim=pixdim,
        vox_offset=vox_offset,
        scl_slope=scl_slope,
        scl_inter=scl_inter,
        qform_code=qform_code,
        sform_code=sform_code,
        quatern=quatern,
        qoffset=qoffset,
        srow_x=srow_x,
        srow_y=srow_y,
        srow_z=srow_z,
        magic=magic,
        xyzt_units=xyzt_units,
        descrip=descrip,
        byteorder=order,
        raw_fields={"intent": intent, "intent_code": intent_code, "slice_start": slice_start},
    )


def _load_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _read_raw(path):
    raw = _load_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise DataTruncated(f"file holds {len(raw)} bytes, shorter than a header", field="sizeof_hdr")
    hdr = parse_header(raw[:HEADER_SIZE])
    shape = hdr.shape
    if any(x != 1 for x in shape[3:]):
        raise CorruptHeader(f"only 3D volumes are supported, got extents {shape}", field="dim")
    shape3 = (tuple(shape[:3]) + (1, 1, 1))[:3]

    offset = int(hdr.vox_offset)
    if offset > WRITE_VOX_OFFSET and len(raw) >= WRITE_VOX_OFFSET and raw[HEADER_SIZE] != 0:
        warnings.warn(f"{path}: NIfTI header extensions are ignored", stacklevel=3)
    dtype = hdr.numpy_dtype
    count = int(np.prod(shape3))
    need = offset + count * dtype.itemsize
    if len(raw) < need:
        raise DataTruncated(f"expected {need} bytes of header+data, file has {len(raw)}", field="vox_offset")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape3, order="F")
    return arr, hdr


def _scaled(arr: np.ndarray, hdr: NiftiHeader) -> np.ndarray:
    slope, inter = float(hdr.scl_slope), float(hdr.scl_inter)
    if not np.isfinite(slope):
        raise CorruptHeader(f"scl_slope = {slope}", field="scl_slope")
    if not np.isfinite(inter):
        raise CorruptHeader(f"scl_inter = {inter}", field="scl_inter")
    if slope == 0.0:
        slope = 1.0
    out = arr.astype(np.float64)
    if slope != 1.0 or inter != 0.0:
        out = out * slope + inter
    return out


def read_volume(path) -> tuple[Volume3, NiftiHeader]:
    """Read an image volume; values are ``raw * scl_slope + scl_inter``."""
    arr, hdr = _read_raw(path)
    data = _scaled(arr, hdr)
    return Volume3(data, hdr.spacing, hdr.affine()), hdr


def read_mask(path, max_label: int = 2) -> tuple[LabelMask3, NiftiHeader]:
    """Read a label mask, rejecting non-integral or out-of-range labels."""
    arr, hdr = _read_raw(path)
    data = _scaled(arr, hdr)
    if data.size and (data.min() < 0 or data.max() > max_label or not np.all(data == np.round(data))):
        found = np.unique(data)[:10]
        raise ValueOverflow(f"labels must be integers in 0..{max_label}, found {found}", field="data")
    return LabelMask3(data.astype(np.uint8), hdr.spacing, hdr.affine()), hdr


def _encode_values(data: np.ndarray, datatype_code: int) -> np.ndarray:
    kind = DATATYPES[datatype_code][0]
    target = np.dtype(kind)
    if not np.isfinite(data).all():
        raise NonFiniteValue("cannot store NaN or infinite values", field="data")
    if target.kind == "f":
        limit = np.finfo(target).max
        if data.size and np.abs(data).max() > limit:
            raise ValueOverflow(f"values exceed the {target} range", field="datatype")
        return data.astype(target)
    info = np.iinfo(target)
    if data.size:
        lo, hi = data.min(), data.max()
        if lo < info.min or hi > info.max:
            raise ValueOverflow(f"values in [{lo}, {hi}] do not fit {target}", field="datatype")
        if data.dtype.kind == "f" and not np.all(data == np.round(data)):
            raise ValueOverflow(f"non-integral values cannot be stored as {target}", field="datatype")
    return data.astype(target)


def encode_header(shape, spacing, affine, datatype_code: int, byteorder: str = "<") -> bytes:
    sx, sy, sz = spacing
    aff = np.asarray(affine, dtype=np.float64)
    fields = [
        HEADER_SIZE,
        b"",
        b"",
        0,
        0,
        0,
        0,
        *(3, shape[0], shape[1], shape[2], 1, 1, 1, 1),
        0.0,
        0.0,
        0.0,
        0,  # intent_code
        datatype_code,
        DATATYPES[datatype_code][1],
        0,  # slice_start
        *(1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0),
        float(WRITE_VOX_OFFSET),
        1.0,
        0.0,
        0,  # slice_end
        0,  # slice_code
        2,  # xyzt_units: mm
        0.0,
        0.0,
        0.0,
        0.0,
        0,
        0,
        b"",
        b"",
        0,  # qform_code
        1,  # sform_code
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        *aff[0],
        *aff[1],
        *aff[2],
        b"",
        _MAGIC_SINGLE,
    ]
    return struct.pack(byteorder + _HEADER_FMT, *fields)


def write_volume(v, path, datatype_code: int | None = None, byteorder: str = "<", compress: bool | None = None) -> None:
    """Write ``v`` as a single-file NIfTI-1 volume.

    Masks default to uint8 and images to float32. ``compress`` defaults to
    gzip iff the path ends in ``.gz``. Output is written atomically and is a
    pure function of the inputs (gzip mtime is fixed at 0).
    """
    if datatype_code is None:
        datatype_code = DT_UINT8 if isinstance(v, LabelMask3) else DT_FLOAT32
    if datatype_code not in DATATYPES:
        raise UnsupportedDatatype(f"cannot write datatype code {datatype_code}", field="datatype")
    if byteorder not in ("<", ">"):
        raise ValueError("byteorder must be '<' or '>'")
    values = _encode_values(np.asarray(v.data), datatype_code)
    header = encode_header(v.shape, v.spacing, v.affine, datatype_code, byteorder)
    body = values.astype(values.dtype.newbyteorder(byteorder)).tobytes(order="F")
    payload = header + b"\x00\x00\x00\x00" + body
    path = Path(path)
    if compress is None:
        compress = path.suffix == ".gz"
    if compress:
        payload = gzip.compress(payload, compresslevel=6, mtime=0)
    atomic_write_bytes(path, payload)


__all__ = [
    "DATATYPES",
    "DT_FLOAT32",
    "DT_FLOAT64",
    "DT_INT16",
    "DT_INT32",
    "DT_UINT8",
    "LabelMask3",
    "NiftiError",
    "NiftiHeader",
    "NonFiniteValue",
    "Volume3",
    "parse_header",
    "read_mask",
    "read_volume",
    "same_geometry",
    "write_volume",
]
