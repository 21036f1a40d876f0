"""Minimal NIfTI-1 reader/writer (single file ``.nii``, optionally gzipped).

Only what the pipeline needs: 3D volumes (or 4D with a singleton fourth
axis) in uint8, int16, int32, float32 or float64.  Header extensions are
skipped on read and never written.
"""

from __future__ import annotations

import gzip
import io
import os
from typing import Mapping

import numpy as np

from .errors import (
    CodebookError,
    LabelDtypeError,
    NiftiFormatError,
    TruncatedDataError,
    UnsupportedDtypeError,
)
from .volume import CANONICAL_CODEBOOK, LabelVolume, VoxelGrid

HEADER_SIZE = 348
VOX_OFFSET = 352
GZIP_MAGIC = b"\x1f\x8b"

HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
])
assert HEADER_DTYPE.itemsize == HEADER_SIZE

# datatype code -> (numpy kind, bitpix)
SUPPORTED_DTYPES = {
    2: ("u1", 8),
    4: ("i2", 16),
    8: ("i4", 32),
    16: ("f4", 32),
    64: ("f8", 64),
}
_CODE_FOR_KIND = {kind: code for code, (kind, _) in SUPPORTED_DTYPES.items()}
_KNOWN_UNSUPPORTED = {
    1: "binary", 32: "complex64", 128: "rgb24", 256: "int8", 512: "uint16",
    768: "uint32", 1024: "int64", 1280: "uint64", 1536: "float128",
    1792: "complex128", 2048: "complex256", 2304: "rgba32",
}
MAGICS = (b"n+1", b"ni1")  # numpy strips the trailing NUL of an S4 field
NIFTI2_SIZE = 540


def _open_stream(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == GZIP_MAGIC:
        return gzip.open(path, "rb")
    return open(path, "rb")


def parse_header(raw: bytes) -> np.ndarray:
    """Decode a 348-byte header, detecting endianness from ``sizeof_hdr``."""
    if len(raw) < HEADER_SIZE:
        raise TruncatedDataError(f"header is {len(raw)} bytes, expected {HEADER_SIZE}")
    raw = raw[:HEADER_SIZE]
    for order in ("<", ">"):
        dt = HEADER_DTYPE.newbyteorder(order)
        hdr = np.frombuffer(raw, dtype=dt, count=1)[0]
        size = int(hdr["sizeof_hdr"])
        if size == HEADER_SIZE:
            break
        if size == NIFTI2_SIZE:
            raise NiftiFormatError("NIfTI-2 files are not supported")
    else:
        raise NiftiFormatError(f"sizeof_hdr is not {HEADER_SIZE} in either byte order")
    if hdr["magic"] not in MAGICS:
        raise NiftiFormatError(f"bad magic {bytes(hdr['magic'])!r}")
    return hdr


def header_dims(hdr) -> tuple[int, int, int]:
    dim = [int(v) for v in hdr["dim"]]
    ndim = dim[0]
    if ndim == 3 or (ndim == 4 and dim[4] == 1):
        shape = tuple(dim[1:4])
    else:
        raise NiftiFormatError(f"only 3D volumes are supported, got dim={dim[:ndim + 1]}")
    if any(n <= 0 for n in shape):
        raise NiftiFormatError(f"non-positive dimension in {shape}")
    return shape


def header_dtype(hdr) -> np.dtype:
    code = int(hdr["datatype"])
    if code not in SUPPORTED_DTYPES:
        name = _KNOWN_UNSUPPORTED.get(code, "unknown")
        raise UnsupportedDtypeError(f"datatype {code} ({name}) is not supported")
    kind, bitpix = SUPPORTED_DTYPES[code]
    if int(hdr["bitpix"]) != bitpix:
        raise NiftiFormatError(f"bitpix {int(hdr['bitpix'])} inconsistent with datatype {code}")
    return np.dtype(kind).newbyteorder(header_byteorder(hdr))


def header_byteorder(hdr) -> str:
    """'<' or '>' for the byte order the header was decoded with."""
    order = hdr.dtype.fields["sizeof_hdr"][0].byteorder
    if order == "=":
        order = "<" if np.little_endian else ">"
    return order


def quaternion_affine(hdr) -> np.ndarray:
    b, c, d = (float(hdr[k]) for k in ("quatern_b", "quatern_c", "quatern_d"))
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ])
    pix = hdr["pixdim"].astype(np.float64)
    qfac = -1.0 if pix[0] < 0 else 1.0
    zooms = np.array([pix[1], pix[2], pix[3] * qfac])
    aff = np.eye(4)
    aff[:3, :3] = rot * zooms
    aff[:3, 3] = [float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"])]
    return aff


def header_affine(hdr) -> np.ndarray:
    """sform when set, else qform, else a pixdim diagonal."""
    if int(hdr["sform_code"]) > 0:
        aff = np.eye(4)
        aff[0] = hdr["srow_x"]
        aff[1] = hdr["srow_y"]
        aff[2] = hdr["srow_z"]
        return aff
    if int(hdr["qform_code"]) > 0:
        return quaternion_affine(hdr)
    pix = np.abs(hdr["pixdim"][1:4].astype(np.float64))
    pix[pix == 0] = 1.0
    return np.diag([*pix, 1.0])


def _read_raw(path) -> tuple[np.ndarray, np.ndarray]:
    with _open_stream(path) as fh:
        raw = fh.read(HEADER_SIZE)
        hdr = parse_header(raw)
        shape = header_dims(hdr)
        dtype = header_dtype(hdr)
        offset = int(hdr["vox_offset"])
        if offset < HEADER_SIZE:
            # ni1 pairs keep data in a separate .img file
            raise NiftiFormatError(f"vox_offset {offset} does not point past the header")
        nbytes = int(np.prod(shape)) * dtype.itemsize
        skipped = fh.read(offset - HEADER_SIZE)
        if len(skipped) != offset - HEADER_SIZE:
            raise TruncatedDataError("file ends before vox_offset")
        payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise TruncatedDataError(f"data section holds {len(payload)} bytes, expected {nbytes}")
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    return hdr, data.astype(dtype.newbyteorder("="))


def _spacing(hdr, affine) -> tuple[float, float, float]:
    pix = np.abs(hdr["pixdim"][1:4].astype(np.float64))
    if np.all(np.isfinite(pix)) and np.all(pix > 0):
        return tuple(float(v) for v in pix)
    return tuple(float(v) for v in np.linalg.norm(affine[:3, :3], axis=0))


def read_header(path) -> np.ndarray:
    with _open_stream(path) as fh:
        return parse_header(fh.read(HEADER_SIZE))


def read_volume(path, apply_scaling: bool = True) -> VoxelGrid:
    """Read a NIfTI-1 file into a ``VoxelGrid``.

    Intensity scaling is applied when ``scl_slope`` is non-zero and not the
    identity pair (1, 0); scaled data comes back as float64.
    """
    hdr, data = _read_raw(path)
    affine = header_affine(hdr)
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if apply_scaling and slope != 0 and np.isfinite(slope) and not (slope == 1 and inter == 0):
        data = data.astype(np.float64) * slope + inter
    return VoxelGrid(data, _spacing(hdr, affine), affine)


def read_labels(path, remap: Mapping[int, int] | None = None, codebook=None) -> LabelVolume:
    """Read a segmentation, optionally remapping raw values to class codes."""
    hdr, data = _read_raw(path)
    codebook = dict(CANONICAL_CODEBOOK if codebook is None else codebook)
    if np.issubdtype(data.dtype, np.floating):
        if not np.all(np.isfinite(data)) or np.any(data != np.round(data)):
            raise LabelDtypeError("label volume contains non-integer values")
    values = data.astype(np.int64)
    if remap:
        out = values.copy()
        for src, dst in remap.items():
            out[values == int(src)] = int(dst)
        values = out
    present = np.unique(values)
    unknown = sorted(int(v) for v in present if int(v) not in codebook)
    if unknown:
        raise CodebookError(f"label values {unknown} are not in the codebook; pass a remap table")
    lo, hi = min(codebook), max(codebook)
    dtype = np.uint8 if lo >= 0 and hi <= 255 else np.int32
    affine = header_affine(hdr)
    return LabelVolume(VoxelGrid(values.astype(dtype), _spacing(hdr, affine), affine), codebook)


def _choose_dtype(data: np.ndarray) -> np.dtype:
    dt = data.dtype
    if dt == np.bool_:
        return np.dtype("u1")
    if dt.kind in "ui":
        if dt.newbyteorder("=").str[1:] in _CODE_FOR_KIND:
            return np.dtype(dt.str[1:])
        lo, hi = (int(data.min()), int(data.max())) if data.size else (0, 0)
        for kind, info in (("u1", np.iinfo(np.uint8)), ("i2", np.iinfo(np.int16)),
                           ("i4", np.iinfo(np.int32))):
            if info.min <= lo and hi <= info.max:
                return np.dtype(kind)
        return np.dtype("f8")
    if dt.kind == "f":
        return np.dtype("f4") if dt.itemsize <= 4 else np.dtype("f8")
    raise UnsupportedDtypeError(f"cannot store {dt} in NIfTI-1")


def _quaternion(affine: np.ndarray, zooms) -> tuple[float, float, float, float]:
    """(b, c, d, qfac) of the rotation part of ``affine``."""
    m = affine[:3, :3] / np.asarray(zooms)
    qfac = 1.0
    if np.linalg.det(m) < 0:
        qfac = -1.0
        m = m.copy()
        m[:, 2] *= -1
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    a = 0.5 * np.sqrt(max(0.0, 1.0 + np.trace(r)))
    if a > 1e-4:
        b = 0.25 * (r[2, 1] - r[1, 2]) / a
        c = 0.25 * (r[0, 2] - r[2, 0]) / a
        d = 0.25 * (r[1, 0] - r[0, 1]) / a
    else:
        # rotation near 180 degrees: recover the axis from the diagonal
        b = 0.5 * np.sqrt(max(0.0, 1.0 + r[0, 0] - r[1, 1] - r[2, 2]))
        c = 0.5 * np.sqrt(max(0.0, 1.0 - r[0, 0] + r[1, 1] - r[2, 2]))
        d = 0.5 * np.sqrt(max(0.0, 1.0 - r[0, 0] - r[1, 1] + r[2, 2]))
        if b > 1e-4:
            c = np.copysign(c, r[0, 1] + r[1, 0])
            d = np.copysign(d, r[0, 2] + r[2, 0])
        elif c > 1e-4:
            d = np.copysign(d, r[1, 2] + r[2, 1])
    return float(b), float(c), float(d), qfac


def encode(volume, endian: str = "<") -> bytes:
    """Serialize a ``VoxelGrid`` or ``LabelVolume`` to NIfTI-1 bytes."""
    if endian not in ("<", ">"):
        raise ValueError("endian must be '<' or '>'")
    grid = volume.grid if isinstance(volume, LabelVolume) else volume
    data = grid.data
    if isinstance(volume, LabelVolume):
        hi = int(data.max())
        lo = int(data.min())
        kind = "u1" if lo >= 0 and hi <= 255 else ("i2" if -32768 <= lo and hi <= 32767 else "i4")
        dtype = np.dtype(kind)
    else:
        dtype = _choose_dtype(data)
    code = _CODE_FOR_KIND[dtype.str[1:]]
    affine = np.asarray(grid.affine, dtype=np.float64)

    hdr = np.zeros(1, dtype=HEADER_DTYPE.newbyteorder(endian))[0]
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *grid.dims, 1, 1, 1, 1]
    hdr["datatype"] = code
    hdr["bitpix"] = SUPPORTED_DTYPES[code][1]
    b, c, d, qfac = _quaternion(affine, grid.spacing)
    hdr["pixdim"] = [qfac, *grid.spacing, 1.0, 1.0, 1.0, 1.0]
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["qform_code"] = 1
    hdr["sform_code"] = 1
    hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"] = b, c, d
    hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = affine[:3, 3]
    hdr["srow_x"] = affine[0]
    hdr["srow_y"] = affine[1]
    hdr["srow_z"] = affine[2]
    hdr["magic"] = b"n+1"

    buf = io.BytesIO()
    buf.write(hdr.tobytes())
    buf.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
    buf.write(np.asarray(data, dtype=dtype.newbyteorder(endian)).tobytes(order="F"))
    return buf.getvalue()


def write_volume(volume, path, endian: str = "<", compress: bool | None = None) -> None:
    """Write ``volume`` to ``path``; gzip when the name ends in ``.gz``.

    Gzip output carries a zero timestamp so identical volumes produce
    identical files.
    """
    payload = encode(volume, endian=endian)
    path = os.fspath(path)
    if compress is None:
        compress = path.endswith(".gz")
    if compress:
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
            gz.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)
