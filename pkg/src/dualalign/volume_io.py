"""Volume containers: a minimal native format plus NIfTI-1 read/write.

The native container is a text header followed by a raw little-endian
payload::

    DAVOL1\\n
    {"shape": [X, Y, Z], "spacing": [sx, sy, sz], "dtype": "float32", ...}\\n
    <C-order payload bytes>

Label maps live in a sibling file named ``<stem>.seg<ext>`` and are picked up
automatically by :func:`load_volume`.
"""

from __future__ import annotations

import gzip
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .core import LabelVolume, Volume3D
from .errors import CorruptHeader, UnsupportedFormat

_MAGIC = b"DAVOL1\n"

_NIFTI_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_NIFTI_CODES = {np.dtype(np.float32): 16, np.dtype(np.int16): 4, np.dtype(np.int32): 8}


def _sibling_seg_path(path: Path) -> Path:
    name = path.name
    for ext in (".davol", ".nii.gz", ".nii"):
        if name.endswith(ext):
            return path.with_name(name[: -len(ext)] + ".seg" + ext)
    raise UnsupportedFormat(f"unrecognized volume extension: {path}")


def save_volume(path, volume: Volume3D, labels: Optional[LabelVolume] = None) -> Path:
    """Write a volume (and optional label map as a sibling file) to disk."""
    path = Path(path)
    name = path.name
    if name.endswith(".davol"):
        _write_native(path, volume.voxels.astype(np.float32), volume.spacing,
                      modality=volume.modality, subject_id=volume.subject_id)
        if labels is not None:
            _write_native(_sibling_seg_path(path), labels.labels.astype(np.int32),
                          labels.spacing, num_classes=labels.num_classes)
    elif name.endswith((".nii", ".nii.gz")):
        _write_nifti(path, volume.voxels.astype(np.float32), volume.spacing)
        if labels is not None:
            _write_nifti(_sibling_seg_path(path), labels.labels.astype(np.int16),
                         labels.spacing)
    else:
        raise UnsupportedFormat(f"unsupported volume extension: {path}")
    return path


def load_volume(path) -> tuple[Volume3D, Optional[LabelVolume]]:
    """Load a volume; also returns its label map when a sibling file exists."""
    path = Path(path)
    name = path.name
    if name.endswith(".davol"):
        arr, spacing, header = _read_native(path)
        volume = Volume3D(arr.astype(np.float32), spacing,
                          modality=header.get("modality", "source"),
                          subject_id=header.get("subject_id", path.stem))
    elif name.endswith((".nii", ".nii.gz")):
        arr, spacing = _read_nifti(path)
        volume = Volume3D(arr.astype(np.float32), spacing, subject_id=_strip_ext(name))
    else:
        raise UnsupportedFormat(f"unsupported volume extension: {path}")

    labels = None
    seg_path = _sibling_seg_path(path)
    if seg_path.exists():
        if name.endswith(".davol"):
            lab, lab_spacing, lab_header = _read_native(seg_path)
            num_classes = int(lab_header.get("num_classes", max(2, int(lab.max()) + 1)))
        else:
            lab, lab_spacing = _read_nifti(seg_path)
            num_classes = max(2, int(lab.max()) + 1)
        labels = LabelVolume(np.rint(lab).astype(np.int32), num_classes, lab_spacing)
    return volume, labels


def _strip_ext(name: str) -> str:
    for ext in (".nii.gz", ".nii", ".davol"):
        if name.endswith(ext):
            return name[: -len(ext)]
    return name


# ---------------------------------------------------------------------------
# native container
# ---------------------------------------------------------------------------

def _write_native(path: Path, arr: np.ndarray, spacing, **extra) -> None:
    header = {
        "shape": list(arr.shape),
        "spacing": [float(s) for s in spacing],
        "dtype": str(arr.dtype),
    }
    header.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(json.dumps(header).encode() + b"\n")
        f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def _read_native(path: Path) -> tuple[np.ndarray, tuple, dict]:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CorruptHeader(f"{path}: bad magic {magic!r}")
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode())
            shape = tuple(int(s) for s in header["shape"])
            dtype = np.dtype(header["dtype"]).newbyteorder("<")
            spacing = tuple(float(s) for s in header["spacing"])
        except (KeyError, ValueError, TypeError) as e:
            raise CorruptHeader(f"{path}: malformed header: {e}") from e
        payload = f.read()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise CorruptHeader(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr, spacing, header


# ---------------------------------------------------------------------------
# minimal NIfTI-1 (single-file .nii / .nii.gz)
# ---------------------------------------------------------------------------

def _open_nifti(path: Path, mode: str):
    if path.name.endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _write_nifti(path: Path, arr: np.ndarray, spacing) -> None:
    if arr.dtype not in _NIFTI_CODES:
        raise UnsupportedFormat(f"cannot write dtype {arr.dtype} to NIfTI")
    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, 3, *arr.shape, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, _NIFTI_CODES[arr.dtype])
    struct.pack_into("<h", header, 72, arr.dtype.itemsize * 8)
    struct.pack_into("<8f", header, 76, 1.0, *[float(s) for s in spacing], 1, 1, 1, 1)
    struct.pack_into("<f", header, 108, 352.0)  # vox_offset
    struct.pack_into("<f", header, 112, 1.0)    # scl_slope
    header[344:348] = b"n+1\x00"
    path.parent.mkdir(parents=True, exist_ok=True)
    with _open_nifti(path, "wb") as f:
        f.write(bytes(header))
        f.write(b"\x00" * 4)  # header extension flag
        # NIfTI payloads are Fortran-ordered
        f.write(np.asfortranarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes(order="F"))


def _read_nifti(path: Path) -> tuple[np.ndarray, tuple]:
    with _open_nifti(path, "rb") as f:
        header = f.read(348)
        if len(header) < 348:
            raise CorruptHeader(f"{path}: truncated NIfTI header")
        (size,) = struct.unpack_from("<i", header, 0)
        bo = "<"
        if size != 348:
            bo = ">"
            (size,) = struct.unpack_from(">i", header, 0)
            if size != 348:
                raise CorruptHeader(f"{path}: sizeof_hdr = {size}, expected 348")
        magic = header[344:348]
        if magic not in (b"n+1\x00", b"ni1\x00"):
            raise CorruptHeader(f"{path}: bad NIfTI magic {magic!r}")
        dim = struct.unpack_from(bo + "8h", header, 40)
        ndim = dim[0]
        if ndim < 3:
            raise UnsupportedFormat(f"{path}: need a 3D volume, header says {ndim}D")
        shape = tuple(int(d) for d in dim[1:4])
        if any(int(d) > 1 for d in dim[4 : 1 + ndim]):
            raise UnsupportedFormat(f"{path}: >3 non-singleton dimensions")
        (datatype,) = struct.unpack_from(bo + "h", header, 70)
        if datatype not in _NIFTI_DTYPES:
            raise UnsupportedFormat(f"{path}: unsupported NIfTI datatype {datatype}")
        dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(bo)
        pixdim = struct.unpack_from(bo + "8f", header, 76)
        spacing = tuple(float(abs(p)) if p else 1.0 for p in pixdim[1:4])
        (vox_offset,) = struct.unpack_from(bo + "f", header, 108)
        slope, inter = struct.unpack_from(bo + "2f", header, 112)
        f.read(max(0, int(vox_offset) - 348))
        count = int(np.prod(shape))
        payload = f.read(count * dtype.itemsize)
    if len(payload) < count * dtype.itemsize:
        raise CorruptHeader(f"{path}: truncated NIfTI payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    if slope not in (0.0, 1.0) or inter != 0.0:
        arr = arr * slope + inter
    return arr, spacing
