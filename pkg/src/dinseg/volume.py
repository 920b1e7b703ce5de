"""Voxel-grid core types, file I/O and binary-mask morphology.

A :class:`Volume` is a dense 3D scalar grid (float32) with anisotropic
voxel spacing in millimeters; a :class:`Mask` is the binary counterpart.
Indexing is always ``(z, y, x)`` with x fastest (C order).

File formats:

* raw+json: little-endian float32 payload at ``<name>.raw`` with a sidecar
  header ``<name>.json`` of the form
  ``{"dims": [d, h, w], "spacing": [sz, sy, sx], "dtype": "f32", "order": "zyx"}``.
  Round-trips are bit-exact.
* A minimal single-file uncompressed NIfTI-1 reader/writer (int16/float32
  only) for interchange.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

VoxelIndex = tuple[int, int, int]  # (z, y, x)


class VolumeError(ValueError):
    """Malformed grid data, header, or out-of-range access."""


@dataclass
class Volume:
    """Dense 3D scalar grid.

    ``data`` has shape ``(depth, height, width)`` and dtype float32;
    ``spacing`` is millimeters per voxel as ``(sz, sy, sx)``.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise VolumeError(f"volume must be 3D with all dims >= 1, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be three positive floats, got {self.spacing}")
        if not np.all(np.isfinite(self.data)):
            raise VolumeError("volume contains non-finite values")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass
class Mask:
    """Binary 3D grid aligned to a Volume."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data).astype(bool)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise VolumeError(f"mask must be 3D with all dims >= 1, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def count(self) -> int:
        return int(self.data.sum())

    def to_volume(self) -> Volume:
        return Volume(self.data.astype(np.float32), self.spacing)

    @classmethod
    def from_volume(cls, v: Volume, threshold: float = 0.5) -> "Mask":
        return cls(v.data > threshold, v.spacing)


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive axis-aligned voxel box."""

    min: VoxelIndex
    max: VoxelIndex

    def __post_init__(self) -> None:
        if any(a > b for a, b in zip(self.min, self.max)):
            raise VolumeError(f"box min {self.min} exceeds max {self.max}")
        if any(a < 0 for a in self.min):
            raise VolumeError(f"box min {self.min} has negative components")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b - a + 1 for a, b in zip(self.min, self.max))  # type: ignore[return-value]

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(a, b + 1) for a, b in zip(self.min, self.max))  # type: ignore[return-value]

    def check_within(self, dims: tuple[int, int, int]) -> None:
        if any(b >= d for b, d in zip(self.max, dims)):
            raise VolumeError(f"box {self.min}..{self.max} does not fit in dims {dims}")

    def contains(self, idx: VoxelIndex) -> bool:
        return all(a <= i <= b for a, i, b in zip(self.min, idx, self.max))


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

_RAW_DTYPE = "f32"


def _header_path(path: Path) -> Path:
    return path.with_suffix(".json")


def write_volume(v: Volume, path: str | Path, format: str = "raw") -> None:
    """Write a Volume to disk. ``format`` is ``raw`` (payload + json sidecar) or ``nifti``."""
    path = Path(path)
    if format == "raw":
        header = {
            "dims": list(v.dims),
            "spacing": list(v.spacing),
            "dtype": _RAW_DTYPE,
            "order": "zyx",
        }
        _header_path(path).write_text(json.dumps(header))
        path.write_bytes(np.ascontiguousarray(v.data, dtype="<f4").tobytes())
    elif format == "nifti":
        _write_nifti(v, path)
    else:
        raise VolumeError(f"unsupported format {format!r}")


def read_volume(path: str | Path, format: str | None = None) -> Volume:
    """Read a Volume; format is inferred from the suffix when not given."""
    path = Path(path)
    if format is None:
        format = "nifti" if path.suffix == ".nii" else "raw"
    if format == "raw":
        return _read_raw(path)
    if format == "nifti":
        return _read_nifti(path)
    raise VolumeError(f"unsupported format {format!r}")


def _read_raw(path: Path) -> Volume:
    hpath = _header_path(path)
    if not path.exists():
        raise VolumeError(f"payload file not found: {path}")
    if not hpath.exists():
        raise VolumeError(f"header file not found: {hpath}")
    try:
        header = json.loads(hpath.read_text())
    except json.JSONDecodeError as e:
        raise VolumeError(f"malformed header {hpath}: {e}") from e
    for key in ("dims", "spacing"):
        if key not in header:
            raise VolumeError(f"header missing field {key!r}")
    if header.get("dtype", _RAW_DTYPE) != _RAW_DTYPE:
        raise VolumeError(f"unsupported dtype {header.get('dtype')!r}")
    if header.get("order", "zyx") != "zyx":
        raise VolumeError(f"unsupported order {header.get('order')!r}")
    dims = tuple(int(d) for d in header["dims"])
    if len(dims) != 3:
        raise VolumeError(f"dims must have 3 entries, got {header['dims']}")
    payload = path.read_bytes()
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise VolumeError(
            f"data-length mismatch: header dims {dims} need {expected} bytes, file has {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return Volume(data.copy(), tuple(header["spacing"]))


# Minimal NIfTI-1: single-file ("n+1"), uncompressed, datatype int16 or float32.
_NIFTI_HDR_SIZE = 348
_NIFTI_DTYPES = {4: np.dtype("<i2"), 16: np.dtype("<f4")}


def _read_nifti(path: Path) -> Volume:
    blob = path.read_bytes()
    if len(blob) < _NIFTI_HDR_SIZE:
        raise VolumeError(f"{path}: file shorter than a NIfTI-1 header")
    sizeof_hdr = struct.unpack_from("<i", blob, 0)[0]
    if sizeof_hdr != _NIFTI_HDR_SIZE:
        raise VolumeError(f"{path}: bad sizeof_hdr {sizeof_hdr}")
    magic = blob[344:348]
    if magic[:3] != b"n+1":
        raise VolumeError(f"{path}: not a single-file NIfTI-1 (magic {magic!r})")
    dim = struct.unpack_from("<8h", blob, 40)
    if dim[0] < 3:
        raise VolumeError(f"{path}: expected >=3 spatial dims, got dim[0]={dim[0]}")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if any(dim[k] > 1 for k in range(4, dim[0] + 1)):
        raise VolumeError(f"{path}: non-singleton higher dimensions unsupported")
    datatype = struct.unpack_from("<h", blob, 70)[0]
    if datatype not in _NIFTI_DTYPES:
        raise VolumeError(f"{path}: unsupported datatype code {datatype}")
    pixdim = struct.unpack_from("<8f", blob, 76)
    vox_offset = int(struct.unpack_from("<f", blob, 108)[0])
    n = nx * ny * nz
    dtype = _NIFTI_DTYPES[datatype]
    need = vox_offset + n * dtype.itemsize
    if len(blob) < need:
        raise VolumeError(f"{path}: data-length mismatch (need {need} bytes, have {len(blob)})")
    flat = np.frombuffer(blob, dtype=dtype, count=n, offset=vox_offset)
    # NIfTI stores x fastest; reshape to (z, y, x).
    data = flat.reshape(nz, ny, nx).astype(np.float32)
    spacing = (float(pixdim[3]), float(pixdim[2]), float(pixdim[1]))
    return Volume(data, spacing)


def _write_nifti(v: Volume, path: Path) -> None:
    d, h, w = v.dims
    hdr = bytearray(_NIFTI_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _NIFTI_HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, w, h, d, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, 16)  # float32
    struct.pack_into("<h", hdr, 72, 32)  # bitpix
    sz, sy, sx = v.spacing
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    hdr[344:348] = b"n+1\x00"
    with open(path, "wb") as f:
        f.write(bytes(hdr))
        f.write(b"\x00" * 4)  # extension flag
        f.write(np.ascontiguousarray(v.data, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# Morphology
# ---------------------------------------------------------------------------

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    26: np.ones((3, 3, 3), dtype=bool),
}


def connected_components(m: Mask, connectivity: int = 26) -> tuple[np.ndarray, int]:
    """Label connected foreground components; background is 0, labels 1..k."""
    if connectivity not in _STRUCTURES:
        raise VolumeError(f"connectivity must be 6 or 26, got {connectivity}")
    labels, count = ndimage.label(m.data, structure=_STRUCTURES[connectivity])
    return labels.astype(np.int32), int(count)


def centroid(m: Mask) -> tuple[np.ndarray, VoxelIndex]:
    """Mean (z, y, x) of the member voxels, plus the half-up rounded index."""
    coords = np.argwhere(m.data)
    if coords.shape[0] == 0:
        raise VolumeError("centroid of an empty mask is undefined")
    c = coords.mean(axis=0)
    rounded = tuple(int(v) for v in np.floor(c + 0.5))
    return c, rounded  # type: ignore[return-value]


def crop(v: Volume, b: BoundingBox) -> Volume:
    b.check_within(v.dims)
    return Volume(v.data[b.slices()].copy(), v.spacing)


def crop_mask(m: Mask, b: BoundingBox) -> Mask:
    b.check_within(m.dims)
    return Mask(m.data[b.slices()].copy(), m.spacing)


def paste(dst: Volume, src: Volume, b: BoundingBox) -> Volume:
    b.check_within(dst.dims)
    if src.dims != b.shape:
        raise VolumeError(f"source dims {src.dims} do not match box shape {b.shape}")
    out = dst.data.copy()
    out[b.slices()] = src.data
    return Volume(out, dst.spacing)


def paste_mask(dst: Mask, src: Mask, b: BoundingBox) -> Mask:
    b.check_within(dst.dims)
    if src.dims != b.shape:
        raise VolumeError(f"source dims {src.dims} do not match box shape {b.shape}")
    out = dst.data.copy()
    out[b.slices()] = src.data
    return Mask(out, dst.spacing)


# ---------------------------------------------------------------------------
# Thinning (2D, per coronal slice)
# ---------------------------------------------------------------------------


def skeletonize(m: Mask) -> Mask:
    """Slice-wise (y, x) morphological thinning.

    Classic two-subiteration parallel thinning, with one amendment: a
    subiteration is never allowed to delete every remaining pixel of an
    8-connected slice component (the plain algorithm erases 2x2 blocks
    outright), so the output always keeps the component count of the input.
    """
    out = np.zeros_like(m.data)
    for z in range(m.dims[0]):
        sl = m.data[z]
        if sl.any():
            out[z] = _thin_slice(sl)
    return Mask(out, m.spacing)


_S8 = np.ones((3, 3), dtype=bool)


def _thin_slice(img: np.ndarray) -> np.ndarray:
    img = img.astype(bool).copy()
    while True:
        changed = False
        for step in (0, 1):
            flags = _deletable(img, step)
            if not flags.any():
                continue
            flags = _keep_component_survivors(img, flags)
            if flags.any():
                img[flags] = False
                changed = True
        if not changed:
            return img


def _deletable(img: np.ndarray, step: int) -> np.ndarray:
    p = np.pad(img, 1).astype(np.uint8)
    p2 = p[:-2, 1:-1]
    p3 = p[:-2, 2:]
    p4 = p[1:-1, 2:]
    p5 = p[2:, 2:]
    p6 = p[2:, 1:-1]
    p7 = p[2:, :-2]
    p8 = p[1:-1, :-2]
    p9 = p[:-2, :-2]
    ring = (p2, p3, p4, p5, p6, p7, p8, p9)
    b = sum(int_arr.astype(np.int32) for int_arr in ring)
    a = np.zeros_like(b)
    for cur, nxt in zip(ring, ring[1:] + ring[:1]):
        a += ((cur == 0) & (nxt == 1)).astype(np.int32)
    if step == 0:
        c1 = p2 * p4 * p6 == 0
        c2 = p4 * p6 * p8 == 0
    else:
        c1 = p2 * p4 * p8 == 0
        c2 = p2 * p6 * p8 == 0
    return img & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2


def _keep_component_survivors(img: np.ndarray, flags: np.ndarray) -> np.ndarray:
    """Unflag one pixel of any component that would be wiped out entirely."""
    labels, count = ndimage.label(img, structure=_S8)
    if count == 0:
        return flags
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    flagged = np.bincount(labels[flags].ravel(), minlength=count + 1)
    doomed = np.nonzero((sizes > 0) & (sizes == flagged))[0]
    if doomed.size:
        flags = flags.copy()
        for lab in doomed:
            if lab == 0:
                continue
            first = np.argwhere(labels == lab)[0]  # lexicographically smallest (y, x)
            flags[first[0], first[1]] = False
    return flags
