"""Binary checkpoint format.

Layout: magic ``DINCKPT``, version u32, tensor count u32, then per tensor:
name length u32 + UTF-8 name, rank u32 + dims (u32 each), float32 LE
payload.  Model parameters carry their module-path names; optimizer state
and architecture metadata ride along under ``__opt__.*`` / ``__cfg__.*``
reserved names.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..volume import VolumeError
from .model import DIM_VARIANTS, DinModel, NetConfig

MAGIC = b"DINCKPT"
VERSION = 1


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise VolumeError(f"{path}: bad checkpoint magic")
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise VolumeError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        out[name] = arr.copy()
    if off != len(blob):
        raise VolumeError(f"{path}: trailing bytes after {count} tensors")
    return out


def _cfg_tensors(cfg: NetConfig) -> dict[str, np.ndarray]:
    return {
        "__cfg__.in_dims": np.array(cfg.in_dims, dtype=np.float32),
        "__cfg__.channels": np.array(cfg.channels, dtype=np.float32),
        "__cfg__.dim_variant": np.array([DIM_VARIANTS.index(cfg.dim_variant)], dtype=np.float32),
        "__cfg__.num_classes": np.array([cfg.num_classes], dtype=np.float32),
    }


def _cfg_from_tensors(tensors: dict[str, np.ndarray]) -> NetConfig:
    try:
        return NetConfig(
            in_dims=tuple(int(v) for v in tensors["__cfg__.in_dims"]),
            channels=tuple(int(v) for v in tensors["__cfg__.channels"]),
            dim_variant=DIM_VARIANTS[int(tensors["__cfg__.dim_variant"][0])],
            num_classes=int(tensors["__cfg__.num_classes"][0]),
        )
    except KeyError as e:
        raise VolumeError(f"checkpoint missing architecture metadata: {e}") from e


def save_model(
    path: str | Path,
    model: DinModel,
    extra: dict[str, np.ndarray] | None = None,
) -> None:
    tensors = dict(model.named_params())
    tensors.update(_cfg_tensors(model.cfg))
    if extra:
        tensors.update(extra)
    write_tensors(path, tensors)


def load_model(path: str | Path) -> tuple[DinModel, dict[str, np.ndarray]]:
    """Rebuild the model; returns it plus any reserved (non-parameter) tensors."""
    tensors = read_tensors(path)
    cfg = _cfg_from_tensors(tensors)
    model = DinModel(cfg)
    expected = set(model.named_params())
    extra: dict[str, np.ndarray] = {}
    seen: set[str] = set()
    for name, arr in tensors.items():
        if name in expected:
            model.set_param(name, arr.astype(np.float32))
            seen.add(name)
        elif name.startswith("__"):
            extra[name] = arr
        else:
            raise VolumeError(f"checkpoint tensor {name!r} does not belong to the architecture")
    missing = expected - seen
    if missing:
        raise VolumeError(f"checkpoint missing parameters: {sorted(missing)[:3]}...")
    return model, extra
