"""Synthetic phantom volumes: ellipsoidal lesions on a flat background.

Lesions optionally get a "target-like" appearance (bright rim around a
dark core); the rest are uniformly bright.  Phantoms stand in for clinical
volumes in every experiment, so generation is fully deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import Mask, Volume, VolumeError, read_volume, write_volume

BACKGROUND_LEVEL = 0.25
RIM_LEVEL = 0.9
CORE_LEVEL = 0.12
PLAIN_LEVEL = 0.85
CORE_FRACTION = 0.55  # quadratic-form level below which the dark core starts


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple[int, int, int] = (8, 64, 64)
    spacing: tuple[float, float, float] = (6.0, 1.3, 1.3)
    tumor_count: tuple[int, int] = (1, 3)
    # lesion look-alikes that stay OUT of the mask; they make clicks carry
    # real information, the way normal anatomy confounds appearance alone
    distractor_count: tuple[int, int] = (0, 0)
    radius: tuple[float, float] = (4.0, 9.0)
    target_like_fraction: float = 0.5
    elongation: tuple[float, float] = (1.0, 1.8)
    z_radius_scale: tuple[float, float] = (1.0, 1.0)
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tumor_count[0] < 0 or self.tumor_count[1] < self.tumor_count[0]:
            raise VolumeError("tumor_count range must be non-degenerate and non-negative")
        if self.distractor_count[0] < 0 or self.distractor_count[1] < self.distractor_count[0]:
            raise VolumeError("distractor_count range must be non-degenerate and non-negative")
        if self.radius[0] <= 0 or self.radius[1] < self.radius[0]:
            raise VolumeError("radius range must be positive and ordered")


def generate_phantom(cfg: PhantomConfig, rng: np.random.Generator) -> tuple[Volume, Mask]:
    d, h, w = cfg.dims
    image = np.full(cfg.dims, BACKGROUND_LEVEL, dtype=np.float32)
    mask = np.zeros(cfg.dims, dtype=bool)
    zz, yy, xx = np.meshgrid(
        np.arange(d, dtype=np.float64),
        np.arange(h, dtype=np.float64),
        np.arange(w, dtype=np.float64),
        indexing="ij",
    )

    def draw_blob() -> tuple[np.ndarray, np.ndarray]:
        r = float(rng.uniform(*cfg.radius))
        e = float(rng.uniform(*cfg.elongation))
        rz = r * float(rng.uniform(*cfg.z_radius_scale))
        ry, rx = r * e, r
        center = []
        for extent, rad in zip(cfg.dims, (rz, ry, rx)):
            margin = min(int(np.ceil(rad)), (extent - 1) // 2)
            center.append(float(rng.uniform(margin, extent - 1 - margin)))
        cz, cy, cx = center
        q = ((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        return q, q <= 1.0

    def paint(q: np.ndarray, inside: np.ndarray) -> None:
        if rng.random() < cfg.target_like_fraction:
            image[inside & (q > CORE_FRACTION)] = RIM_LEVEL
            image[inside & (q <= CORE_FRACTION)] = CORE_LEVEL
        else:
            image[inside] = PLAIN_LEVEL

    count = int(rng.integers(cfg.tumor_count[0], cfg.tumor_count[1] + 1))
    for _ in range(count):
        q, inside = draw_blob()
        mask |= inside
        paint(q, inside)

    n_distract = int(rng.integers(cfg.distractor_count[0], cfg.distractor_count[1] + 1))
    for _ in range(n_distract):
        for _attempt in range(10):
            q, inside = draw_blob()
            if not (inside & mask).any():  # never contaminate the label
                paint(q, inside)
                break

    if cfg.noise_std > 0:
        image = image + rng.normal(0.0, cfg.noise_std, size=cfg.dims).astype(np.float32)
        image = np.clip(image, 0.0, 1.0)
    return Volume(image.astype(np.float32), cfg.spacing), Mask(mask, cfg.spacing)


def generate_phantoms(cfg: PhantomConfig, n: int, out_dir: str | Path) -> list[tuple[Path, Path]]:
    """Write ``n`` (volume, mask) raw+json pairs; returns the path pairs."""
    if n < 1:
        raise VolumeError("need at least one phantom")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    pairs = []
    for i in range(n):
        vol, mask = generate_phantom(cfg, rng)
        vpath = out_dir / f"case_{i:03d}.raw"
        mpath = out_dir / f"case_{i:03d}_mask.raw"
        write_volume(vol, vpath)
        write_volume(mask.to_volume(), mpath)
        pairs.append((vpath, mpath))
    return pairs


def load_dataset(data_dir: str | Path) -> list[tuple[Volume, Mask]]:
    data_dir = Path(data_dir)
    out = []
    for vpath in sorted(data_dir.glob("case_*.raw")):
        if vpath.stem.endswith("_mask"):
            continue
        mpath = vpath.with_name(vpath.stem + "_mask.raw")
        if not mpath.exists():
            raise VolumeError(f"missing mask for {vpath}")
        vol = read_volume(vpath)
        mask = Mask.from_volume(read_volume(mpath))
        out.append((vol, mask))
    if not out:
        raise VolumeError(f"no case_*.raw pairs under {data_dir}")
    return out
