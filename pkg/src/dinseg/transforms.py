"""Distance transforms that turn click sets into guide maps.

Four transforms over a voxel grid:

* ``edt``   -- exact Euclidean distance to the nearest seed (separable
  lower-envelope algorithm, optionally in physical millimeters).
* ``gdt``   -- shortest-path cost over the 26-neighbor voxel graph with
  edge cost sqrt(alpha * |dx|^2 + beta * dI^2); alpha=0 gives a pure
  intensity geodesic, beta=0 the graph-Euclidean distance.
* ``blend_dt`` -- gdt with both terms active.
* ``expdt`` -- max over seeds of gamma * exp(-sum_i d_i^2 / (2 sigma_i^2)),
  truncated to exactly 0 beyond ``cutoff_sigmas * sigma_i`` per axis.  The
  truncation makes the map independent of the surrounding grid extent:
  cropping commutes with the transform as long as every seed keeps that
  margin (this is the property that makes exp guides robust to variable
  image sizes, where min-based transforms are not).
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import Mask, Volume, VolumeError, VoxelIndex

_INF = float("inf")


@dataclass(frozen=True)
class ClickSet:
    """Ordered positive/negative click coordinates."""

    positives: tuple[VoxelIndex, ...] = ()
    negatives: tuple[VoxelIndex, ...] = ()

    def __post_init__(self) -> None:
        pos = tuple(tuple(int(c) for c in p) for p in self.positives)
        neg = tuple(tuple(int(c) for c in p) for p in self.negatives)
        object.__setattr__(self, "positives", pos)
        object.__setattr__(self, "negatives", neg)
        if len(set(pos)) != len(pos) or len(set(neg)) != len(neg):
            raise VolumeError("duplicate clicks within a polarity")
        if set(pos) & set(neg):
            raise VolumeError("a voxel cannot be both a positive and a negative click")

    def add(self, polarity: str, idx: VoxelIndex) -> "ClickSet":
        if polarity == "positive":
            return ClickSet(self.positives + (idx,), self.negatives)
        if polarity == "negative":
            return ClickSet(self.positives, self.negatives + (idx,))
        raise VolumeError(f"unknown polarity {polarity!r}")

    def drop_last(self) -> "ClickSet":
        """Remove the most recently added click (positives+negatives interleaved is
        not tracked; the caller keeps an ordered event log for precise undo)."""
        if self.negatives:
            return ClickSet(self.positives, self.negatives[:-1])
        return ClickSet(self.positives[:-1], self.negatives)

    def check_in_grid(self, dims: tuple[int, int, int]) -> None:
        for p in self.positives + self.negatives:
            if any(c < 0 or c >= d for c, d in zip(p, dims)):
                raise VolumeError(f"click {p} outside grid {dims}")

    def to_json(self) -> str:
        return json.dumps(
            {"positives": [list(p) for p in self.positives],
             "negatives": [list(p) for p in self.negatives]}
        )

    @classmethod
    def from_json(cls, text: str) -> "ClickSet":
        obj = json.loads(text)
        return cls(
            tuple(tuple(p) for p in obj.get("positives", [])),
            tuple(tuple(p) for p in obj.get("negatives", [])),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ClickSet":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class GdtParams:
    alpha: float = 1.0
    beta: float = 0.0
    use_physical_spacing: bool = False

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise VolumeError("alpha and beta must be non-negative with alpha + beta > 0")


@dataclass(frozen=True)
class ExpParams:
    gamma: float = 1.0
    sigma: tuple[float, float, float] = (1.0, 5.0, 5.0)
    cutoff_sigmas: float = 3.0
    use_physical_spacing: bool = False

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise VolumeError("gamma must be positive")
        if len(self.sigma) != 3 or any(s <= 0 for s in self.sigma):
            raise VolumeError("sigma must be three positive floats")
        if self.cutoff_sigmas < 1:
            raise VolumeError("cutoff_sigmas must be >= 1")


@dataclass
class GuideMaps:
    """Foreground/background guide-map pair fed to the network."""

    foreground: Volume
    background: Volume

    def __post_init__(self) -> None:
        if self.foreground.dims != self.background.dims:
            raise VolumeError("guide maps must share dims")


# ---------------------------------------------------------------------------
# Exact Euclidean distance transform
# ---------------------------------------------------------------------------


def _edt_1d_sq(f: np.ndarray, step: float) -> np.ndarray:
    """1D squared-distance lower envelope with sample positions i*step."""
    n = f.shape[0]
    out = np.full(n, _INF)
    v = np.zeros(n, dtype=np.int64)
    z = np.zeros(n + 1)
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == _INF:
            continue
        xq = q * step
        while k >= 0:
            xv = v[k] * step
            s = (fq + xq * xq - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = -_INF if k == 0 else s
        z[k + 1] = _INF
    if k < 0:
        return out
    j = 0
    for q in range(n):
        xq = q * step
        while z[j + 1] < xq:
            j += 1
        dx = xq - v[j] * step
        out[q] = dx * dx + f[v[j]]
    return out


def _edt_sq_grid(seed_grid: np.ndarray, steps: tuple[float, float, float]) -> np.ndarray:
    """Squared EDT of a boolean seed grid, axis-separable, float64."""
    f = np.where(seed_grid, 0.0, _INF)
    for axis in (2, 1, 0):
        step = steps[axis]
        moved = np.moveaxis(f, axis, -1)
        flat = moved.reshape(-1, moved.shape[-1])
        for i in range(flat.shape[0]):
            line = flat[i]
            if np.isfinite(line).any():
                flat[i] = _edt_1d_sq(line, step)
        f = np.moveaxis(flat.reshape(moved.shape), -1, axis)
    return f


def edt(
    dims: tuple[int, int, int],
    seeds: list[VoxelIndex] | tuple[VoxelIndex, ...],
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    use_physical_spacing: bool = False,
) -> Volume:
    """Exact (anisotropic) Euclidean distance to the nearest seed."""
    if len(seeds) == 0:
        raise VolumeError("edt requires a non-empty seed set")
    grid = np.zeros(dims, dtype=bool)
    for s in seeds:
        if any(c < 0 or c >= d for c, d in zip(s, dims)):
            raise VolumeError(f"seed {s} outside grid {dims}")
        grid[tuple(s)] = True
    steps = spacing if use_physical_spacing else (1.0, 1.0, 1.0)
    sq = _edt_sq_grid(grid, steps)
    return Volume(np.sqrt(sq).astype(np.float32), spacing)


def edt_mask(m: Mask, use_physical_spacing: bool = False) -> Volume:
    """EDT to a mask's foreground (all set voxels act as seeds)."""
    if not m.data.any():
        raise VolumeError("edt of an empty mask is undefined")
    steps = m.spacing if use_physical_spacing else (1.0, 1.0, 1.0)
    sq = _edt_sq_grid(m.data, steps)
    return Volume(np.sqrt(sq).astype(np.float32), m.spacing)


# ---------------------------------------------------------------------------
# Geodesic / blended distance transform
# ---------------------------------------------------------------------------

_NEIGHBORS_26 = [
    (dz, dy, dx)
    for dz in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dx in (-1, 0, 1)
    if (dz, dy, dx) != (0, 0, 0)
]


def gdt(image: Volume, seeds: list[VoxelIndex] | tuple[VoxelIndex, ...], params: GdtParams) -> Volume:
    """Multi-source shortest path on the 26-neighbor graph.

    Edge cost between adjacent voxels a, b is
    sqrt(alpha * |xa - xb|^2 + beta * (I(a) - I(b))^2); best-first
    propagation from all seeds at distance 0.
    """
    if len(seeds) == 0:
        raise VolumeError("gdt requires a non-empty seed set")
    d, h, w = image.dims
    steps = image.spacing if params.use_physical_spacing else (1.0, 1.0, 1.0)
    img = image.data.astype(np.float64).ravel()
    dist = np.full(d * h * w, _INF)

    offsets = []
    for dz, dy, dx in _NEIGHBORS_26:
        lin = dz * h * w + dy * w + dx
        space_sq = (dz * steps[0]) ** 2 + (dy * steps[1]) ** 2 + (dx * steps[2]) ** 2
        offsets.append((dz, dy, dx, lin, space_sq))

    heap: list[tuple[float, int]] = []
    for s in seeds:
        if any(c < 0 or c >= dd for c, dd in zip(s, (d, h, w))):
            raise VolumeError(f"seed {s} outside grid {(d, h, w)}")
        lin = s[0] * h * w + s[1] * w + s[2]
        dist[lin] = 0.0
        heapq.heappush(heap, (0.0, lin))

    alpha, beta = params.alpha, params.beta
    push = heapq.heappush
    pop = heapq.heappop
    while heap:
        cur, u = pop(heap)
        if cur > dist[u]:
            continue
        uz, rem = divmod(u, h * w)
        uy, ux = divmod(rem, w)
        iu = img[u]
        for dz, dy, dx, lin, space_sq in offsets:
            vz = uz + dz
            vy = uy + dy
            vx = ux + dx
            if vz < 0 or vz >= d or vy < 0 or vy >= h or vx < 0 or vx >= w:
                continue
            v = u + lin
            di = iu - img[v]
            nd = cur + math.sqrt(alpha * space_sq + beta * di * di)
            if nd < dist[v]:
                dist[v] = nd
                push(heap, (nd, v))
    return Volume(dist.reshape(d, h, w).astype(np.float32), image.spacing)


def blend_dt(image: Volume, seeds, params: GdtParams) -> Volume:
    """Blend of spatial and intensity terms; same propagation as ``gdt``."""
    return gdt(image, seeds, params)


# ---------------------------------------------------------------------------
# Exponential distance transform
# ---------------------------------------------------------------------------


def expdt(
    dims: tuple[int, int, int],
    seeds: list[VoxelIndex] | tuple[VoxelIndex, ...],
    params: ExpParams,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> Volume:
    """Max-combined truncated Gaussian bumps around the seeds.

    value(x) = max over seeds y of gamma * exp(-sum_i (x_i - y_i)^2 / (2 sigma_i^2)),
    with a contribution forced to exactly 0 once any |x_i - y_i| exceeds
    cutoff_sigmas * sigma_i.  An empty seed set yields an all-zero map.
    """
    out = np.zeros(dims, dtype=np.float64)
    steps = spacing if params.use_physical_spacing else (1.0, 1.0, 1.0)
    radii = [int(math.floor(params.cutoff_sigmas * params.sigma[i] / steps[i])) for i in range(3)]
    axis_terms = []
    for i in range(3):
        offs = np.arange(-radii[i], radii[i] + 1, dtype=np.float64) * steps[i]
        axis_terms.append(offs * offs / (2.0 * params.sigma[i] ** 2))
    for s in seeds:
        if any(c < 0 or c >= d for c, d in zip(s, dims)):
            raise VolumeError(f"seed {s} outside grid {dims}")
        los = [max(0, s[i] - radii[i]) for i in range(3)]
        his = [min(dims[i] - 1, s[i] + radii[i]) for i in range(3)]
        terms = [
            axis_terms[i][los[i] - s[i] + radii[i] : his[i] - s[i] + radii[i] + 1]
            for i in range(3)
        ]
        bump = params.gamma * np.exp(
            -(terms[0][:, None, None] + terms[1][None, :, None] + terms[2][None, None, :])
        )
        window = tuple(slice(lo, hi + 1) for lo, hi in zip(los, his))
        np.maximum(out[window], bump, out=out[window])
    return Volume(out.astype(np.float32), spacing)


# ---------------------------------------------------------------------------
# Guide-map assembly
# ---------------------------------------------------------------------------

TRANSFORMS = ("edt", "gdt", "blend", "exp")


def empty_seed_sentinel(
    dims: tuple[int, int, int],
    spacing: tuple[float, float, float],
    use_physical_spacing: bool,
) -> float:
    """Fill value for a min-distance guide channel with no clicks: the grid diagonal."""
    steps = spacing if use_physical_spacing else (1.0, 1.0, 1.0)
    return float(math.sqrt(sum((d * s) ** 2 for d, s in zip(dims, steps))))


def make_guides(
    image: Volume,
    clicks: ClickSet,
    transform: str = "exp",
    params: GdtParams | ExpParams | None = None,
) -> GuideMaps:
    """Foreground map from positive clicks, background map from negatives.

    Min-distance transforms (edt/gdt/blend) have no meaningful value for an
    empty click list, so those channels are filled with the grid-diagonal
    sentinel; the exp transform degenerates cleanly to all zeros.
    """
    if transform not in TRANSFORMS:
        raise VolumeError(f"unknown transform {transform!r}")
    clicks.check_in_grid(image.dims)

    if transform == "exp":
        p = params if isinstance(params, ExpParams) else ExpParams()
        fg = expdt(image.dims, clicks.positives, p, image.spacing)
        bg = expdt(image.dims, clicks.negatives, p, image.spacing)
        return GuideMaps(fg, bg)

    p = params if isinstance(params, GdtParams) else GdtParams()

    def one(seeds: tuple[VoxelIndex, ...]) -> Volume:
        if not seeds:
            fill = empty_seed_sentinel(image.dims, image.spacing, p.use_physical_spacing)
            return Volume(np.full(image.dims, fill, dtype=np.float32), image.spacing)
        if transform == "edt":
            return edt(image.dims, seeds, image.spacing, p.use_physical_spacing)
        return gdt(image, seeds, p)

    return GuideMaps(one(clicks.positives), one(clicks.negatives))
