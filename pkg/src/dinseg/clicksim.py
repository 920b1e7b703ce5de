"""Simulated user interactions.

Two regimes:

* training -- random clicks under geometric constraints: positives inside
  the foreground eroded per slice by ``d_margin`` (erosion skipped for
  components thinner than ``2 * d_margin`` in-plane so small targets stay
  clickable), negatives from the whole background and/or a band of
  background voxels within ``bandwidth_w`` of the foreground, and a hard
  per-axis minimum spacing between any two same-polarity clicks.
* evaluation -- error-driven: the next click lands at the centroid of the
  largest remaining error region, falling back to the nearest skeleton
  voxel when the centroid falls outside the (concave) region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from . import metrics
from .transforms import ClickSet, edt_mask
from .volume import Mask, VolumeError, VoxelIndex, centroid, connected_components, skeletonize


@dataclass(frozen=True)
class SamplingConfig:
    n_pos_2d: int = 5
    n_neg_2d: int = 5
    bandwidth_w: int = 40
    d_margin: int = 3
    min_spacing: tuple[int, int, int] = (1, 10, 10)
    neg_strategy: str = "mixed"  # whole_background | band_uniform | mixed
    seed: int = 0
    n3d_override: int | None = None  # pin the 3D budget directly (sweep knob)

    def __post_init__(self) -> None:
        if self.n_pos_2d < 1 or self.n_neg_2d < 1:
            raise VolumeError("click counts must be >= 1")
        if any(s < 1 for s in self.min_spacing):
            raise VolumeError("min_spacing components must be >= 1")
        if self.neg_strategy not in ("whole_background", "band_uniform", "mixed"):
            raise VolumeError(f"unknown neg_strategy {self.neg_strategy!r}")

    @property
    def pos_budget(self) -> int:
        return self.n3d_override if self.n3d_override is not None else budget_3d(self.n_pos_2d)

    @property
    def neg_budget(self) -> int:
        return self.n3d_override if self.n3d_override is not None else budget_3d(self.n_neg_2d)


@dataclass(frozen=True)
class SessionConfig:
    max_clicks: int = 20
    dsc_threshold: float = 0.8

    def __post_init__(self) -> None:
        if self.max_clicks < 1:
            raise VolumeError("max_clicks must be >= 1")
        if not (0.0 < self.dsc_threshold <= 1.0):
            raise VolumeError("dsc_threshold must be in (0, 1]")


def budget_3d(n_2d: int) -> int:
    """3D click budget: round-half-up of n^(3/2), at least 1."""
    if n_2d < 1:
        raise VolumeError("n_2d must be >= 1")
    return max(1, int(math.floor(n_2d ** 1.5 + 0.5)))


def background_band(gt: Mask, w: int) -> Mask:
    """Background voxels strictly closer than ``w`` (voxel units) to the foreground."""
    if not gt.data.any():
        raise VolumeError("background band of an empty ground truth is undefined")
    dist = edt_mask(gt, use_physical_spacing=False).data
    return Mask((dist > 0) & (dist < w), gt.spacing)


# ---------------------------------------------------------------------------
# Training-click sampling
# ---------------------------------------------------------------------------


def _positive_region(gt: Mask, d_margin: int) -> np.ndarray:
    """Foreground eroded per slice, component-wise; thin components keep full extent."""
    if d_margin == 0:
        return gt.data.copy()
    labels, count = connected_components(gt, 26)
    region = np.zeros_like(gt.data)
    size = 2 * d_margin + 1
    structure = np.ones((1, size, size), dtype=bool)
    for lab in range(1, count + 1):
        comp = labels == lab
        coords = np.argwhere(comp)
        ey = int(coords[:, 1].max() - coords[:, 1].min() + 1)
        ex = int(coords[:, 2].max() - coords[:, 2].min() + 1)
        if min(ey, ex) < 2 * d_margin:
            region |= comp
        else:
            region |= ndimage.binary_erosion(comp, structure=structure)
    return region


def _negative_margin(gt: Mask, d_margin: int) -> np.ndarray:
    """Background voxels allowed for negatives: outside the per-slice dilation of F."""
    if d_margin == 0:
        return ~gt.data
    size = 2 * d_margin + 1
    structure = np.ones((1, size, size), dtype=bool)
    dilated = ndimage.binary_dilation(gt.data, structure=structure)
    return ~dilated


def _spacing_ok(cand: np.ndarray, chosen: list[np.ndarray], min_spacing: tuple[int, int, int]) -> bool:
    for c in chosen:
        if all(abs(int(cand[i]) - int(c[i])) >= min_spacing[i] for i in range(3)):
            continue
        return False
    return True


def _greedy_pick(
    candidates: np.ndarray,
    count: int,
    min_spacing: tuple[int, int, int],
    rng: np.random.Generator,
) -> list[VoxelIndex]:
    if candidates.shape[0] == 0 or count == 0:
        return []
    order = rng.permutation(candidates.shape[0])
    chosen: list[np.ndarray] = []
    for idx in order:
        cand = candidates[idx]
        if _spacing_ok(cand, chosen, min_spacing):
            chosen.append(cand)
            if len(chosen) == count:
                break
    return [tuple(int(v) for v in c) for c in chosen]


def _farthest_point_pick(
    candidates: np.ndarray,
    count: int,
    min_spacing: tuple[int, int, int],
    rng: np.random.Generator,
) -> list[VoxelIndex]:
    """Evenly spread picks: each new point maximizes its min distance to the rest."""
    if candidates.shape[0] == 0 or count == 0:
        return []
    pts = candidates.astype(np.float64)
    first = int(rng.integers(candidates.shape[0]))
    chosen = [candidates[first]]
    min_d2 = np.sum((pts - pts[first]) ** 2, axis=1)
    while len(chosen) < count:
        ok = np.array([_spacing_ok(candidates[i], chosen, min_spacing) for i in range(len(candidates))])
        if not ok.any():
            break
        masked = np.where(ok, min_d2, -1.0)
        best = int(np.argmax(masked))  # first occurrence = lexicographically smallest coord
        if masked[best] < 0:
            break
        chosen.append(candidates[best])
        min_d2 = np.minimum(min_d2, np.sum((pts - pts[best]) ** 2, axis=1))
    return [tuple(int(v) for v in c) for c in chosen]


def sample_training_clicks(
    gt: Mask,
    cfg: SamplingConfig,
    rng: Optional[np.random.Generator] = None,
) -> ClickSet:
    """Random positives/negatives under the geometric constraints above.

    Positive count ~ uniform{1..budget_3d(n_pos_2d)}, negative count ~
    uniform{0..budget_3d(n_neg_2d)}; counts degrade gracefully when the
    spacing constraint exhausts the candidate region.
    """
    if not gt.data.any():
        raise VolumeError("cannot sample clicks for an empty ground truth")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    pos_region = _positive_region(gt, cfg.d_margin)
    if not pos_region.any():
        raise VolumeError("foreground vanished under the margin erosion")
    n_pos = int(rng.integers(1, cfg.pos_budget + 1))
    positives = _greedy_pick(np.argwhere(pos_region), n_pos, cfg.min_spacing, rng)

    strategy = cfg.neg_strategy
    if strategy == "mixed":
        strategy = "whole_background" if rng.integers(2) == 0 else "band_uniform"
    neg_allowed = _negative_margin(gt, cfg.d_margin)
    if strategy == "band_uniform":
        neg_allowed &= background_band(gt, cfg.bandwidth_w).data
    n_neg = int(rng.integers(0, cfg.neg_budget + 1))
    neg_candidates = np.argwhere(neg_allowed)
    if strategy == "band_uniform":
        negatives = _farthest_point_pick(neg_candidates, n_neg, cfg.min_spacing, rng)
    else:
        negatives = _greedy_pick(neg_candidates, n_neg, cfg.min_spacing, rng)

    return ClickSet(tuple(positives), tuple(negatives))


# ---------------------------------------------------------------------------
# Evaluation: error-driven next click
# ---------------------------------------------------------------------------


def next_click(pred: Mask, gt: Mask) -> Optional[tuple[str, VoxelIndex]]:
    """Click for the largest error region, or None when pred equals gt.

    False-negative and false-positive regions are labeled separately so a
    positive click can never land outside the ground truth and vice versa;
    ties between equally large regions go to the lexicographically smallest
    centroid.
    """
    if pred.dims != gt.dims:
        raise VolumeError(f"mask dims differ: {pred.dims} vs {gt.dims}")
    fn = gt.data & ~pred.data
    fp = pred.data & ~gt.data
    best: tuple[int, tuple[float, float, float], np.ndarray, str] | None = None
    for err, polarity in ((fn, "positive"), (fp, "negative")):
        if not err.any():
            continue
        labels, count = connected_components(Mask(err, gt.spacing), 26)
        sizes = np.bincount(labels.ravel(), minlength=count + 1)
        for lab in range(1, count + 1):
            comp = labels == lab
            c = np.argwhere(comp).mean(axis=0)
            key = (int(sizes[lab]), tuple(float(v) for v in c))
            if best is None or key[0] > best[0] or (key[0] == best[0] and key[1] < best[1]):
                best = (key[0], key[1], comp, polarity)
    if best is None:
        return None
    _, c, comp, polarity = best
    rounded = tuple(int(v) for v in np.floor(np.asarray(c) + 0.5))
    if comp[rounded]:
        return polarity, rounded  # type: ignore[return-value]
    skel = skeletonize(Mask(comp, gt.spacing)).data
    coords = np.argwhere(skel)
    d2 = np.sum((coords.astype(np.float64) - np.asarray(c)) ** 2, axis=1)
    nearest = coords[int(np.argmin(d2))]  # argmin keeps the lexicographically smallest tie
    return polarity, tuple(int(v) for v in nearest)  # type: ignore[return-value]


@dataclass
class SessionStep:
    click_index: int
    polarity: str
    index: VoxelIndex
    dsc: float

    def csv_row(self) -> str:
        z, y, x = self.index
        return f"{self.click_index},{self.polarity},{z},{y},{x},{self.dsc:.6f}"


SEGMENTER = Callable[[ClickSet], Mask]


def run_session(segmenter: SEGMENTER, gt: Mask, cfg: SessionConfig) -> list[SessionStep]:
    """Alternating click/re-predict loop against a prediction callback.

    Starts from an empty prediction; halts when the DSC threshold is met,
    the click budget is exhausted, or no error region remains.
    """
    pred = Mask(np.zeros(gt.dims, dtype=bool), gt.spacing)
    clicks = ClickSet()
    trace: list[SessionStep] = []
    for i in range(1, cfg.max_clicks + 1):
        step = next_click(pred, gt)
        if step is None:
            break
        polarity, idx = step
        if idx in clicks.positives or idx in clicks.negatives:
            break  # the segmenter ignored this click once already; nothing new to say
        clicks = clicks.add(polarity, idx)
        pred = segmenter(clicks)
        if pred.dims != gt.dims:
            raise VolumeError(f"segmenter returned dims {pred.dims}, expected {gt.dims}")
        score = metrics.dsc(pred, gt)
        trace.append(SessionStep(i, polarity, idx, score))
        if score >= cfg.dsc_threshold:
            break
    return trace
