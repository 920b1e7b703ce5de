"""Overlap and volume-difference metrics between binary segmentations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Mask, VolumeError


def _check_dims(p: Mask, q: Mask) -> None:
    if p.dims != q.dims:
        raise VolumeError(f"mask dims differ: {p.dims} vs {q.dims}")


def dsc(p: Mask, q: Mask) -> float:
    """Dice similarity 2|P & Q| / (|P| + |Q|); 1.0 when both masks are empty."""
    _check_dims(p, q)
    np_, nq = p.count(), q.count()
    if np_ == 0 and nq == 0:
        return 1.0
    inter = int(np.logical_and(p.data, q.data).sum())
    return 2.0 * inter / (np_ + nq)


def voe(p: Mask, q: Mask) -> float:
    """Volumetric overlap error 1 - |P & Q| / |P | Q|; 0.0 when both are empty."""
    _check_dims(p, q)
    union = int(np.logical_or(p.data, q.data).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(p.data, q.data).sum())
    return 1.0 - inter / union


def vd(p: Mask, q: Mask) -> int:
    """Signed volume difference |P| - |Q| in voxels."""
    _check_dims(p, q)
    return p.count() - q.count()


def arvd(p: Mask, q: Mask) -> float:
    """Absolute relative volume difference abs(|P| - |Q|) / |Q|."""
    _check_dims(p, q)
    nq = q.count()
    if nq == 0:
        raise VolumeError("arvd needs a non-empty reference mask")
    return abs(p.count() - nq) / nq


def rvd(p: Mask, q: Mask) -> float:
    """Relative volume difference 2 * abs(|P| - |Q|) / (|P| + |Q|)."""
    _check_dims(p, q)
    np_, nq = p.count(), q.count()
    if nq == 0:
        raise VolumeError("rvd needs a non-empty reference mask")
    return 2.0 * abs(np_ - nq) / (np_ + nq)


@dataclass
class MetricReport:
    dsc: float
    voe: float
    arvd: float
    vd: int
    rvd: float
    clicks_fg: int = 0
    clicks_bg: int = 0

    CSV_HEADER = "dsc,voe,arvd,vd,rvd,clicks_fg,clicks_bg"

    def csv_row(self) -> str:
        return (
            f"{self.dsc:.6f},{self.voe:.6f},{self.arvd:.6f},"
            f"{self.vd},{self.rvd:.6f},{self.clicks_fg},{self.clicks_bg}"
        )


def report(pred: Mask, gt: Mask, clicks_fg: int = 0, clicks_bg: int = 0) -> MetricReport:
    return MetricReport(
        dsc=dsc(pred, gt),
        voe=voe(pred, gt),
        arvd=arvd(pred, gt),
        vd=vd(pred, gt),
        rvd=rvd(pred, gt),
        clicks_fg=clicks_fg,
        clicks_bg=clicks_bg,
    )
