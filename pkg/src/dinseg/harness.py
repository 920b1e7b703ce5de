"""Experiment orchestration: interactive evaluation sweeps, backend
comparison, box construction, and CSV/SVG reporting.

All outputs are deterministic functions of (spec, seeds): cases are
processed in sorted order, CSV floats use fixed formatting, and the SVG
chart is assembled from plain polylines.  Synthetic phantoms stand in for
clinical data throughout, so absolute scores are repository regression
numbers, never clinical claims (the report header repeats this).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .baselines import GcParams, RwParams, graph_cut, random_walk
from .clicksim import SEGMENTER, SamplingConfig, SessionConfig, run_session
from .net.checkpoint import load_model
from .net.model import DinModel, NetConfig, predict
from .net.train import TrainConfig, train
from .phantoms import load_dataset
from .transforms import ClickSet, ExpParams, expdt
from .volume import BoundingBox, Mask, Volume, VolumeError, connected_components

REPORT_HEADER = "# synthetic phantom study; scores are repository regressions, not clinical results"

BACKENDS = ("din", "graphcut", "randomwalk", "threshold", "oracle", "empty")


@dataclass(frozen=True)
class SweepPoint:
    name: str
    sigma: tuple[float, float, float] | None = None
    n3d: int | None = None
    dim_variant: str | None = None


@dataclass
class ExperimentSpec:
    data_dir: str | Path
    out_dir: str | Path
    backend: str = "din"
    checkpoint: str | Path | None = None
    exp_params: ExpParams = field(default_factory=ExpParams)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    session: SessionConfig = field(default_factory=SessionConfig)
    sigma_sweep: tuple[tuple[float, float, float], ...] = ()
    n3d_sweep: tuple[int, ...] = ()
    dim_variant_sweep: tuple[str, ...] = ()
    use_boxes: bool = False
    gc_params: GcParams = field(default_factory=GcParams)
    rw_params: RwParams = field(default_factory=RwParams)
    # a tiny training recipe used when a sweep axis requires retraining
    net_cfg: NetConfig | None = None
    train_cfg: TrainConfig | None = None
    seed: int = 0

    def sweep_points(self) -> list[SweepPoint]:
        points: list[SweepPoint] = []
        for s in self.sigma_sweep:
            points.append(SweepPoint(name=f"sigma_{s[0]:g}_{s[1]:g}_{s[2]:g}", sigma=tuple(s)))
        for n in self.n3d_sweep:
            points.append(SweepPoint(name=f"n3d_{n}", n3d=n))
        for v in self.dim_variant_sweep:
            points.append(SweepPoint(name=f"dim_{v}", dim_variant=v))
        return points or [SweepPoint(name="default")]


# ---------------------------------------------------------------------------
# Bounding boxes
# ---------------------------------------------------------------------------


def build_boxes(
    gt: Mask,
    min_extent: int = 128,
    max_boxes: int = 5,
) -> list[BoundingBox]:
    """Group lesions into at most ``max_boxes`` boxes covering all foreground.

    In-plane extents are grown to at least min(min_extent, grid extent),
    depth stays tight; the nearest pair (by box centers) is merged greedily
    until the budget holds.
    """
    labels, count = connected_components(gt, 26)
    if count == 0:
        return []
    d, h, w = gt.dims
    raw = []
    for lab in range(1, count + 1):
        coords = np.argwhere(labels == lab)
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        raw.append((lo, hi))

    def centers(boxes):
        return np.array([[(l[i] + h_[i]) / 2.0 for i in range(3)] for l, h_ in boxes])

    while len(raw) > max_boxes:
        c = centers(raw)
        best = None
        for i in range(len(raw)):
            for j in range(i + 1, len(raw)):
                dist = float(np.sum((c[i] - c[j]) ** 2))
                if best is None or dist < best[0]:
                    best = (dist, i, j)
        _, i, j = best
        lo = np.minimum(raw[i][0], raw[j][0])
        hi = np.maximum(raw[i][1], raw[j][1])
        raw = [b for k, b in enumerate(raw) if k not in (i, j)] + [(lo, hi)]

    boxes = []
    for lo, hi in raw:
        lo = lo.copy()
        hi = hi.copy()
        for ax, extent in ((1, h), (2, w)):
            want = min(min_extent, extent)
            have = hi[ax] - lo[ax] + 1
            if have < want:
                grow = want - have
                lo[ax] = max(0, lo[ax] - grow // 2)
                hi[ax] = lo[ax] + want - 1
                if hi[ax] >= extent:
                    hi[ax] = extent - 1
                    lo[ax] = extent - want
        boxes.append(BoundingBox(tuple(int(v) for v in lo), tuple(int(v) for v in hi)))
    return boxes


# ---------------------------------------------------------------------------
# Backends (session callbacks)
# ---------------------------------------------------------------------------


def threshold_backend(
    image: Volume,
    exp_params: ExpParams,
    tolerance: float = 0.18,
) -> SEGMENTER:
    """Click-driven intensity thresholding: voxels near a positive click's
    intensity, inside the region where the positive guide dominates."""

    def segment(clicks: ClickSet) -> Mask:
        if not clicks.positives:
            return Mask(np.zeros(image.dims, dtype=bool), image.spacing)
        fg = expdt(image.dims, clicks.positives, exp_params).data
        bg = expdt(image.dims, clicks.negatives, exp_params).data
        ref = np.array([image.data[p] for p in clicks.positives], dtype=np.float32)
        close = np.min(
            np.abs(image.data[None] - ref[:, None, None, None]), axis=0
        ) <= tolerance
        vicinity = (fg > bg) & (fg > 1e-3)
        return Mask(close & vicinity, image.spacing)

    return segment


def _shell_negatives(box: BoundingBox) -> list[tuple[int, int, int]]:
    """Implicit background seeds for box-based baselines: corners + face centers."""
    z0, y0, x0 = box.min
    z1, y1, x1 = box.max
    cz, cy, cx = (z0 + z1) // 2, (y0 + y1) // 2, (x0 + x1) // 2
    pts = {
        (z, y, x)
        for z in (z0, z1)
        for y in (y0, y1)
        for x in (x0, x1)
    }
    pts |= {(z0, cy, cx), (z1, cy, cx), (cz, y0, cx), (cz, y1, cx), (cz, cy, x0), (cz, cy, x1)}
    return sorted(pts)


def classical_backend(
    image: Volume,
    method: str,
    boxes: Sequence[BoundingBox],
    gc_params: GcParams,
    rw_params: RwParams,
) -> SEGMENTER:
    """Graph cut / random walk over user boxes.

    A box with no positive click stays empty; a box with no negative click
    gets the box shell (corners + face centers) as implicit background
    seeds, mirroring how box-style tools treat the box exterior.
    """
    if not boxes:
        raise VolumeError("classical backends need at least one bounding box")

    def segment(clicks: ClickSet) -> Mask:
        out = np.zeros(image.dims, dtype=bool)
        for box in boxes:
            pos = [p for p in clicks.positives if box.contains(p)]
            if not pos:
                continue
            neg = [p for p in clicks.negatives if box.contains(p)]
            if not neg:
                neg = [p for p in _shell_negatives(box) if p not in set(pos)]
            boxed = ClickSet(tuple(pos), tuple(neg))
            if method == "graphcut":
                m = graph_cut(image, boxed, box, gc_params)
            else:
                _, m = random_walk(image, boxed, box, rw_params)
            out |= m.data
        return Mask(out, image.spacing)

    return segment


def din_backend(
    model: DinModel,
    image: Volume,
    exp_params: ExpParams,
    boxes: Sequence[BoundingBox] | None = None,
) -> SEGMENTER:
    def segment(clicks: ClickSet) -> Mask:
        return predict(model, image, clicks, exp_params, list(boxes) if boxes else None)

    return segment


def make_server_factory(
    backend: str,
    model: DinModel | None = None,
    gc_params: GcParams = GcParams(),
    rw_params: RwParams = RwParams(),
):
    """Backend factory for the HTTP service: (volume, exp params, boxes) -> segmenter."""

    def factory(volume: Volume, exp_params: ExpParams, boxes) -> SEGMENTER:
        if backend == "din":
            if model is None:
                raise VolumeError("din backend needs a checkpoint")
            return din_backend(model, volume, exp_params, boxes)
        if backend in ("graphcut", "randomwalk"):
            if not boxes:
                # classical solvers need a region of interest first
                return lambda clicks: Mask(np.zeros(volume.dims, dtype=bool), volume.spacing)
            return classical_backend(volume, backend, boxes, gc_params, rw_params)
        return threshold_backend(volume, exp_params)

    return factory


def make_backend(
    name: str,
    image: Volume,
    gt: Mask,
    exp_params: ExpParams,
    model: DinModel | None = None,
    boxes: Sequence[BoundingBox] | None = None,
    gc_params: GcParams = GcParams(),
    rw_params: RwParams = RwParams(),
) -> SEGMENTER:
    if name == "din":
        if model is None:
            raise VolumeError("din backend needs a model")
        return din_backend(model, image, exp_params, boxes)
    if name in ("graphcut", "randomwalk"):
        return classical_backend(image, name, boxes or build_boxes(gt), gc_params, rw_params)
    if name == "threshold":
        return threshold_backend(image, exp_params)
    if name == "oracle":
        return lambda clicks: Mask(gt.data.copy(), gt.spacing)
    if name == "empty":
        return lambda clicks: Mask(np.zeros(gt.dims, dtype=bool), gt.spacing)
    raise VolumeError(f"unknown backend {name!r}; choose from {BACKENDS}")


# ---------------------------------------------------------------------------
# SVG chart
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def write_svg_curves(
    path: str | Path,
    series: dict[str, list[tuple[float, float]]],
    title: str,
    xlabel: str = "clicks",
    ylabel: str = "mean DSC",
) -> None:
    """Minimal line chart: axes, ticks, one polyline + legend entry per series."""
    width, height = 640, 420
    ml, mr, mt, mb = 60, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs = [x for pts in series.values() for x, _ in pts] or [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    y_lo, y_hi = 0.0, 1.0

    def px(x: float) -> float:
        return ml + pw * (x - x_lo) / (x_hi - x_lo)

    def py(y: float) -> float:
        return mt + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{mt + ph / 2:.1f}" font-size="12" transform="rotate(-90 16 {mt + ph / 2:.1f})" text-anchor="middle">{ylabel}</text>',
    ]
    for i in range(5):
        y = y_lo + (y_hi - y_lo) * i / 4
        parts.append(
            f'<line x1="{ml - 4}" y1="{py(y):.1f}" x2="{ml}" y2="{py(y):.1f}" stroke="black"/>'
            f'<text x="{ml - 8}" y="{py(y) + 4:.1f}" text-anchor="end" font-size="10">{y:.2f}</text>'
        )
    n_xticks = min(10, int(x_hi - x_lo))
    for i in range(n_xticks + 1):
        x = x_lo + (x_hi - x_lo) * i / max(n_xticks, 1)
        parts.append(
            f'<line x1="{px(x):.1f}" y1="{mt + ph}" x2="{px(x):.1f}" y2="{mt + ph + 4}" stroke="black"/>'
            f'<text x="{px(x):.1f}" y="{mt + ph + 16}" text-anchor="middle" font-size="10">{x:.0f}</text>'
        )
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 + 14 * i
        parts.append(
            f'<line x1="{ml + pw - 140}" y1="{ly}" x2="{ml + pw - 120}" y2="{ly}" stroke="{color}" stroke-width="1.5"/>'
            f'<text x="{ml + pw - 114}" y="{ly + 4}" font-size="11">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _train_for_point(spec: ExperimentSpec, point: SweepPoint, dataset) -> DinModel:
    if spec.net_cfg is None or spec.train_cfg is None:
        raise VolumeError(f"sweep point {point.name} needs net_cfg/train_cfg to retrain")
    net_cfg = spec.net_cfg
    sampling = spec.sampling
    if point.dim_variant is not None:
        net_cfg = replace(net_cfg, dim_variant=point.dim_variant)
    if point.n3d is not None:
        sampling = replace(sampling, n3d_override=point.n3d)
    model = DinModel(net_cfg, seed=spec.seed)
    result = train(model, dataset, spec.train_cfg, sampling, spec.exp_params)
    return result.restore_best()


def evaluate(spec: ExperimentSpec) -> dict[str, list[float]]:
    """Run interactive sessions for every (sweep point, case); emit
    ``cases/*.csv``, ``summary.csv`` and ``curve.svg`` under the output
    directory.  Returns mean DSC per click count per sweep point."""
    dataset = load_dataset(spec.data_dir)
    out_dir = Path(spec.out_dir)
    (out_dir / "cases").mkdir(parents=True, exist_ok=True)

    base_model: DinModel | None = None
    if spec.backend == "din" and spec.checkpoint is not None:
        base_model, _ = load_model(spec.checkpoint)

    curves: dict[str, list[float]] = {}
    summary_rows: list[str] = []
    for point in spec.sweep_points():
        exp_params = spec.exp_params
        if point.sigma is not None:
            exp_params = replace(exp_params, sigma=point.sigma)
        model = base_model
        if point.n3d is not None or point.dim_variant is not None:
            model = _train_for_point(spec, point, dataset)
        elif spec.backend == "din" and model is None:
            raise VolumeError("din backend needs a checkpoint")

        per_click = np.zeros(spec.session.max_clicks)
        for case_id, (vol, gt) in enumerate(dataset):
            boxes = build_boxes(gt) if spec.use_boxes else None
            segmenter = make_backend(
                spec.backend, vol, gt, exp_params, model, boxes, spec.gc_params, spec.rw_params
            )
            trace = run_session(segmenter, gt, spec.session)
            case_path = out_dir / "cases" / f"{point.name}_case_{case_id:03d}.csv"
            lines = ["click_index,polarity,z,y,x,dsc"] + [s.csv_row() for s in trace]
            case_path.write_text("\n".join(lines) + "\n")
            # sessions that halt early hold their final DSC for the remaining budget
            scores = [s.dsc for s in trace]
            last = scores[-1] if scores else 0.0
            padded = scores + [last] * (spec.session.max_clicks - len(scores))
            per_click += np.array(padded)

        per_click /= len(dataset)
        curves[point.name] = [float(v) for v in per_click]
        for k, v in enumerate(per_click, start=1):
            summary_rows.append(f"{point.name},{k},{v:.6f}")

    summary = [REPORT_HEADER, "point,click_index,mean_dsc"] + summary_rows
    (out_dir / "summary.csv").write_text("\n".join(summary) + "\n")
    write_svg_curves(
        out_dir / "curve.svg",
        {name: [(k + 1.0, v) for k, v in enumerate(vals)] for name, vals in curves.items()},
        title="mean DSC vs clicks",
    )
    return curves


def compare(spec: ExperimentSpec, backends: Sequence[str]) -> list[dict]:
    """Side-by-side backends: DSC at the click cap, clicks to the DSC
    threshold (capped), and wall time per interaction.  Per-case failures
    are recorded, not fatal."""
    dataset = load_dataset(spec.data_dir)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model: DinModel | None = None
    if "din" in backends and spec.checkpoint is not None:
        model, _ = load_model(spec.checkpoint)

    rows: list[dict] = []
    case_lines = ["backend,case,final_dsc,clicks_to_threshold,seconds_per_interaction,error"]
    for backend in backends:
        dscs, clicks_needed, secs = [], [], []
        for case_id, (vol, gt) in enumerate(dataset):
            boxes = build_boxes(gt) if (spec.use_boxes or backend in ("graphcut", "randomwalk")) else None
            try:
                inner = make_backend(
                    backend, vol, gt, spec.exp_params, model, boxes, spec.gc_params, spec.rw_params
                )
                times: list[float] = []

                def timed(clicks: ClickSet) -> Mask:
                    t0 = time.perf_counter()
                    out = inner(clicks)
                    times.append(time.perf_counter() - t0)
                    return out

                trace = run_session(timed, gt, spec.session)
                final = trace[-1].dsc if trace else metrics.dsc(gt, gt)
                reached = [s.click_index for s in trace if s.dsc >= spec.session.dsc_threshold]
                needed = reached[0] if reached else spec.session.max_clicks
                sec = float(np.mean(times)) if times else 0.0
                dscs.append(final)
                clicks_needed.append(needed)
                secs.append(sec)
                case_lines.append(f"{backend},{case_id},{final:.6f},{needed},{sec:.6f},")
            except Exception as exc:  # per-case failure stays in the report
                case_lines.append(f"{backend},{case_id},,,,{type(exc).__name__}: {exc}")
        rows.append(
            {
                "backend": backend,
                "mean_dsc_at_cap": float(np.mean(dscs)) if dscs else float("nan"),
                "mean_clicks_to_threshold": float(np.mean(clicks_needed)) if clicks_needed else float("nan"),
                "mean_seconds_per_interaction": float(np.mean(secs)) if secs else float("nan"),
                "cases_ok": len(dscs),
            }
        )

    (out_dir / "compare_cases.csv").write_text("\n".join(case_lines) + "\n")
    table = [REPORT_HEADER, "backend,mean_dsc_at_cap,mean_clicks_to_threshold,mean_seconds_per_interaction,cases_ok"]
    for r in rows:
        table.append(
            f"{r['backend']},{r['mean_dsc_at_cap']:.6f},{r['mean_clicks_to_threshold']:.3f},"
            f"{r['mean_seconds_per_interaction']:.6f},{r['cases_ok']}"
        )
    (out_dir / "compare.csv").write_text("\n".join(table) + "\n")
    return rows
