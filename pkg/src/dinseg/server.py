"""Session-oriented HTTP service for interactive segmentation.

JSON in and out everywhere; volume payloads travel as base64-encoded
little-endian float32 (the raw+json schema over the wire).  Every mutation
carries the client's last-seen revision and fails with 409 on a mismatch,
so two tabs cannot silently interleave.  Mutations are serialized behind a
per-session lock and publish an immutable snapshot; readers render from
whatever snapshot is current without locking.
"""

from __future__ import annotations

import base64
import io
import threading
import uuid
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from . import metrics
from .clicksim import SEGMENTER
from .transforms import ClickSet, ExpParams
from .volume import BoundingBox, Mask, Volume, VolumeError

BackendFactory = Callable[[Volume, ExpParams, Sequence[BoundingBox] | None], SEGMENTER]

DEFAULT_SIGMA = (1.0, 5.0, 5.0)


# ---------------------------------------------------------------------------
# Contours (pixel-boundary tracing)
# ---------------------------------------------------------------------------


def trace_contours(mask2d: np.ndarray) -> list[list[tuple[float, float]]]:
    """Closed polylines along pixel boundaries of a binary slice.

    Edges run with foreground on the left; junctions prefer the left turn,
    so each loop encloses one 4-connected region.  A single pixel yields
    one square 4-segment loop through its corner points.
    """
    h, w = mask2d.shape
    fg = mask2d.astype(bool)
    pad = np.zeros((h + 2, w + 2), dtype=bool)
    pad[1:-1, 1:-1] = fg
    edges: dict[tuple[float, float, float, float], tuple[float, float]] = {}

    rows, cols = np.nonzero(fg)
    for r, c in zip(rows.tolist(), cols.tolist()):
        pr, pc = r + 1, c + 1
        if not pad[pr - 1, pc]:  # north side: head west
            edges[(r - 0.5, c + 0.5, 0.0, -1.0)] = (r - 0.5, c - 0.5)
        if not pad[pr + 1, pc]:  # south side: head east
            edges[(r + 0.5, c - 0.5, 0.0, 1.0)] = (r + 0.5, c + 0.5)
        if not pad[pr, pc - 1]:  # west side: head south
            edges[(r - 0.5, c - 0.5, 1.0, 0.0)] = (r + 0.5, c - 0.5)
        if not pad[pr, pc + 1]:  # east side: head north
            edges[(r + 0.5, c + 0.5, -1.0, 0.0)] = (r - 0.5, c + 0.5)

    loops: list[list[tuple[float, float]]] = []
    while edges:
        start_key = min(edges)
        loop = [(start_key[0], start_key[1])]
        key = start_key
        while True:
            end = edges.pop(key)
            loop.append(end)
            d = (key[2], key[3])
            # left turn, straight, right turn
            for nd in ((-d[1], d[0]), d, (d[1], -d[0])):
                nk = (end[0], end[1], float(nd[0]), float(nd[1]))
                if nk in edges:
                    key = nk
                    break
            else:
                break
        loops.append(loop)
    return loops


# ---------------------------------------------------------------------------
# Session state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Snapshot:
    revision: int
    events: tuple[tuple[str, tuple[int, int, int]], ...]  # ordered click log
    boxes: tuple[BoundingBox, ...]
    sigma: tuple[float, float, float]
    prediction: Mask

    @property
    def clicks(self) -> ClickSet:
        pos = tuple(i for p, i in self.events if p == "positive")
        neg = tuple(i for p, i in self.events if p == "negative")
        return ClickSet(pos, neg)


class Session:
    def __init__(self, volume: Volume, backend_factory: BackendFactory):
        self.id = uuid.uuid4().hex[:12]
        self.volume = volume
        self.gt: Mask | None = None
        self._factory = backend_factory
        self.lock = threading.Lock()
        empty = Mask(np.zeros(volume.dims, dtype=bool), volume.spacing)
        self.snapshot = Snapshot(0, (), (), DEFAULT_SIGMA, empty)

    def mutate(self, expected_revision: int, **changes) -> Snapshot:
        with self.lock:
            cur = self.snapshot
            if expected_revision != cur.revision:
                raise RevisionConflict(cur.revision)
            nxt = replace(cur, revision=cur.revision + 1, **changes)
            segmenter = self._factory(
                self.volume, ExpParams(sigma=nxt.sigma), nxt.boxes or None
            )
            pred = segmenter(nxt.clicks)
            nxt = replace(nxt, prediction=pred)
            self.snapshot = nxt
            return nxt


class RevisionConflict(Exception):
    def __init__(self, current: int):
        super().__init__(f"revision mismatch, server is at {current}")
        self.current = current


# ---------------------------------------------------------------------------
# Wire helpers
# ---------------------------------------------------------------------------


def _decode_volume(body: "VolumeUpload") -> Volume:
    dims = tuple(int(v) for v in body.dims)
    if len(dims) != 3:
        raise VolumeError(f"dims must have 3 entries, got {body.dims}")
    try:
        payload = base64.b64decode(body.data_b64, validate=True)
    except Exception as e:
        raise VolumeError(f"bad base64 payload: {e}") from e
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise VolumeError(f"data-length mismatch: dims {dims} need {expected} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return Volume(data, tuple(body.spacing))


def _encode_mask(m: Mask) -> dict:
    return {
        "dims": list(m.dims),
        "spacing": list(m.spacing),
        "dtype": "f32",
        "order": "zyx",
        "data_b64": base64.b64encode(m.to_volume().data.astype("<f4").tobytes()).decode(),
    }


class VolumeUpload(BaseModel):
    dims: list[int]
    spacing: list[float] = [1.0, 1.0, 1.0]
    data_b64: str


class ClickBody(BaseModel):
    revision: int
    polarity: str
    index: list[int]


class BoxesBody(BaseModel):
    revision: int
    boxes: list[list[int]]  # [zmin, ymin, xmin, zmax, ymax, xmax]


class SigmaBody(BaseModel):
    revision: int
    sigma: list[float]


class RevisionBody(BaseModel):
    revision: int


# ---------------------------------------------------------------------------
# App
# ---------------------------------------------------------------------------


def default_backend_factory(volume: Volume, exp_params: ExpParams, boxes) -> SEGMENTER:
    from .harness import threshold_backend

    return threshold_backend(volume, exp_params)


def create_app(
    backend_factory: BackendFactory | None = None,
    static_dir: str | None = None,
) -> FastAPI:
    factory = backend_factory or default_backend_factory
    app = FastAPI(title="dinseg")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()

    def get_session(sid: str) -> Session:
        with registry_lock:
            s = sessions.get(sid)
        if s is None:
            raise HTTPException(404, f"unknown session {sid}")
        return s

    def conflict(exc: RevisionConflict) -> JSONResponse:
        return JSONResponse({"error": str(exc), "revision": exc.current}, status_code=409)

    @app.post("/sessions")
    def create_session(body: VolumeUpload):
        try:
            vol = _decode_volume(body)
        except VolumeError as e:
            raise HTTPException(400, str(e))
        s = Session(vol, factory)
        with registry_lock:
            sessions[s.id] = s
        return {
            "session_id": s.id,
            "dims": list(vol.dims),
            "spacing": list(vol.spacing),
            "revision": 0,
            "sigma": list(DEFAULT_SIGMA),
        }

    def _state_payload(s: Session) -> dict:
        snap = s.snapshot
        return {
            "revision": snap.revision,
            "dims": list(s.volume.dims),
            "spacing": list(s.volume.spacing),
            "sigma": list(snap.sigma),
            "clicks": [{"polarity": p, "index": list(i)} for p, i in snap.events],
            "boxes": [list(b.min) + list(b.max) for b in snap.boxes],
            "has_ground_truth": s.gt is not None,
            "prediction_voxels": s.snapshot.prediction.count(),
        }

    @app.get("/sessions/{sid}/state")
    def get_state(sid: str):
        return _state_payload(get_session(sid))

    @app.post("/sessions/{sid}/clicks")
    def add_click(sid: str, body: ClickBody):
        s = get_session(sid)
        idx = tuple(int(v) for v in body.index)
        if body.polarity not in ("positive", "negative"):
            raise HTTPException(400, f"bad polarity {body.polarity!r}")
        if len(idx) != 3 or any(c < 0 or c >= d for c, d in zip(idx, s.volume.dims)):
            raise HTTPException(400, f"click {idx} outside grid {s.volume.dims}")
        try:
            snap = s.mutate(body.revision, events=s.snapshot.events + ((body.polarity, idx),))
        except RevisionConflict as e:
            return conflict(e)
        except VolumeError as e:
            raise HTTPException(400, str(e))
        return _state_payload(s)

    @app.post("/sessions/{sid}/boxes")
    def set_boxes(sid: str, body: BoxesBody):
        s = get_session(sid)
        try:
            boxes = tuple(
                BoundingBox((b[0], b[1], b[2]), (b[3], b[4], b[5])) for b in body.boxes
            )
            for b in boxes:
                b.check_within(s.volume.dims)
            s.mutate(body.revision, boxes=boxes)
        except RevisionConflict as e:
            return conflict(e)
        except (VolumeError, IndexError) as e:
            raise HTTPException(400, str(e))
        return _state_payload(s)

    @app.post("/sessions/{sid}/sigma")
    def set_sigma(sid: str, body: SigmaBody):
        s = get_session(sid)
        if len(body.sigma) != 3 or any(v <= 0 for v in body.sigma):
            raise HTTPException(400, "sigma must be three positive floats")
        try:
            s.mutate(body.revision, sigma=tuple(float(v) for v in body.sigma))
        except RevisionConflict as e:
            return conflict(e)
        return _state_payload(s)

    @app.post("/sessions/{sid}/undo")
    def undo(sid: str, body: RevisionBody):
        s = get_session(sid)
        events = s.snapshot.events
        try:
            s.mutate(body.revision, events=events[:-1] if events else events)
        except RevisionConflict as e:
            return conflict(e)
        return _state_payload(s)

    @app.post("/sessions/{sid}/reset")
    def reset(sid: str, body: RevisionBody):
        s = get_session(sid)
        try:
            s.mutate(body.revision, events=(), boxes=())
        except RevisionConflict as e:
            return conflict(e)
        return _state_payload(s)

    @app.get("/sessions/{sid}/slice")
    def get_slice(sid: str, axis: str = "y", index: int = 0, window: str = ""):
        s = get_session(sid)
        snap = s.snapshot
        axes = {"z": 0, "y": 1, "x": 2}
        if axis not in axes:
            raise HTTPException(400, f"axis must be one of z, y, x, got {axis!r}")
        ax = axes[axis]
        if not (0 <= index < s.volume.dims[ax]):
            raise HTTPException(400, f"slice index {index} out of range for axis {axis}")

        take = [slice(None)] * 3
        take[ax] = index
        img2d = s.volume.data[tuple(take)]
        pred2d = snap.prediction.data[tuple(take)]

        if window:
            try:
                lo, hi = (float(v) for v in window.split(","))
            except ValueError:
                raise HTTPException(400, f"bad window {window!r}, expected 'lo,hi'")
        else:
            lo, hi = float(s.volume.data.min()), float(s.volume.data.max())
        if hi <= lo:
            hi = lo + 1.0
        scaled = np.clip((img2d - lo) / (hi - lo) * 255.0, 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(scaled, mode="L").save(buf, format="PNG")

        plane_axes = [a for a in range(3) if a != ax]
        clicks = [
            {"polarity": p, "point": [i[plane_axes[0]], i[plane_axes[1]]]}
            for p, i in snap.events
            if i[ax] == index
        ]
        contours = [
            [[float(r), float(c)] for r, c in loop] for loop in trace_contours(pred2d)
        ]
        return {
            "revision": snap.revision,
            "axis": axis,
            "index": index,
            "shape": list(img2d.shape),
            "window": [lo, hi],
            "png_b64": base64.b64encode(buf.getvalue()).decode(),
            "contours": contours,
            "clicks": clicks,
        }

    @app.get("/sessions/{sid}/mask")
    def get_mask(sid: str):
        s = get_session(sid)
        snap = s.snapshot
        out = _encode_mask(snap.prediction)
        out["revision"] = snap.revision
        return out

    @app.post("/sessions/{sid}/groundtruth")
    def set_groundtruth(sid: str, body: VolumeUpload):
        s = get_session(sid)
        try:
            vol = _decode_volume(body)
        except VolumeError as e:
            raise HTTPException(400, str(e))
        if vol.dims != s.volume.dims:
            raise HTTPException(400, f"ground truth dims {vol.dims} != volume dims {s.volume.dims}")
        s.gt = Mask.from_volume(vol)
        return {"ok": True, "foreground_voxels": s.gt.count()}

    @app.get("/sessions/{sid}/metrics")
    def get_metrics(sid: str):
        s = get_session(sid)
        if s.gt is None:
            raise HTTPException(400, "no ground truth uploaded")
        snap = s.snapshot
        pred = snap.prediction
        clicks = snap.clicks
        try:
            rep = metrics.report(pred, s.gt, len(clicks.positives), len(clicks.negatives))
        except VolumeError:
            # ratio metrics are undefined against an empty reference
            return {
                "revision": snap.revision,
                "dsc": metrics.dsc(pred, s.gt),
                "voe": metrics.voe(pred, s.gt),
                "vd": metrics.vd(pred, s.gt),
            }
        return {
            "revision": snap.revision,
            "dsc": rep.dsc,
            "voe": rep.voe,
            "arvd": rep.arvd,
            "vd": rep.vd,
            "rvd": rep.rvd,
            "clicks_fg": rep.clicks_fg,
            "clicks_bg": rep.clicks_bg,
        }

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
