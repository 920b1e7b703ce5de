"""Classical interactive segmenters on a bounding box: graph cut and random walk.

Both operate on the 6-connected voxel graph of the box with intensities
normalized to [0, 1].  Graph cut minimizes a seed-histogram unary plus a
contrast-weighted boundary term by max-flow/min-cut (Dinic); the random
walker solves the combinatorial Dirichlet problem with conjugate gradients.
Clicked voxels are hard constraints for both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from .transforms import ClickSet
from .volume import BoundingBox, Mask, Volume, VolumeError


@dataclass(frozen=True)
class GcParams:
    lam: float = 1.0
    sigma_int: float = 0.1
    histogram_bins: int = 16

    def __post_init__(self) -> None:
        if self.lam <= 0 or self.sigma_int <= 0 or self.histogram_bins <= 0:
            raise VolumeError("graph-cut parameters must be positive")


@dataclass(frozen=True)
class RwParams:
    beta_rw: float = 50.0
    cg_tolerance: float = 1e-10
    cg_max_iters: int = 2000

    def __post_init__(self) -> None:
        if self.beta_rw <= 0 or self.cg_tolerance <= 0 or self.cg_max_iters <= 0:
            raise VolumeError("random-walk parameters must be positive")


def _normalize_box(image: Volume, box: BoundingBox) -> np.ndarray:
    box.check_within(image.dims)
    sub = image.data[box.slices()].astype(np.float64)
    lo, hi = float(sub.min()), float(sub.max())
    if hi > lo:
        sub = (sub - lo) / (hi - lo)
    else:
        sub = np.zeros_like(sub)
    return sub


def _box_seeds(clicks: ClickSet, box: BoundingBox) -> tuple[list[tuple[int, int, int]], list[tuple[int, int, int]]]:
    fg = [tuple(c - o for c, o in zip(p, box.min)) for p in clicks.positives if box.contains(p)]
    bg = [tuple(c - o for c, o in zip(p, box.min)) for p in clicks.negatives if box.contains(p)]
    return fg, bg  # type: ignore[return-value]


_AXIS_NEIGHBORS = ((1, 0, 0), (0, 1, 0), (0, 0, 1))


# ---------------------------------------------------------------------------
# Max-flow (Dinic)
# ---------------------------------------------------------------------------


class _Dinic:
    def __init__(self, n: int):
        self.n = n
        self.to: list[int] = []
        self.cap: list[float] = []
        self.head: list[list[int]] = [[] for _ in range(n)]

    def add_edge(self, u: int, v: int, cap_uv: float, cap_vu: float = 0.0) -> None:
        self.head[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(cap_uv)
        self.head[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(cap_vu)

    def max_flow(self, s: int, t: int) -> float:
        flow = 0.0
        while True:
            level = self._bfs(s, t)
            if level is None:
                return flow
            it = [0] * self.n
            while True:
                pushed = self._augment(s, t, level, it)
                if pushed <= 0:
                    break
                flow += pushed

    def _bfs(self, s: int, t: int) -> list[int] | None:
        level = [-1] * self.n
        level[s] = 0
        queue = [s]
        for u in queue:
            for ei in self.head[u]:
                v = self.to[ei]
                if level[v] < 0 and self.cap[ei] > 1e-12:
                    level[v] = level[u] + 1
                    queue.append(v)
        return level if level[t] >= 0 else None

    def _augment(self, s: int, t: int, level: list[int], it: list[int]) -> float:
        """Find one augmenting path in the level graph (iterative advance/retreat)."""
        path: list[int] = []
        u = s
        while True:
            if u == t:
                bott = min(self.cap[ei] for ei in path)
                for ei in path:
                    self.cap[ei] -= bott
                    self.cap[ei ^ 1] += bott
                return bott
            advanced = False
            while it[u] < len(self.head[u]):
                ei = self.head[u][it[u]]
                v = self.to[ei]
                if self.cap[ei] > 1e-12 and level[v] == level[u] + 1:
                    path.append(ei)
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                if not path:
                    return 0.0
                last = path.pop()
                u = self.to[last ^ 1]  # tail of the popped edge
                it[u] += 1

    def min_cut_source_side(self, s: int) -> np.ndarray:
        seen = np.zeros(self.n, dtype=bool)
        seen[s] = True
        queue = [s]
        for u in queue:
            for ei in self.head[u]:
                v = self.to[ei]
                if not seen[v] and self.cap[ei] > 1e-12:
                    seen[v] = True
                    queue.append(v)
        return seen


def _seed_histograms(sub: np.ndarray, fg, bg, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-polarity intensity histograms over 3x3x3 seed neighborhoods,
    Laplace-smoothed by 1/bins."""
    dims = sub.shape

    def hist(seeds) -> np.ndarray:
        counts = np.full(bins, 1.0 / bins)
        for s in seeds:
            sl = tuple(slice(max(0, c - 1), min(d, c + 2)) for c, d in zip(s, dims))
            vals = sub[sl].ravel()
            idx = np.minimum((vals * bins).astype(np.int64), bins - 1)
            counts += np.bincount(idx, minlength=bins)
        return counts / counts.sum()

    return hist(fg), hist(bg)


def graph_cut_energy(
    sub: np.ndarray,
    labels: np.ndarray,
    unary_fg: np.ndarray,
    unary_bg: np.ndarray,
    lam: float,
    sigma_int: float,
    spacing: tuple[float, float, float],
) -> float:
    """Energy of a labeling: sum of unaries plus boundary terms on cut 6-edges."""
    e = float(np.where(labels, unary_fg, unary_bg).sum())
    for ax, off in enumerate(_AXIS_NEIGHBORS):
        a = tuple(slice(0, s - o) for s, o in zip(sub.shape, off))
        b = tuple(slice(o, s) for s, o in zip(sub.shape, off))
        di = sub[a] - sub[b]
        w = np.exp(-(di * di) / (2.0 * sigma_int**2)) / spacing[ax]
        cut = labels[a] != labels[b]
        e += lam * float(w[cut].sum())
    return e


def graph_cut(
    image: Volume,
    clicks: ClickSet,
    box: BoundingBox,
    params: GcParams = GcParams(),
) -> Mask:
    """Global minimum of the seed-histogram + boundary energy inside the box."""
    sub = _normalize_box(image, box)
    fg, bg = _box_seeds(clicks, box)
    if not fg or not bg:
        raise VolumeError("graph cut needs at least one click of each polarity inside the box")

    unary_fg, unary_bg = graph_cut_unaries(sub, fg, bg, params)
    dims = sub.shape
    n = sub.size
    src, snk = n, n + 1
    net = _Dinic(n + 2)
    flat_fg = unary_fg.ravel()
    flat_bg = unary_bg.ravel()

    hard = np.zeros(n, dtype=np.int8)
    for s in fg:
        hard[np.ravel_multi_index(s, dims)] = 1
    for s in bg:
        hard[np.ravel_multi_index(s, dims)] = -1

    big = 1e9
    for v in range(n):
        if hard[v] == 1:
            net.add_edge(src, v, big)
        elif hard[v] == -1:
            net.add_edge(v, snk, big)
        else:
            # source side = foreground: cutting src->v pays the bg assignment,
            # cutting v->sink pays the fg assignment
            if flat_bg[v] > 0:
                net.add_edge(src, v, float(flat_bg[v]))
            if flat_fg[v] > 0:
                net.add_edge(v, snk, float(flat_fg[v]))

    for ax, off in enumerate(_AXIS_NEIGHBORS):
        a_idx = np.arange(n).reshape(dims)
        a = tuple(slice(0, s - o) for s, o in zip(dims, off))
        b = tuple(slice(o, s) for s, o in zip(dims, off))
        di = sub[a] - sub[b]
        w = params.lam * np.exp(-(di * di) / (2.0 * params.sigma_int**2)) / image.spacing[ax]
        ua = a_idx[a].ravel()
        ub = a_idx[b].ravel()
        for u, v, cap in zip(ua.tolist(), ub.tolist(), w.ravel().tolist()):
            net.add_edge(u, v, cap, cap)

    net.max_flow(src, snk)
    source_side = net.min_cut_source_side(src)[:n]
    out = np.zeros(image.dims, dtype=bool)
    out[box.slices()] = source_side.reshape(dims)
    return Mask(out, image.spacing)


def graph_cut_unaries(sub: np.ndarray, fg, bg, params: GcParams) -> tuple[np.ndarray, np.ndarray]:
    """Negative log-likelihood of each voxel under the seed histograms."""
    h_fg, h_bg = _seed_histograms(sub, fg, bg, params.histogram_bins)
    idx = np.minimum((sub * params.histogram_bins).astype(np.int64), params.histogram_bins - 1)
    return -np.log(h_fg[idx]), -np.log(h_bg[idx])


# ---------------------------------------------------------------------------
# Random walk
# ---------------------------------------------------------------------------


def random_walk(
    image: Volume,
    clicks: ClickSet,
    box: BoundingBox,
    params: RwParams = RwParams(),
) -> tuple[Volume, Mask]:
    """Probability of reaching a foreground seed first; mask = p >= 0.5.

    Edge weights are exp(-beta_rw * dI^2) (+1e-10 to keep the graph
    connected); seeded voxels are Dirichlet boundaries pinned to 0/1.
    """
    sub = _normalize_box(image, box)
    fg, bg = _box_seeds(clicks, box)
    if not fg or not bg:
        raise VolumeError("random walk needs at least one click of each polarity inside the box")

    dims = sub.shape
    n = sub.size
    rows, cols, weights = [], [], []
    idx_grid = np.arange(n).reshape(dims)
    for off in _AXIS_NEIGHBORS:
        a = tuple(slice(0, s - o) for s, o in zip(dims, off))
        b = tuple(slice(o, s) for s, o in zip(dims, off))
        di = (sub[a] - sub[b]).ravel()
        w = np.exp(-params.beta_rw * di * di) + 1e-10
        rows.append(idx_grid[a].ravel())
        cols.append(idx_grid[b].ravel())
        weights.append(w)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    weights = np.concatenate(weights)

    w_mat = sparse.coo_matrix(
        (np.concatenate([weights, weights]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    ).tocsr()
    lap = sparse.diags(np.asarray(w_mat.sum(axis=1)).ravel()) - w_mat

    seed_val = np.full(n, -1.0)
    for s in fg:
        seed_val[np.ravel_multi_index(s, dims)] = 1.0
    for s in bg:
        seed_val[np.ravel_multi_index(s, dims)] = 0.0
    seeded = seed_val >= 0.0
    free = ~seeded

    p = seed_val.copy()
    if free.any():
        lap_uu = lap[free][:, free]
        lap_us = lap[free][:, seeded]
        rhs = -lap_us @ seed_val[seeded]
        jacobi = sparse.diags(1.0 / lap_uu.diagonal())
        sol, info = cg(
            lap_uu, rhs, rtol=params.cg_tolerance, atol=0.0, maxiter=params.cg_max_iters, M=jacobi
        )
        if info != 0:
            raise VolumeError(f"conjugate gradient did not converge (info={info})")
        p[free] = np.clip(sol, 0.0, 1.0)

    prob = np.zeros(image.dims, dtype=np.float32)
    prob[box.slices()] = p.reshape(dims)
    mask = np.zeros(image.dims, dtype=bool)
    mask[box.slices()] = p.reshape(dims) >= 0.5
    return Volume(prob, image.spacing), Mask(mask, image.spacing)
