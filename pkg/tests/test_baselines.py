import itertools

import numpy as np
import pytest

from oracles import exhaustive_min_energy

from dinseg.baselines import (
    GcParams,
    RwParams,
    _box_seeds,
    _normalize_box,
    graph_cut,
    graph_cut_energy,
    graph_cut_unaries,
    random_walk,
)
from dinseg.transforms import ClickSet
from dinseg.volume import BoundingBox, Mask, Volume, VolumeError


def _full_box(dims):
    return BoundingBox((0, 0, 0), tuple(d - 1 for d in dims))


class TestGraphCut:
    def test_line_cuts_at_intensity_step(self):
        img = Volume(np.array([[[0.0, 0.0, 100.0]]], dtype=np.float32))
        clicks = ClickSet(positives=((0, 0, 0),), negatives=((0, 0, 2),))
        m = graph_cut(img, clicks, _full_box(img.dims), GcParams(lam=0.01))
        assert m.data[0, 0, 0] and m.data[0, 0, 1] and not m.data[0, 0, 2]

    def test_all_seeded_returns_seeds(self, rng):
        img = Volume(rng.random((1, 2, 2)).astype(np.float32))
        clicks = ClickSet(
            positives=((0, 0, 0), (0, 1, 1)), negatives=((0, 0, 1), (0, 1, 0))
        )
        m = graph_cut(img, clicks, _full_box(img.dims), GcParams(lam=5.0))
        assert m.data[0, 0, 0] and m.data[0, 1, 1]
        assert not m.data[0, 0, 1] and not m.data[0, 1, 0]

    def test_missing_polarity_rejected(self, rng):
        img = Volume(rng.random((1, 2, 2)).astype(np.float32))
        with pytest.raises(VolumeError):
            graph_cut(img, ClickSet(positives=((0, 0, 0),)), _full_box(img.dims))

    @pytest.mark.parametrize("seed", range(8))
    def test_attains_exhaustive_minimum(self, seed):
        r = np.random.default_rng(seed)
        dims = (2, 3, 3)  # 18 voxels, 16 free
        img = Volume(r.random(dims).astype(np.float32))
        box = _full_box(dims)
        fg_seed = tuple(int(v) for v in r.integers(0, dims, 3))
        bg_seed = fg_seed
        while bg_seed == fg_seed:
            bg_seed = tuple(int(v) for v in r.integers(0, dims, 3))
        clicks = ClickSet(positives=(fg_seed,), negatives=(bg_seed,))
        params = GcParams(lam=float(r.uniform(0.1, 1.5)), sigma_int=0.25, histogram_bins=8)
        got = graph_cut(img, clicks, box, params)

        sub = _normalize_box(img, box)
        fg, bg = _box_seeds(clicks, box)
        ufg, ubg = graph_cut_unaries(sub, fg, bg, params)

        def energy_of(lab):
            return graph_cut_energy(sub, lab, ufg, ubg, params.lam, params.sigma_int, img.spacing)

        fixed = np.zeros(dims, bool)
        fixed[fg_seed] = True
        free = [i for i in range(int(np.prod(dims)))
                if i not in (np.ravel_multi_index(fg_seed, dims), np.ravel_multi_index(bg_seed, dims))]
        best_e, _ = exhaustive_min_energy(free, fixed, energy_of)
        got_e = energy_of(got.data)
        assert got_e == pytest.approx(best_e, abs=1e-9)

    def test_beats_random_labelings(self, rng):
        dims = (2, 4, 4)
        img = Volume(rng.random(dims).astype(np.float32))
        box = _full_box(dims)
        clicks = ClickSet(positives=((0, 0, 0),), negatives=((1, 3, 3),))
        params = GcParams(lam=0.7, sigma_int=0.3)
        got = graph_cut(img, clicks, box, params)
        sub = _normalize_box(img, box)
        fg, bg = _box_seeds(clicks, box)
        ufg, ubg = graph_cut_unaries(sub, fg, bg, params)
        got_e = graph_cut_energy(sub, got.data, ufg, ubg, params.lam, params.sigma_int, img.spacing)
        for _ in range(1000):
            lab = rng.random(dims) < 0.5
            lab[0, 0, 0] = True
            lab[1, 3, 3] = False
            e = graph_cut_energy(sub, lab, ufg, ubg, params.lam, params.sigma_int, img.spacing)
            assert got_e <= e + 1e-9

    def test_deterministic(self, rng):
        img = Volume(rng.random((2, 4, 4)).astype(np.float32))
        clicks = ClickSet(positives=((0, 1, 1),), negatives=((1, 3, 3),))
        a = graph_cut(img, clicks, _full_box(img.dims))
        b = graph_cut(img, clicks, _full_box(img.dims))
        assert np.array_equal(a.data, b.data)


class TestRandomWalk:
    def test_chain_probabilities(self):
        img = Volume(np.full((1, 1, 4), 3.0, np.float32))
        clicks = ClickSet(positives=((0, 0, 0),), negatives=((0, 0, 3),))
        prob, mask = random_walk(img, clicks, _full_box(img.dims))
        assert np.allclose(prob.data.ravel(), [1.0, 2 / 3, 1 / 3, 0.0], atol=1e-6)
        assert mask.data.ravel().tolist() == [True, True, False, False]

    def test_symmetric_middle_voxel(self):
        img = Volume(np.full((1, 1, 3), 1.0, np.float32))
        clicks = ClickSet(positives=((0, 0, 0),), negatives=((0, 0, 2),))
        prob, _ = random_walk(img, clicks, _full_box(img.dims))
        assert prob.data[0, 0, 1] == pytest.approx(0.5, abs=1e-8)

    def test_seeds_pinned_exactly(self, rng):
        img = Volume(rng.random((2, 4, 4)).astype(np.float32))
        clicks = ClickSet(positives=((0, 0, 0),), negatives=((1, 3, 3),))
        prob, _ = random_walk(img, clicks, _full_box(img.dims))
        assert prob.data[0, 0, 0] == 1.0
        assert prob.data[1, 3, 3] == 0.0

    def test_probabilities_bounded(self, rng):
        img = Volume(rng.random((3, 5, 5)).astype(np.float32))
        clicks = ClickSet(positives=((1, 2, 2),), negatives=((0, 0, 0), (2, 4, 4)))
        prob, _ = random_walk(img, clicks, _full_box(img.dims))
        assert prob.data.min() >= 0.0 and prob.data.max() <= 1.0

    def test_harmonicity(self, rng):
        dims = (4, 4, 4)
        img = Volume(rng.random(dims).astype(np.float32))
        clicks = ClickSet(positives=((0, 0, 0),), negatives=((3, 3, 3),))
        params = RwParams(beta_rw=40.0)
        prob, _ = random_walk(img, clicks, _full_box(dims), params)
        p = prob.data.astype(np.float64)
        sub = _normalize_box(img, _full_box(dims))
        worst = 0.0
        for z in range(4):
            for y in range(4):
                for x in range(4):
                    if (z, y, x) in ((0, 0, 0), (3, 3, 3)):
                        continue
                    acc = wsum = 0.0
                    for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                        nz, ny, nx = z + dz, y + dy, x + dx
                        if 0 <= nz < 4 and 0 <= ny < 4 and 0 <= nx < 4:
                            w = np.exp(-params.beta_rw * (sub[z, y, x] - sub[nz, ny, nx]) ** 2) + 1e-10
                            acc += w * p[nz, ny, nx]
                            wsum += w
                    worst = max(worst, abs(p[z, y, x] - acc / wsum))
        assert worst <= 1e-5

    def test_missing_polarity_rejected(self, rng):
        img = Volume(rng.random((1, 2, 2)).astype(np.float32))
        with pytest.raises(VolumeError):
            random_walk(img, ClickSet(negatives=((0, 0, 0),)), _full_box(img.dims))

    def test_deterministic(self, rng):
        img = Volume(rng.random((2, 4, 4)).astype(np.float32))
        clicks = ClickSet(positives=((0, 1, 1),), negatives=((1, 3, 3),))
        a, _ = random_walk(img, clicks, _full_box(img.dims))
        b, _ = random_walk(img, clicks, _full_box(img.dims))
        assert np.array_equal(a.data, b.data)
