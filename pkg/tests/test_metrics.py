import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dinseg import metrics
from dinseg.volume import Mask, VolumeError


def _mask(arr):
    return Mask(np.asarray(arr, dtype=bool))


def _pair_from_seed(seed, dims=(8, 8, 8), p=0.5):
    r = np.random.default_rng(seed)
    return _mask(r.random(dims) < p), _mask(r.random(dims) < p)


class TestDsc:
    def test_identity(self, rng):
        m = _mask(rng.random((4, 4, 4)) < 0.5)
        if not m.data.any():
            m.data[0, 0, 0] = True
        assert metrics.dsc(m, m) == 1.0

    def test_disjoint(self):
        p = _mask(np.eye(4)[None] > 0)
        q = _mask(np.eye(4)[None, ::-1] > 0)
        q.data &= ~p.data
        assert metrics.dsc(p, q) == 0.0

    def test_known_counts(self):
        p = np.zeros((1, 1, 8), bool)
        q = np.zeros((1, 1, 8), bool)
        p[0, 0, :3] = True  # |P| = 3
        q[0, 0, 1:5] = True  # |Q| = 4, overlap = 2
        assert metrics.dsc(_mask(p), _mask(q)) == pytest.approx(4 / 7)
        assert metrics.voe(_mask(p), _mask(q)) == pytest.approx(0.6)

    def test_empty_conventions(self):
        e = _mask(np.zeros((2, 2, 2)))
        assert metrics.dsc(e, e) == 1.0
        assert metrics.voe(e, e) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(VolumeError):
            metrics.dsc(_mask(np.zeros((2, 2, 2))), _mask(np.zeros((2, 2, 3))))


class TestVolumeMetrics:
    def test_equal_volumes(self, rng):
        p, _ = _pair_from_seed(0)
        assert metrics.arvd(p, p) == 0.0
        assert metrics.vd(p, p) == 0

    def test_known_difference(self):
        p = np.zeros((1, 2, 4), bool)
        q = np.zeros((1, 2, 4), bool)
        p[0, 0, :] = p[0, 1, :2] = True  # |P| = 6
        q[0, 0, :] = True  # |Q| = 4
        assert metrics.arvd(_mask(p), _mask(q)) == pytest.approx(0.5)
        assert metrics.vd(_mask(p), _mask(q)) == 2
        assert metrics.rvd(_mask(p), _mask(q)) == pytest.approx(2 * 2 / 10)

    def test_empty_reference_errors(self):
        p = _mask(np.ones((2, 2, 2)))
        q = _mask(np.zeros((2, 2, 2)))
        with pytest.raises(VolumeError):
            metrics.arvd(p, q)
        with pytest.raises(VolumeError):
            metrics.rvd(p, q)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_symmetry(self, seed):
        p, q = _pair_from_seed(seed)
        assert metrics.dsc(p, q) == pytest.approx(metrics.dsc(q, p))
        assert metrics.voe(p, q) == pytest.approx(metrics.voe(q, p))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_dsc_voe_identity(self, seed):
        p, q = _pair_from_seed(seed)
        d = metrics.dsc(p, q)
        v = metrics.voe(p, q)
        assert d == pytest.approx(2 * (1 - v) / (2 - v), abs=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_counting_oracle(self, seed):
        p, q = _pair_from_seed(seed)
        inter = union = np_ = nq = 0
        for z in range(8):
            for y in range(8):
                for x in range(8):
                    a, b = bool(p.data[z, y, x]), bool(q.data[z, y, x])
                    np_ += a
                    nq += b
                    inter += a and b
                    union += a or b
        assert metrics.dsc(p, q) == pytest.approx(2 * inter / (np_ + nq))
        assert metrics.voe(p, q) == pytest.approx(1 - inter / union)
        assert metrics.vd(p, q) == np_ - nq

    def test_report_row(self, rng):
        p, q = _pair_from_seed(5)
        rep = metrics.report(p, q, clicks_fg=3, clicks_bg=2)
        row = rep.csv_row()
        assert row.count(",") == metrics.MetricReport.CSV_HEADER.count(",")
        assert rep.dsc == pytest.approx(2 * (1 - rep.voe) / (2 - rep.voe), abs=1e-6)
