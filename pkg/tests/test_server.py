import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from dinseg.phantoms import PhantomConfig, generate_phantom
from dinseg.server import create_app, trace_contours
from dinseg.volume import Mask


def _upload_body(vol):
    return {
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "data_b64": base64.b64encode(vol.data.astype("<f4").tobytes()).decode(),
    }


@pytest.fixture
def phantom():
    cfg = PhantomConfig(
        dims=(4, 32, 32), tumor_count=(1, 1), radius=(5.0, 7.0),
        z_radius_scale=(0.35, 0.5), noise_std=0.02, seed=4,
    )
    return generate_phantom(cfg, np.random.default_rng(4))


@pytest.fixture
def client():
    return TestClient(create_app())


def _create(client, vol):
    r = client.post("/sessions", json=_upload_body(vol))
    assert r.status_code == 200, r.text
    return r.json()


class TestContours:
    def test_empty_slice(self):
        assert trace_contours(np.zeros((4, 4), bool)) == []

    def test_single_pixel_square(self):
        m = np.zeros((5, 5), bool)
        m[2, 3] = True
        loops = trace_contours(m)
        assert len(loops) == 1
        loop = loops[0]
        assert loop[0] == loop[-1]
        assert len(loop) == 5  # 4 segments, closed
        pts = set(loop[:-1])
        assert pts == {(1.5, 2.5), (1.5, 3.5), (2.5, 3.5), (2.5, 2.5)}

    def test_loops_close_on_random_masks(self, rng):
        for _ in range(10):
            m = rng.random((8, 8)) < 0.4
            for loop in trace_contours(m):
                assert loop[0] == loop[-1]
                assert len(loop) >= 5


class TestSessions:
    def test_create_echoes_dims(self, client, phantom):
        vol, _ = phantom
        out = _create(client, vol)
        assert out["dims"] == [4, 32, 32]
        assert out["revision"] == 0
        assert out["sigma"] == [1.0, 5.0, 5.0]

    def test_truncated_payload_rejected(self, client, phantom):
        vol, _ = phantom
        body = _upload_body(vol)
        body["data_b64"] = body["data_b64"][: len(body["data_b64"]) // 2]
        r = client.post("/sessions", json=body)
        assert r.status_code == 400

    def test_two_uploads_distinct_ids(self, client, phantom):
        vol, _ = phantom
        assert _create(client, vol)["session_id"] != _create(client, vol)["session_id"]

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope/state").status_code == 404


class TestMutations:
    def test_click_updates_revision_and_prediction(self, client, phantom):
        vol, gt = phantom
        sid = _create(client, vol)["session_id"]
        from dinseg.volume import centroid

        _, c = centroid(gt)
        r = client.post(
            f"/sessions/{sid}/clicks",
            json={"revision": 0, "polarity": "positive", "index": list(c)},
        )
        out = r.json()
        assert out["revision"] == 1
        assert out["prediction_voxels"] > 0

    def test_click_undo_returns_to_empty(self, client, phantom):
        vol, gt = phantom
        sid = _create(client, vol)["session_id"]
        client.post(
            f"/sessions/{sid}/clicks",
            json={"revision": 0, "polarity": "positive", "index": [2, 16, 16]},
        )
        r = client.post(f"/sessions/{sid}/undo", json={"revision": 1})
        out = r.json()
        assert out["revision"] == 2
        assert out["clicks"] == []
        assert out["prediction_voxels"] == 0

    def test_out_of_grid_click_rejected_revision_unchanged(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        r = client.post(
            f"/sessions/{sid}/clicks",
            json={"revision": 0, "polarity": "positive", "index": [99, 0, 0]},
        )
        assert r.status_code == 400
        assert client.get(f"/sessions/{sid}/state").json()["revision"] == 0

    def test_stale_revision_conflict(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        ok = client.post(
            f"/sessions/{sid}/clicks",
            json={"revision": 0, "polarity": "positive", "index": [2, 16, 16]},
        )
        assert ok.status_code == 200
        stale = client.post(
            f"/sessions/{sid}/clicks",
            json={"revision": 0, "polarity": "negative", "index": [0, 0, 0]},
        )
        assert stale.status_code == 409
        assert stale.json()["revision"] == 1

    def test_sigma_round_trip(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        r = client.post(f"/sessions/{sid}/sigma", json={"revision": 0, "sigma": [1.5, 6, 6]})
        assert r.json()["sigma"] == [1.5, 6.0, 6.0]

    def test_sigma_changes_prediction(self, client, phantom):
        vol, gt = phantom
        sid = _create(client, vol)["session_id"]
        from dinseg.volume import centroid

        _, c = centroid(gt)
        r0 = client.post(f"/sessions/{sid}/sigma", json={"revision": 0, "sigma": [1.0, 1.5, 1.5]})
        r1 = client.post(
            f"/sessions/{sid}/clicks",
            json={"revision": 1, "polarity": "positive", "index": list(c)},
        )
        v1 = r1.json()["prediction_voxels"]
        r2 = client.post(f"/sessions/{sid}/sigma", json={"revision": 2, "sigma": [2.0, 9.0, 9.0]})
        v2 = r2.json()["prediction_voxels"]
        assert v1 != v2  # wider kernel reaches farther for the threshold backend

    def test_boxes_validated(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        bad = client.post(
            f"/sessions/{sid}/boxes", json={"revision": 0, "boxes": [[0, 0, 0, 9, 40, 40]]}
        )
        assert bad.status_code == 400

    def test_replay_reproduces_prediction(self, client, phantom):
        vol, gt = phantom
        actions = [
            ("positive", [2, 16, 16]),
            ("negative", [0, 2, 2]),
            ("positive", [1, 20, 12]),
        ]
        masks = []
        for _ in range(2):
            sid = _create(client, vol)["session_id"]
            rev = 0
            for pol, idx in actions:
                r = client.post(
                    f"/sessions/{sid}/clicks",
                    json={"revision": rev, "polarity": pol, "index": idx},
                )
                rev = r.json()["revision"]
            masks.append(client.get(f"/sessions/{sid}/mask").json()["data_b64"])
        assert masks[0] == masks[1]


class TestReads:
    def test_slice_png_and_marker(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        client.post(
            f"/sessions/{sid}/clicks",
            json={"revision": 0, "polarity": "positive", "index": [2, 16, 16]},
        )
        r = client.get(f"/sessions/{sid}/slice", params={"axis": "z", "index": 2})
        out = r.json()
        png = base64.b64decode(out["png_b64"])
        assert png[:8] == b"\x89PNG\r\n\x1a\n"
        assert out["shape"] == [32, 32]
        assert out["clicks"] == [{"polarity": "positive", "point": [16, 16]}]
        assert out["contours"], "prediction contour expected around the click"

    def test_slice_deterministic_per_revision(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        a = client.get(f"/sessions/{sid}/slice", params={"axis": "y", "index": 5}).json()
        b = client.get(f"/sessions/{sid}/slice", params={"axis": "y", "index": 5}).json()
        assert a == b

    def test_bad_slice_index(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        assert client.get(f"/sessions/{sid}/slice", params={"axis": "z", "index": 99}).status_code == 400

    def test_empty_prediction_no_contours(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        out = client.get(f"/sessions/{sid}/slice", params={"axis": "z", "index": 0}).json()
        assert out["contours"] == []

    def test_mask_round_trip(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        client.post(
            f"/sessions/{sid}/clicks",
            json={"revision": 0, "polarity": "positive", "index": [2, 16, 16]},
        )
        out = client.get(f"/sessions/{sid}/mask").json()
        data = np.frombuffer(base64.b64decode(out["data_b64"]), dtype="<f4")
        assert set(np.unique(data)) <= {0.0, 1.0}
        assert data.reshape(out["dims"]).sum() > 0


class TestConcurrency:
    def test_parallel_sessions_do_not_interleave(self, client, phantom):
        import threading

        vol, _ = phantom
        sids = [_create(client, vol)["session_id"] for _ in range(2)]
        errors: list[str] = []

        def hammer(sid: str, x_off: int) -> None:
            rev = 0
            for i in range(6):
                r = client.post(
                    f"/sessions/{sid}/clicks",
                    json={"revision": rev, "polarity": "positive", "index": [i % 4, 2 * i, x_off]},
                )
                if r.status_code != 200:
                    errors.append(f"{sid}: {r.status_code} {r.text}")
                    return
                rev = r.json()["revision"]

        threads = [threading.Thread(target=hammer, args=(sid, 5 + k)) for k, sid in enumerate(sids)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        for sid in sids:
            state = client.get(f"/sessions/{sid}/state").json()
            assert state["revision"] == 6  # strictly increasing, no gaps
            assert len(state["clicks"]) == 6


class TestMetrics:
    def test_requires_ground_truth(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        assert client.get(f"/sessions/{sid}/metrics").status_code == 400

    def test_live_dsc(self, client, phantom):
        vol, gt = phantom
        sid = _create(client, vol)["session_id"]
        up = client.post(f"/sessions/{sid}/groundtruth", json=_upload_body(gt.to_volume()))
        assert up.status_code == 200
        from dinseg.volume import centroid

        _, c = centroid(gt)
        client.post(
            f"/sessions/{sid}/clicks",
            json={"revision": 0, "polarity": "positive", "index": list(c)},
        )
        out = client.get(f"/sessions/{sid}/metrics").json()
        assert 0.0 <= out["dsc"] <= 1.0
        assert out["clicks_fg"] == 1

    def test_gt_dim_mismatch(self, client, phantom):
        vol, _ = phantom
        sid = _create(client, vol)["session_id"]
        from dinseg.volume import Volume

        small = Volume(np.zeros((2, 16, 16), np.float32))
        r = client.post(f"/sessions/{sid}/groundtruth", json=_upload_body(small))
        assert r.status_code == 400
