import numpy as np
import pytest

from dinseg.net.checkpoint import load_model, read_tensors, save_model, write_tensors
from dinseg.net.layers import softmax
from dinseg.net.model import (
    DIM_VARIANTS,
    DinModel,
    NetConfig,
    build_model,
    dim_forward,
    forward_probs,
    predict,
)
from dinseg.transforms import ClickSet, ExpParams
from dinseg.volume import BoundingBox, Mask, Volume, VolumeError

TOY = NetConfig(in_dims=(8, 64, 64), channels=(8, 16, 32, 64, 96))
MICRO = NetConfig(in_dims=(4, 32, 32), channels=(2, 3, 4, 5, 6))


def _inputs(cfg, rng, batch=1):
    d, h, w = cfg.in_dims
    img = rng.normal(size=(batch, 1, d, h, w)).astype(np.float32)
    guides = rng.random((batch, 2, d, h, w)).astype(np.float32)
    return img, guides


class TestShapes:
    def test_toy_logits_shape(self, rng):
        m = build_model(TOY, seed=0)
        img, g = _inputs(TOY, rng)
        assert m.forward(img, g).shape == (1, 2, 8, 64, 64)

    def test_dim_output2_matches_deepest_stage(self, rng):
        m = build_model(TOY, seed=0)
        _, g = _inputs(TOY, rng)
        out1, out2 = dim_forward(m, g)
        assert out1.shape == (1, 2, 8, 64, 64)
        assert out2.shape == (1, 96, 4, 4, 4)

    def test_encoder_spatial_arithmetic_random_dims(self, rng):
        for _ in range(5):
            d = 2 * int(rng.integers(1, 4))
            h = 16 * int(rng.integers(1, 4))
            w = 16 * int(rng.integers(1, 4))
            cfg = NetConfig(in_dims=(d, h, w), channels=(2, 3, 4, 5, 6))
            m = build_model(cfg, seed=0)
            img, g = _inputs(cfg, rng)
            logits = m.forward(img, g)
            assert logits.shape == (1, 2, d, h, w)
            _, out2 = dim_forward(m, g)
            assert out2.shape == (1, 6, d // 2, h // 16, w // 16)

    def test_illegal_dims_rejected(self):
        with pytest.raises(VolumeError):
            NetConfig(in_dims=(7, 64, 64))
        with pytest.raises(VolumeError):
            NetConfig(in_dims=(8, 60, 64))

    def test_input_only_has_no_dim_path(self):
        m = build_model(NetConfig(in_dims=(4, 32, 32), channels=(2, 3, 4, 5, 6), dim_variant="input_only"))
        assert m.dim_path is None
        assert not any(k.startswith("dim.") for k in m.named_params())

    def test_variant_signatures(self):
        sigs = {}
        for variant in DIM_VARIANTS:
            cfg = NetConfig(in_dims=(4, 32, 32), channels=(2, 3, 4, 5, 6), dim_variant=variant)
            sigs[variant] = build_model(cfg, seed=0).signature()
        # the deepest insertion is the flagship architecture by definition
        assert sigs["full"] == sigs["insert_at_5"]
        rest = {v: s for v, s in sigs.items() if v != "insert_at_5"}
        assert len(set(rest.values())) == len(rest)


class TestForward:
    def test_softmax_normalized(self, rng):
        m = build_model(MICRO, seed=1)
        img, g = _inputs(MICRO, rng)
        probs = forward_probs(m, img, g)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    def test_zeroed_head_gives_even_probabilities(self, rng):
        m = build_model(MICRO, seed=1)
        m.set_param("out.conv.W", np.zeros_like(m.named_params()["out.conv.W"]))
        m.set_param("out.conv.b", np.zeros_like(m.named_params()["out.conv.b"]))
        img, g = _inputs(MICRO, rng)
        probs = forward_probs(m, img, g)
        assert np.allclose(probs, 0.5, atol=1e-6)

    def test_deterministic(self, rng):
        m = build_model(MICRO, seed=1)
        img, g = _inputs(MICRO, rng)
        a = m.forward(img, g)
        b = m.forward(img, g)
        assert np.array_equal(a, b)

    def test_click_perturbation_reaches_deepest_stage(self, rng):
        # with the full variant, moving a click changes the injected features
        m = build_model(MICRO, seed=1)
        img, _ = _inputs(MICRO, rng)
        g1 = ExpParams(sigma=(1.0, 3.0, 3.0))
        from dinseg.transforms import expdt

        a = expdt(MICRO.in_dims, [(1, 8, 8)], g1).data
        b = expdt(MICRO.in_dims, [(2, 20, 20)], g1).data
        zeros = np.zeros_like(a)
        _, out2_a = dim_forward(m, np.stack([a, zeros])[None].astype(np.float32))
        _, out2_b = dim_forward(m, np.stack([b, zeros])[None].astype(np.float32))
        assert not np.array_equal(out2_a, out2_b)

    def test_input_only_blocks_deep_injection(self, rng):
        cfg = NetConfig(in_dims=(4, 32, 32), channels=(2, 3, 4, 5, 6), dim_variant="input_only")
        m = build_model(cfg, seed=1)
        _, g = _inputs(cfg, rng)
        out1, out2 = dim_forward(m, g)
        assert out2 is None

    def test_guides_required(self, rng):
        m = build_model(MICRO, seed=0)
        img, _ = _inputs(MICRO, rng)
        with pytest.raises(VolumeError):
            m.forward(img, None)


class TestCheckpoint:
    def test_tensor_file_round_trip(self, tmp_path, rng):
        tensors = {
            "a.W": rng.normal(size=(2, 3, 1, 1, 1)).astype(np.float32),
            "b": rng.normal(size=(7,)).astype(np.float32),
        }
        write_tensors(tmp_path / "t.ckpt", tensors)
        back = read_tensors(tmp_path / "t.ckpt")
        assert set(back) == set(tensors)
        for k in tensors:
            assert np.array_equal(back[k], tensors[k])

    def test_magic_enforced(self, tmp_path):
        (tmp_path / "junk.ckpt").write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(VolumeError):
            read_tensors(tmp_path / "junk.ckpt")

    def test_model_round_trip_bit_exact(self, tmp_path, rng):
        m = build_model(MICRO, seed=3)
        img, g = _inputs(MICRO, rng)
        before = m.forward(img, g)
        save_model(tmp_path / "m.ckpt", m, extra={"__opt__.t": np.array([5.0], np.float32)})
        m2, extra = load_model(tmp_path / "m.ckpt")
        assert m2.cfg == m.cfg
        after = m2.forward(img, g)
        assert np.array_equal(before, after)
        assert extra["__opt__.t"][0] == 5.0

    def test_foreign_tensor_rejected(self, tmp_path, rng):
        m = build_model(MICRO, seed=3)
        save_model(tmp_path / "m.ckpt", m)
        tensors = read_tensors(tmp_path / "m.ckpt")
        tensors["intruder"] = np.zeros(3, np.float32)
        write_tensors(tmp_path / "m.ckpt", tensors)
        with pytest.raises(VolumeError):
            load_model(tmp_path / "m.ckpt")


class TestPredict:
    def test_untrained_symmetric_head_predicts_background(self, rng):
        m = build_model(MICRO, seed=0)
        for name in ("out.conv.W", "out.conv.b"):
            m.set_param(name, np.zeros_like(m.named_params()[name]))
        vol = Volume(rng.random(MICRO.in_dims).astype(np.float32))
        mask = predict(m, vol, ClickSet())
        assert not mask.data.any()  # ties resolve to background

    def test_full_extent_box_equals_no_box(self, rng):
        m = build_model(MICRO, seed=2)
        vol = Volume(rng.random(MICRO.in_dims).astype(np.float32))
        clicks = ClickSet(positives=((2, 16, 16),))
        full = predict(m, vol, clicks)
        box = BoundingBox((0, 0, 0), tuple(d - 1 for d in MICRO.in_dims))
        boxed = predict(m, vol, clicks, boxes=[box])
        assert np.array_equal(full.data, boxed.data)

    def test_outside_boxes_is_background(self, rng):
        m = build_model(MICRO, seed=2)
        vol = Volume(rng.random((8, 64, 64)).astype(np.float32))
        clicks = ClickSet(positives=((1, 8, 8), (6, 40, 40)))
        boxes = [BoundingBox((0, 0, 0), (3, 31, 31)), BoundingBox((4, 32, 32), (7, 63, 63))]
        mask = predict(m, vol, clicks, boxes=boxes)
        outside = np.ones(vol.dims, bool)
        for b in boxes:
            outside[b.slices()] = False
        assert not mask.data[outside].any()

    def test_unpaddable_box_errors(self, rng):
        m = build_model(MICRO, seed=2)
        vol = Volume(rng.random((4, 20, 20)).astype(np.float32))
        with pytest.raises(VolumeError):
            predict(m, vol, ClickSet(), boxes=[BoundingBox((0, 0, 0), (3, 19, 19))])
