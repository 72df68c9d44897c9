"""Encoder geometry, parameter init, and head wiring."""

import numpy as np
import pytest

import cliprank.autodiff as ad
from cliprank.encoders import (
    EncoderConfig,
    ParamSet,
    classify,
    encode_context,
    encode_target,
    encode_target_clip,
    init_params,
    num_classes_of,
    predict_rotation,
)
from cliprank.exceptions import ConfigError, DataError

TINY = EncoderConfig(
    frame_channels=1,
    frame_size=8,
    context_len=4,
    channels=(3, 4),
    spatial_strides=((2, 2), (2, 2)),
    temporal_strides=(2, 2),
)


class TestConfig:
    def test_default_grid(self):
        cfg = EncoderConfig()
        assert cfg.grid_shape == (32, 4, 4)
        assert cfg.grid_depth == 1

    def test_tiny_grid(self):
        assert TINY.grid_shape == (4, 2, 2)

    def test_stride_schedule_length_mismatch(self):
        with pytest.raises(ConfigError, match="stride schedules"):
            EncoderConfig(spatial_strides=((2, 2), (2, 2)))

    def test_context_not_reduced_to_one(self):
        with pytest.raises(ConfigError, match="exactly 1"):
            EncoderConfig(context_len=20)


class TestParamSet:
    def test_ordered_names_and_lookup(self):
        ps = ParamSet()
        ps.add("a.w", ad.parameter(np.zeros(2)))
        ps.add("b.w", ad.parameter(np.zeros(3)))
        assert ps.names == ["a.w", "b.w"]
        assert "a.w" in ps and "c.w" not in ps
        assert len(ps) == 2

    def test_duplicate_rejected(self):
        ps = ParamSet()
        ps.add("a", ad.parameter(np.zeros(1)))
        with pytest.raises(ValueError, match="duplicate"):
            ps.add("a", ad.parameter(np.zeros(1)))

    def test_subset_by_prefix(self):
        ps = ParamSet()
        for name in ("g.conv0.w", "f.conv0.w", "rot.w"):
            ps.add(name, ad.parameter(np.zeros(1)))
        assert [n for n, _ in ps.subset("g.", "rot.")] == ["g.conv0.w", "rot.w"]

    def test_zero_grads(self):
        ps = ParamSet()
        t = ad.parameter(np.ones(2))
        ps.add("x", t)
        t.grad = np.ones(2, dtype=np.float32)
        ps.zero_grads()
        assert t.grad is None


class TestInit:
    def test_expected_names(self):
        params = init_params(EncoderConfig(), num_classes=16, seed=0)
        names = set(params.names)
        for i in range(4):
            assert f"g.conv{i}.w" in names and f"g.conv{i}.b" in names
            assert f"f.conv{i}.w" in names and f"f.conv{i}.b" in names
        assert {"rot.w", "rot.b", "cls.w", "cls.b"} <= names
        assert len(params) == 20

    def test_shapes(self):
        params = init_params(EncoderConfig(), num_classes=16, seed=0)
        assert params["g.conv0.w"].shape == (8, 1, 3, 3, 3)
        assert params["g.conv3.w"].shape == (32, 24, 3, 3, 3)
        assert params["f.conv1.w"].shape == (16, 8, 3, 3)
        assert params["rot.w"].shape == (4, 32)
        assert params["cls.w"].shape == (16, 32)
        assert num_classes_of(params) == 16

    def test_deterministic_per_seed(self):
        a = init_params(TINY, num_classes=4, seed=3)
        b = init_params(TINY, num_classes=4, seed=3)
        c = init_params(TINY, num_classes=4, seed=4)
        assert np.array_equal(a["f.conv0.w"].data, b["f.conv0.w"].data)
        assert not np.array_equal(a["f.conv0.w"].data, c["f.conv0.w"].data)

    def test_fan_in_bounds(self):
        params = init_params(EncoderConfig(), num_classes=16, seed=0)
        w = params["g.conv1.w"].data  # fan_in = 8 * 27
        bound = np.sqrt(6.0 / (8 * 27))
        assert np.max(np.abs(w)) <= bound
        assert np.max(np.abs(w)) > 0.5 * bound  # actually fills the range

    def test_params_require_grad(self):
        params = init_params(TINY, num_classes=4, seed=0)
        assert all(t.requires_grad for _, t in params.items())

    def test_too_few_classes(self):
        with pytest.raises(ConfigError, match="classes"):
            init_params(TINY, num_classes=1, seed=0)


class TestEncoders:
    def test_context_grid_shape(self, rng):
        params = init_params(TINY, num_classes=4, seed=0)
        clip = rng.uniform(size=(4, 1, 8, 8)).astype(np.float32)
        h = encode_context(params, TINY, clip)
        assert h.shape == (4, 2, 2)

    def test_default_geometry_grid(self, rng):
        cfg = EncoderConfig()
        params = init_params(cfg, num_classes=16, seed=0)
        clip = rng.uniform(size=(16, 1, 32, 32)).astype(np.float32)
        assert encode_context(params, cfg, clip).shape == (32, 4, 4)
        frame = rng.uniform(size=(1, 32, 32)).astype(np.float32)
        assert encode_target(params, cfg, frame).shape == (32, 4, 4)

    def test_batched_matches_single(self, rng):
        params = init_params(TINY, num_classes=4, seed=0)
        clips = rng.uniform(size=(3, 4, 1, 8, 8)).astype(np.float32)
        hb = encode_context(params, TINY, clips)
        assert hb.shape == (3, 4, 2, 2)
        for i in range(3):
            hi = encode_context(params, TINY, clips[i])
            assert np.allclose(hb.data[i], hi.data, atol=1e-6)

        frames = rng.uniform(size=(5, 1, 8, 8)).astype(np.float32)
        zb = encode_target(params, TINY, frames)
        for i in range(5):
            zi = encode_target(params, TINY, frames[i])
            assert np.allclose(zb.data[i], zi.data, atol=1e-6)

    def test_shape_mismatch_rejected(self, rng):
        params = init_params(TINY, num_classes=4, seed=0)
        with pytest.raises(ConfigError, match="does not match config"):
            encode_context(params, TINY, rng.uniform(size=(4, 1, 9, 8)).astype(np.float32))
        with pytest.raises(ConfigError, match="does not match config"):
            encode_target(params, TINY, rng.uniform(size=(2, 8, 8)).astype(np.float32))

    def test_taps_collect_pre_relu(self, rng):
        params = init_params(TINY, num_classes=4, seed=0)
        taps = []
        encode_context(params, TINY, rng.uniform(size=(4, 1, 8, 8)).astype(np.float32), taps=taps)
        assert len(taps) == 2  # one per conv block

    def test_target_clip_rejects_multi_frame(self, rng):
        params = init_params(TINY, num_classes=4, seed=0)
        clip = rng.uniform(size=(2, 1, 8, 8)).astype(np.float32)
        with pytest.raises(DataError, match="single-frame"):
            encode_target_clip(params, TINY, clip)

    def test_gradients_reach_all_encoder_params(self, rng):
        params = init_params(TINY, num_classes=4, seed=0)
        clip = rng.uniform(size=(4, 1, 8, 8)).astype(np.float32)
        encode_context(params, TINY, clip).sum().backward()
        for name, t in params.subset("g."):
            assert t.grad is not None, name


class TestHeads:
    def test_rotation_logit_shapes(self, rng):
        params = init_params(TINY, num_classes=4, seed=0)
        z = ad.Tensor(rng.uniform(size=(4, 2, 2)).astype(np.float32))
        assert predict_rotation(params, z).shape == (4,)
        zb = ad.Tensor(rng.uniform(size=(5, 4, 2, 2)).astype(np.float32))
        assert predict_rotation(params, zb).shape == (5, 4)

    def test_classify_matches_manual_pool_affine(self, rng):
        params = init_params(TINY, num_classes=4, seed=0)
        grid = rng.uniform(size=(4, 2, 2)).astype(np.float32)
        logits = classify(params, ad.Tensor(grid))
        pooled = grid.mean(axis=(-2, -1))
        want = params["cls.w"].data @ pooled + params["cls.b"].data
        assert np.allclose(logits.data, want, atol=1e-6)

    def test_classify_head_size_check(self, rng):
        params = init_params(TINY, num_classes=4, seed=0)
        z = ad.Tensor(rng.uniform(size=(4, 2, 2)).astype(np.float32))
        with pytest.raises(ConfigError, match="classes"):
            classify(params, z, num_classes=7)
