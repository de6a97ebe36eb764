"""Augmentation sampling, replay, linearity, and exact adjoints."""

import numpy as np
import pytest

from graddistill import RngStream, bilinear_resize
from graddistill.augment import (AugmentConfig, AugmentationParams, apply,
                                 apply_vjp, expand_batch, sample_params,
                                 sample_params_vector)
from graddistill.errors import ShapeError


def smallcfg(**kw):
    defaults = dict(out_size=(8, 8), sigma=0.2)
    defaults.update(kw)
    return AugmentConfig(**defaults)


class TestSampling:
    def test_full_area_range_gives_full_crop(self):
        cfg = smallcfg(area_range=(1.0, 1.0), aspect_range=(1.0, 1.0))
        stream = RngStream(1, 1)
        for _ in range(20):
            params = sample_params(stream, cfg, 8, 8)
            assert params.crop == (0, 0, 8, 8)

    def test_zero_sigma_skips_noise(self):
        cfg = smallcfg(sigma=0.0)
        params = sample_params(RngStream(2, 2), cfg, 8, 8)
        assert params.noise_ref is None
        img = RngStream(3, 3).normal((3, 8, 8))
        out1 = apply(img, params)
        assert params.replay_noise() is None
        assert np.array_equal(out1, apply(img, params))

    def test_flip_frequency(self):
        cfg = smallcfg(crop_enabled=False, noise_enabled=False)
        stream = RngStream(4, 4)
        flips = sum(sample_params(stream, cfg, 8, 8).flip for _ in range(10000))
        # binomial 3 sigma: 0.5 +/- 3*0.5/sqrt(1e4) = +/- 0.015
        assert abs(flips / 10000 - 0.5) < 0.015

    def test_crop_always_in_bounds(self):
        cfg = smallcfg(area_range=(0.08, 1.0))
        stream = RngStream(5, 5)
        for _ in range(500):
            params = sample_params(stream, cfg, 11, 7)
            top, left, h, w = params.crop
            assert 0 <= top and top + h <= 11
            assert 0 <= left and left + w <= 7


class TestApply:
    def test_identity_params_leave_image(self):
        img = RngStream(6, 6).normal((3, 8, 8))
        params = AugmentationParams(src_shape=(3, 8, 8), out_shape=(3, 8, 8))
        assert np.array_equal(apply(img, params), img)

    def test_flip_is_involution(self):
        img = RngStream(7, 7).normal((3, 8, 8))
        params = AugmentationParams(src_shape=(3, 8, 8), out_shape=(3, 8, 8), flip=True)
        once = apply(img, params)
        twice = apply(once, params)
        assert np.array_equal(twice, img)
        assert np.array_equal(once, img[:, :, ::-1])

    def test_full_box_upscale_matches_resize(self):
        img = RngStream(8, 8).normal((3, 4, 4))
        params = AugmentationParams(src_shape=(3, 4, 4), out_shape=(3, 8, 8),
                                    crop=(0, 0, 4, 4))
        assert np.abs(apply(img, params) - bilinear_resize(img, 8, 8)).max() < 1e-14

    def test_replay_is_bitwise(self):
        cfg = smallcfg()
        stream = RngStream(9, 9)
        params = sample_params(stream, cfg, 8, 8)
        img = RngStream(10, 1).normal((3, 8, 8))
        assert np.array_equal(apply(img, params), apply(img, params))

    def test_replay_from_serialized_line(self):
        cfg = smallcfg()
        params = sample_params(RngStream(11, 2), cfg, 8, 8)
        img = RngStream(12, 3).normal((3, 8, 8))
        restored = AugmentationParams.from_line(params.to_line())
        assert np.array_equal(apply(img, params), apply(img, restored))

    def test_linear_up_to_noise_constant(self):
        cfg = smallcfg()
        params = sample_params(RngStream(13, 4), cfg, 8, 8)
        stream = RngStream(14, 5)
        x, y = stream.normal((3, 8, 8)), stream.normal((3, 8, 8))
        noise = params.sigma * params.replay_noise()
        lhs = apply(0.3 * x + 0.7 * y, params) - noise
        rhs = 0.3 * (apply(x, params) - noise) + 0.7 * (apply(y, params) - noise)
        assert np.abs(lhs - rhs).max() < 1e-12

    def test_out_of_bounds_params_rejected(self):
        with pytest.raises(ShapeError):
            AugmentationParams(src_shape=(3, 8, 8), out_shape=(3, 4, 4),
                               crop=(5, 5, 8, 8))

    def test_vector_path_noise_only(self):
        cfg = AugmentConfig(flip_enabled=False, crop_enabled=False, sigma=0.5)
        params = sample_params_vector(RngStream(15, 6), cfg, 10)
        vec = RngStream(16, 7).normal(10)
        out = apply(vec, params)
        assert np.abs(out - 0.5 * params.replay_noise() - vec).max() < 1e-14


class TestVjp:
    def test_flip_only_vjp_is_flip(self):
        params = AugmentationParams(src_shape=(3, 8, 8), out_shape=(3, 8, 8), flip=True)
        up = RngStream(17, 8).normal((3, 8, 8))
        assert np.array_equal(apply_vjp(params, up), up[:, :, ::-1])

    def test_adjoint_identity_random_draws(self):
        cfg = smallcfg()
        stream = RngStream(18, 9)
        for _ in range(100):
            params = sample_params(stream, cfg, 9, 9)
            x = stream.normal((3, 9, 9))
            y = stream.normal((3, 8, 8))
            noise = params.replay_noise()
            ax = apply(x, params) - params.sigma * noise
            lhs = float((ax * y).sum())
            rhs = float((x * apply_vjp(params, y)).sum())
            assert abs(lhs - rhs) < 1e-9

    def test_finite_differences(self):
        cfg = smallcfg()
        params = sample_params(RngStream(19, 1), cfg, 8, 8)
        x = RngStream(20, 2).normal((3, 8, 8))
        up = RngStream(21, 3).normal((3, 8, 8))
        grad = apply_vjp(params, up)

        def loss(v):
            return float((apply(v, params) * up).sum())

        h = 1e-5
        scale = np.abs(grad).max()
        it = np.nditer(x, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = x[idx]
            x[idx] = orig + h
            lp = loss(x)
            x[idx] = orig - h
            lm = loss(x)
            x[idx] = orig
            assert abs((lp - lm) / (2 * h) - grad[idx]) / scale < 1e-6


class TestExpandBatch:
    def test_single_round(self):
        cfg = smallcfg(rounds=1)
        imgs = RngStream(22, 4).normal((2, 3, 8, 8))
        batch, params = expand_batch(imgs, cfg, RngStream(23, 5))
        assert batch.shape == (2, 3, 8, 8)
        assert len(params) == 2

    def test_round_major_ordering(self):
        cfg = AugmentConfig(flip_enabled=False, crop_enabled=False,
                            noise_enabled=False, sigma=0.0, rounds=3,
                            out_size=(4, 4))
        imgs = RngStream(24, 6).normal((2, 3, 4, 4))
        batch, _ = expand_batch(imgs, cfg, RngStream(25, 7))
        labels = np.tile(np.array([0, 1]), 3)
        assert labels.tolist() == [0, 1, 0, 1, 0, 1]
        # all transforms disabled: every round equals the input
        for r in range(3):
            assert np.array_equal(batch[2 * r], imgs[0])
            assert np.array_equal(batch[2 * r + 1], imgs[1])

    def test_disabled_transforms_identity(self):
        cfg = AugmentConfig(flip_enabled=False, crop_enabled=False,
                            noise_enabled=False, sigma=0.0, rounds=1,
                            out_size=(8, 8))
        imgs = RngStream(26, 8).normal((3, 3, 8, 8))
        batch, _ = expand_batch(imgs, cfg, RngStream(27, 9))
        assert np.array_equal(batch, imgs)

    def test_summed_vjp_matches_finite_differences(self):
        # gradient through the k-round expansion is the sum of per-round adjoints
        cfg = smallcfg(rounds=3, out_size=(6, 6))
        img = RngStream(28, 1).normal((1, 3, 6, 6))
        batch, params = expand_batch(img, cfg, RngStream(29, 2))
        up = RngStream(30, 3).normal((3, 3, 6, 6))
        grad = sum(apply_vjp(params[k], up[k]) for k in range(3))

        def loss(v):
            total = 0.0
            for k in range(3):
                total += float((apply(v, params[k]) * up[k]).sum())
            return total

        x = img[0].copy()
        h = 1e-5
        scale = np.abs(grad).max()
        it = np.nditer(x, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = x[idx]
            x[idx] = orig + h
            lp = loss(x)
            x[idx] = orig - h
            lm = loss(x)
            x[idx] = orig
            assert abs((lp - lm) / (2 * h) - grad[idx]) / scale < 1e-6
