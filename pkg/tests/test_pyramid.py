"""Pyramid rendering, its gradient, level schedule, and color decorrelation."""

import numpy as np
import pytest

from graddistill import (ColorTransform, PyramidImage, RngStream,
                         activate_next_level, color_matrix_from_dataset,
                         init_pyramid, render, render_vjp)
from graddistill.errors import ShapeError
from graddistill.pyramid import load_pyramid, save_pyramid


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def make_pyramid(stream, r, active=None):
    p = init_pyramid(stream, r)
    if active is not None:
        p.active_count = active
    return p


class TestRender:
    def test_all_zero_levels_give_half(self):
        p = PyramidImage([np.zeros((3, 1, 1)), np.zeros((3, 2, 2))], active_count=2)
        out = render(p, ColorTransform.identity())
        assert np.abs(out - 0.5).max() < 1e-15

    def test_saturation(self):
        p = PyramidImage([np.full((3, 1, 1), 20.0)], active_count=1)
        out = render(p, ColorTransform.identity())
        assert (out > 0.999).all()

    def test_two_level_brute_force(self):
        # R=2: sigmoid((a + b_ij) / 2) per pixel, by direct evaluation
        stream = RngStream(1, 2)
        a = stream.normal((3, 1, 1))
        b = stream.normal((3, 2, 2))
        p = PyramidImage([a, b], active_count=2)
        out = render(p, ColorTransform.identity())
        expected = _sigmoid((a + b) / 2.0)  # 1x1 upsample broadcasts exactly
        assert np.abs(out - expected).max() < 1e-14

    def test_output_in_open_interval(self):
        p = init_pyramid(RngStream(5, 5), 8)
        p.active_count = len(p.levels)
        out = render(p, ColorTransform.identity())
        assert (out > 0.0).all() and (out < 1.0).all()

    def test_inactive_levels_do_not_affect_output(self):
        stream = RngStream(7, 7)
        p = make_pyramid(stream, 8, active=2)
        before = render(p, ColorTransform.identity())
        p.levels[3] = p.levels[3] + 100.0  # perturb inactive level
        after = render(p, ColorTransform.identity())
        assert np.array_equal(before, after)

    def test_scale_two_matches_tanh_form(self):
        # sigmoid(2x) = 1/2 + tanh(x)/2
        stream = RngStream(8, 1)
        p = make_pyramid(stream, 4, active=3)
        out = render(p, ColorTransform.identity(), scale=2.0)
        from graddistill.resample import bilinear_resize
        comp = sum(bilinear_resize(lev, 4, 4) for lev in p.levels[:3]) / 3.0
        assert np.abs(out - (0.5 + 0.5 * np.tanh(comp))).max() < 1e-12


class TestRenderVjp:
    def test_zero_upstream(self):
        p = make_pyramid(RngStream(2, 2), 4, active=2)
        grads = render_vjp(p, ColorTransform.identity(), np.zeros((3, 4, 4)))
        assert all(np.array_equal(g, np.zeros_like(g)) for g in grads)

    def test_inactive_levels_get_exact_zero(self):
        p = make_pyramid(RngStream(3, 3), 8, active=2)
        up = RngStream(4, 4).normal((3, 8, 8))
        grads = render_vjp(p, ColorTransform.identity(), up)
        for g in grads[2:]:
            assert np.array_equal(g, np.zeros_like(g))
        assert any(np.abs(g).max() > 0 for g in grads[:2])

    @pytest.mark.parametrize("scale", [1.0, 2.0])
    def test_finite_differences(self, scale):
        stream = RngStream(6, 6)
        p = make_pyramid(stream, 4, active=2)
        ct = ColorTransform(np.array([[1.0, 0.2, 0.0], [0.0, 0.9, 0.1], [0.3, 0.0, 1.1]]))
        up = stream.normal((3, 4, 4))

        def loss():
            return float((render(p, ct, scale) * up).sum())

        grads = render_vjp(p, ct, up, scale)
        h = 1e-5
        scale_ref = max(np.abs(g).max() for g in grads)
        for li in range(2):
            lev = p.levels[li]
            it = np.nditer(lev, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = lev[idx]
                lev[idx] = orig + h
                lp = loss()
                lev[idx] = orig - h
                lm = loss()
                lev[idx] = orig
                fd = (lp - lm) / (2 * h)
                assert abs(fd - grads[li][idx]) / scale_ref < 1e-6


class TestSchedule:
    def test_init_draws_deterministic(self):
        a = init_pyramid(RngStream(1, 1), 16)
        b = init_pyramid(RngStream(1, 1), 16)
        assert all(np.array_equal(x, y) for x, y in zip(a.levels, b.levels))

    def test_init_statistics(self):
        p = init_pyramid(RngStream(2, 9), 64)
        top = p.levels[-1]  # 3*64*64 = 12288 draws; 3 sigma ~ 0.027
        assert abs(top.mean()) < 0.03
        assert abs(top.std() - 1.0) < 0.03

    def test_active_count_starts_at_one(self):
        assert init_pyramid(RngStream(0, 0), 32).active_count == 1

    def test_activation_sequence_and_cap(self):
        p = init_pyramid(RngStream(0, 0), 8)  # 4 levels
        counts = [p.active_count]
        for _ in range(6):
            p = activate_next_level(p)
            counts.append(p.active_count)
        assert counts == [1, 2, 3, 4, 4, 4, 4]

    def test_activation_halves_composite(self):
        # second level zero: pre-sigmoid values halve when it activates
        a = RngStream(3, 1).normal((3, 1, 1))
        p = PyramidImage([a, np.zeros((3, 2, 2))], active_count=1)
        one = render(p, ColorTransform.identity())
        two = render(activate_next_level(p), ColorTransform.identity())
        pre_one = np.log(one / (1 - one))
        pre_two = np.log(two / (1 - two))
        assert np.abs(pre_two - pre_one / 2.0).max() < 1e-9

    def test_activation_does_not_touch_stored_values(self):
        p = init_pyramid(RngStream(4, 2), 8)
        snapshot = [lev.copy() for lev in p.levels]
        q = activate_next_level(p)
        assert all(np.array_equal(a, b) for a, b in zip(q.levels, snapshot))


class TestColorMatrix:
    def test_grayscale_falls_back_to_identity(self):
        gray = RngStream(5, 1).uniform((100, 1, 4, 4))
        imgs = np.repeat(gray, 3, axis=1)  # all channels equal: singular cov
        ct = color_matrix_from_dataset(imgs)
        assert np.array_equal(ct.matrix, np.eye(3))

    def test_unit_covariance_gives_identityish(self):
        noise = RngStream(6, 2).normal((4000, 3, 2, 2))
        ct = color_matrix_from_dataset(noise)
        assert np.abs(ct.matrix - np.eye(3)).max() < 0.05

    def test_recovers_known_covariance(self):
        # whiten empirically, then color with a known Sigma: L L^T == Sigma
        target = np.array([[1.0, 0.6, 0.2], [0.6, 1.5, 0.4], [0.2, 0.4, 0.8]])
        noise = RngStream(7, 3).normal((500, 3, 8, 8))
        flat = noise.transpose(1, 0, 2, 3).reshape(3, -1)
        flat = flat - flat.mean(axis=1, keepdims=True)
        cov = np.cov(flat)
        white = np.linalg.inv(np.linalg.cholesky(cov)) @ flat
        colored = (np.linalg.cholesky(target) @ white).reshape(3, 500, 8, 8)
        ct = color_matrix_from_dataset(colored.transpose(1, 0, 2, 3))
        assert np.abs(ct.matrix @ ct.matrix.T - target).max() < 1e-6

    def test_identity_composition(self):
        noise = RngStream(8, 4).normal((2000, 3, 4, 4))
        ct = color_matrix_from_dataset(noise)
        composed = ct.matrix @ np.linalg.inv(ct.matrix)
        assert np.abs(composed - np.eye(3)).max() < 1e-12


class TestPyramidIO:
    def test_checkpoint_round_trip(self, tmp_path):
        p = make_pyramid(RngStream(9, 9), 16, active=3)
        save_pyramid(tmp_path / "ck", p, iteration=123)
        q, it = load_pyramid(tmp_path / "ck")
        assert it == 123
        assert q.active_count == 3
        assert all(np.array_equal(a, b) for a, b in zip(p.levels, q.levels))

    def test_invalid_ladder_rejected(self):
        with pytest.raises(ShapeError):
            PyramidImage([np.zeros((3, 2, 2)), np.zeros((3, 3, 3))], active_count=1)

    def test_single_level_variant_allowed(self):
        p = PyramidImage([np.zeros((3, 16, 16))], active_count=1)
        assert p.max_resolution == 16
