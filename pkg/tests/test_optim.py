"""Optimizer and batching tests.

The three-step trajectories were computed by hand from the update
equations at 40-digit precision and frozen here; the implementations must
reproduce them to 1e-12 relative.
"""

import numpy as np
import pytest

from soilpinn.optim import (Adam, GradientDescent, RMSProp, make_batches,
                            make_optimizer)

GRADS = (0.3, -0.1, 0.2)

GD_TRAJ = [0.497, 0.498, 0.496]
RMSPROP_TRAJ = [0.49683772233983162, 0.49788600717655354,
                0.49607454970290556]
ADAM_TRAJ = [0.49900000003333333, 0.49859978147928081, 0.49799669501576139]


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def run_traj(opt):
    p = [np.array([0.5])]
    out = []
    for g in GRADS:
        opt.step(p, [np.array([g])])
        out.append(float(p[0][0]))
    return out


class TestTrajectories:
    def test_gd(self):
        for got, want in zip(run_traj(GradientDescent(lr=1e-2)), GD_TRAJ):
            assert rel(got, want) < 1e-12

    def test_rmsprop(self):
        for got, want in zip(run_traj(RMSProp(lr=1e-3)), RMSPROP_TRAJ):
            assert rel(got, want) < 1e-12

    def test_adam(self):
        for got, want in zip(run_traj(Adam(lr=1e-3)), ADAM_TRAJ):
            assert rel(got, want) < 1e-12

    def test_rmsprop_cold_start_step(self):
        # first step is -lr * g / sqrt(0.1 * g^2) = -lr * sign(g) / sqrt(0.1)
        for g0 in (0.3, -2.0, 1e-6):
            opt = RMSProp(lr=1e-3)
            p = [np.array([0.0])]
            opt.step(p, [np.array([g0])])
            want = -1e-3 * np.sign(g0) / np.sqrt(0.1)
            assert rel(p[0][0], want) < 1e-12

    def test_zero_gradient_is_a_fixed_point(self):
        for opt in (GradientDescent(1e-2), RMSProp(1e-3), Adam(1e-3)):
            p = [np.array([0.7])]
            opt.step(p, [np.array([0.0])])
            assert p[0][0] == 0.7


class TestAdamBound:
    @pytest.mark.parametrize("g0", [1e-12, 1.0, -42.0, 3e7])
    def test_first_step_within_lr(self, g0):
        opt = Adam(lr=1e-3)
        p = [np.array([0.0])]
        opt.step(p, [np.array([g0])])
        assert abs(p[0][0]) <= 1e-3 * (1.0 + 1e-9)

    def test_constant_gradient_steps_within_lr(self):
        opt = Adam(lr=1e-3)
        p = [np.array([0.0])]
        for _ in range(50):
            before = p[0][0]
            opt.step(p, [np.array([2.5])])
            assert abs(p[0][0] - before) <= 1e-3 * (1.0 + 1e-9)


class TestGuards:
    def test_non_finite_gradient_raises_before_state_change(self):
        opt = Adam(lr=1e-3)
        p = [np.array([1.0])]
        opt.step(p, [np.array([0.5])])
        t, m, v = opt.t, opt.m[0].copy(), opt.v[0].copy()
        p_before = p[0].copy()
        for bad in (np.nan, np.inf, -np.inf):
            with pytest.raises(FloatingPointError):
                opt.step(p, [np.array([bad])])
            assert opt.t == t
            assert np.array_equal(opt.m[0], m)
            assert np.array_equal(opt.v[0], v)
            assert np.array_equal(p[0], p_before)

    def test_gd_and_rmsprop_guard_too(self):
        for opt in (GradientDescent(1e-2), RMSProp(1e-3)):
            p = [np.array([1.0])]
            with pytest.raises(FloatingPointError):
                opt.step(p, [np.array([np.nan])])
            assert p[0][0] == 1.0


class TestGDLinearity:
    def test_step_scales_with_lr_and_gradient(self):
        g = np.array([0.37, -1.2])
        for lr in (1e-3, 1e-2, 0.5):
            p = [np.zeros(2)]
            GradientDescent(lr).step(p, [g.copy()])
            assert np.allclose(p[0], -lr * g, rtol=1e-15, atol=0.0)
        p = [np.zeros(2)]
        GradientDescent(1e-2).step(p, [2.0 * g])
        assert np.allclose(p[0], 2.0 * -1e-2 * g, rtol=1e-15, atol=0.0)


class TestFactory:
    def test_names_and_default_rates(self):
        assert isinstance(make_optimizer("gd"), GradientDescent)
        assert isinstance(make_optimizer("rmsprop"), RMSProp)
        assert isinstance(make_optimizer("adam"), Adam)
        assert make_optimizer("gd").lr == 1e-2
        assert make_optimizer("rmsprop").lr == 1e-3
        assert make_optimizer("adam").lr == 1e-3
        assert make_optimizer("adam", lr=5e-4).lr == 5e-4
        with pytest.raises(ValueError):
            make_optimizer("lbfgs")


class TestBatches:
    def test_default_partition_shape(self):
        batches = make_batches(2250, 10000, 128, seed=7, epoch=0)
        sizes = [len(s) for s, _ in batches]
        assert len(batches) == 18
        assert sizes[:-1] == [128] * 17
        assert sizes[-1] == 74
        allidx = np.sort(np.concatenate([s for s, _ in batches]))
        assert np.array_equal(allidx, np.arange(2250))

    def test_collocation_proportional(self):
        batches = make_batches(2250, 10000, 128, seed=7, epoch=0)
        assert len(batches[0][1]) == int(np.ceil(10000 * 128 / 2250))
        assert len(batches[-1][1]) == int(np.ceil(10000 * 74 / 2250))
        for _, c in batches:
            assert len(np.unique(c)) == len(c)
            assert c.min() >= 0 and c.max() < 10000

    def test_epoch_changes_shuffle(self):
        a = make_batches(2250, 10000, 128, seed=7, epoch=0)
        b = make_batches(2250, 10000, 128, seed=7, epoch=1)
        assert not np.array_equal(a[0][0], b[0][0])

    def test_seed_determinism(self):
        a = make_batches(500, 1000, 64, seed=3, epoch=2)
        b = make_batches(500, 1000, 64, seed=3, epoch=2)
        for (s1, c1), (s2, c2) in zip(a, b):
            assert np.array_equal(s1, s2) and np.array_equal(c1, c2)

    def test_full_batch_mode(self):
        batches = make_batches(100, 400, 32, seed=0, epoch=0,
                               full_batch=True)
        assert len(batches) == 1
        assert np.array_equal(batches[0][0], np.arange(100))
        assert np.array_equal(batches[0][1], np.arange(400))

    def test_all_collocation_mode(self):
        batches = make_batches(100, 400, 32, seed=0, epoch=0,
                               all_collocation=True)
        assert len(batches) == 4
        for _, c in batches:
            assert np.array_equal(c, np.arange(400))
