import math

import numpy as np
import pytest
from conftest import exact_fields, random_trial
from hypothesis import given, settings
from hypothesis import strategies as st

from deepfosls.errors import ConfigError, DivergenceError
from deepfosls.loss import AnalyticFields
from deepfosls.problems import make_remark1d
from deepfosls.sampling import Box
from deepfosls.training import (
    HISTORY_COLUMNS,
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    clip_params,
    lr_at,
    mc_error,
    solve,
    with_overrides,
)


def naive_adam(theta, g, m, v, t, lr):
    """Direct transcription of the bias-corrected update, one entry at a time."""
    out, m2, v2 = [], [], []
    t2 = t + 1
    for th, gi, mi, vi in zip(theta, g, m, v):
        mi = 0.9 * mi + 0.1 * gi
        vi = 0.999 * vi + 0.001 * gi**2
        out.append(th - lr * (mi / (1 - 0.9**t2)) / (math.sqrt(vi / (1 - 0.999**t2)) + 1e-8))
        m2.append(mi)
        v2.append(vi)
    return np.array(out), np.array(m2), np.array(v2)


class TestAdam:
    def test_zero_gradient(self):
        theta = np.array([1.0, -2.0])
        new, state = adam_step(theta, np.zeros(2), AdamState.zeros(2), 0.1)
        np.testing.assert_array_equal(new, theta)
        assert state.t == 1

    def test_scalar_example(self):
        new, state = adam_step(np.zeros(1), np.ones(1), AdamState.zeros(1), 0.1)
        assert state.m[0] == pytest.approx(0.1, rel=1e-15)
        assert state.v[0] == pytest.approx(0.001, rel=1e-12)
        assert new[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-15)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        theta, g = rng.normal(size=5), rng.normal(size=5)
        s = AdamState(rng.normal(size=5), rng.uniform(size=5), 3)
        a, sa = adam_step(theta, g, s, 0.01)
        b, sb = adam_step(theta, g, s, 0.01)
        assert a.tobytes() == b.tobytes() and sa.v.tobytes() == sb.v.tobytes()

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(1, 20))
            theta, g, m = rng.normal(size=(3, n))
            v = rng.uniform(0, 2, n)
            t = int(rng.integers(0, 5000))
            lr = float(rng.uniform(1e-4, 1e-1))
            new, state = adam_step(theta, g, AdamState(m, v, t), lr)
            ref, m2, v2 = naive_adam(theta, g, m, v, t, lr)
            np.testing.assert_allclose(new, ref, rtol=1e-14, atol=1e-14)
            np.testing.assert_allclose(state.m, m2, rtol=1e-14, atol=1e-14)
            np.testing.assert_allclose(state.v, v2, rtol=1e-14, atol=1e-14)
            assert state.t == t + 1 and np.all(state.v >= 0)

    def test_non_finite(self):
        with pytest.raises(DivergenceError):
            adam_step(np.zeros(2), np.array([1.0, np.nan]), AdamState.zeros(2), 0.1)

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            adam_step(np.zeros(2), np.zeros(3), AdamState.zeros(2), 0.1)


class TestSchedule:
    def test_steps(self):
        cfg = TrainConfig(lr0=0.005, halve_every=2500)
        assert lr_at(cfg, 0) == 0.005
        assert lr_at(cfg, 2499) == 0.005
        assert lr_at(cfg, 2500) == 0.0025
        assert lr_at(cfg, 10_000) == 0.005 / 16

    def test_config_validation(self):
        with pytest.raises(ConfigError, match="train.lr0"):
            TrainConfig(lr0=0.0)
        with pytest.raises(ConfigError, match="train.resample"):
            TrainConfig(resample="sometimes")
        assert with_overrides(TrainConfig(), steps=5, lr0=None).steps == 5


class TestClip:
    def test_inside(self):
        theta = np.array([0.3, 0.4])
        assert clip_params(theta, 1.0) is theta

    def test_scaling(self):
        np.testing.assert_allclose(clip_params(np.array([3.0, 4.0]), 1.0), [0.6, 0.8], rtol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.floats(1e-3, 1e3))
    def test_projection(self, values, radius):
        assert np.linalg.norm(clip_params(np.array(values), radius)) <= radius + 1e-12


class TestMcError:
    def test_exact(self, ex1):
        l2, mse = mc_error(exact_fields(ex1), ex1.exact.u, ex1.domain, 1000, 0)
        assert l2 <= 1e-12 and mse <= 1e-24

    def test_constant_offset(self):
        box = Box([[0.0, 2.0]])
        fields = AnalyticFields(lambda x: np.sin(x[:, 0]) + 0.25, None, 1e-3)
        l2, mse = mc_error(fields, lambda x: np.sin(x[:, 0]), box, 37, 3)
        assert mse == pytest.approx(0.0625, rel=1e-12)
        assert l2 == pytest.approx(math.sqrt(2 * 0.0625), rel=1e-12)


def small_run(cfg, seed=0):
    prob = make_remark1d()
    trial = random_trial(prob, widths=(5,), activation="tanh", seed=seed)
    return solve(prob, trial, cfg)


class TestSolve:
    def test_zero_steps(self):
        prob = make_remark1d()
        trial = random_trial(prob, widths=(5,))
        before = trial.params.copy()
        out, hist = solve(prob, trial, TrainConfig(steps=0))
        assert len(hist) == 0
        np.testing.assert_array_equal(out.params, before)

    def test_history_and_descent(self):
        cfg = TrainConfig(N=200, steps=300, lr0=1e-2, error_every=50, timing=False)
        _, hist = small_run(cfg)
        assert len(hist) == 300
        np.testing.assert_array_equal(hist.column("step"), np.arange(300))
        loss = hist.column("loss")
        np.testing.assert_allclose(loss, hist.column("loss_flux") + hist.column("loss_div"), rtol=1e-12)
        assert np.median(loss[-15:]) < np.median(loss[:15])
        l2 = hist.column("l2_error")
        assert np.isfinite(l2[0]) and np.isnan(l2[1]) and np.isfinite(l2[-1])

    def test_deterministic(self):
        cfg = TrainConfig(N=50, steps=40, timing=False)
        a = small_run(cfg)[1].to_csv("seed=0")
        b = small_run(cfg)[1].to_csv("seed=0")
        assert a == b

    def test_clipping_bound(self):
        radius = 1.5
        norms = []
        cfg = TrainConfig(N=50, steps=60, lr0=0.05, clip_radius=radius, error_every=0)
        prob = make_remark1d()
        trial = random_trial(prob, widths=(5,), seed=2, scale=1.0)
        assert np.linalg.norm(trial.params) > radius
        solve(prob, trial, cfg, callback=lambda step, value, theta: norms.append(np.linalg.norm(theta)))
        assert len(norms) == 60 and max(norms) <= radius + 1e-12

    def test_clipping_invariance_inside_ball(self):
        cfg = TrainConfig(N=50, steps=40, timing=False)
        free = small_run(cfg)
        clipped = small_run(with_overrides(cfg, clip_radius=1e6))
        assert np.linalg.norm(free[0].params) < 1e6
        assert free[0].params.tobytes() == clipped[0].params.tobytes()
        assert free[1].to_csv() == clipped[1].to_csv()

    def test_divergence_keeps_history(self):
        prob = make_remark1d()
        trial = random_trial(prob, widths=(3,))
        calls = []

        def poison(step, value, theta):
            calls.append(step)
            if step == 4:
                trial.v.params[0] = np.nan

        with pytest.raises(DivergenceError) as info:
            solve(prob, trial, TrainConfig(N=10, steps=20, error_every=0), callback=poison)
        assert info.value.step == 5
        assert len(info.value.history) == 5


class TestHistory:
    def test_csv_roundtrip(self):
        _, hist = small_run(TrainConfig(N=30, steps=12, error_every=5))
        text = hist.to_csv("config_hash=abc seed=0")
        assert text.splitlines()[0] == "# config_hash=abc seed=0"
        assert text.splitlines()[1] == ",".join(HISTORY_COLUMNS)
        back = TrainHistory.from_csv(text)
        for c in HISTORY_COLUMNS:
            np.testing.assert_array_equal(back.column(c), hist.column(c))

    def test_rejects_non_finite(self):
        from deepfosls.loss import LossValue

        hist = TrainHistory()
        with pytest.raises(DivergenceError):
            hist.append(0, LossValue(np.inf, 0.0, 0.0), 0.1)

    def test_rejects_non_monotone(self):
        from deepfosls.loss import LossValue

        hist = TrainHistory()
        hist.append(3, LossValue(1.0, 0.5, 0.5), 0.1)
        with pytest.raises(ValueError):
            hist.append(3, LossValue(1.0, 0.5, 0.5), 0.1)
