import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pptrl import metrics
from pptrl.errors import InvalidInputError


class TestJerk:
    def test_constant_velocity(self):
        t = np.arange(0, 1, 0.01)
        x = np.stack([0.3 * t, -0.1 * t + 2], axis=1)
        assert metrics.jerk_rms(x, 0.01) == pytest.approx(0.0, abs=1e-8)

    def test_cubic(self):
        # d^3/dt^3 t^3 = 6 everywhere
        dt = 1e-3
        t = np.arange(0, 1 + dt / 2, dt)
        assert abs(metrics.jerk_rms(t ** 3, dt) - 6.0) < 1e-6

    def test_cubic_short(self):
        dt = 0.1
        t = np.arange(4) * dt
        assert metrics.jerk_rms(t ** 3, dt) == pytest.approx(6.0, rel=1e-9)

    def test_scaling(self):
        rng = np.random.default_rng(0)
        x = np.cumsum(rng.standard_normal((50, 3)), axis=0)
        assert metrics.jerk_rms(2 * x, 0.01) == pytest.approx(2 * metrics.jerk_rms(x, 0.01), rel=1e-12)

    def test_too_few(self):
        with pytest.raises(InvalidInputError):
            metrics.jerk_rms(np.zeros(3), 0.01)


class TestPercentile:
    def test_constant(self):
        assert metrics.peak_wrench_p95(np.full(17, 3.2)) == pytest.approx(3.2)

    def test_one_to_hundred(self):
        # rank (n-1)*0.95 = 94.05 -> 95 + 0.05 * (96 - 95)
        assert metrics.peak_wrench_p95(np.arange(1, 101)) == pytest.approx(95.05, abs=1e-12)

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=40), st.randoms())
    def test_permutation_invariant(self, values, rnd):
        shuffled = list(values)
        rnd.shuffle(shuffled)
        assert metrics.peak_wrench_p95(values) == metrics.peak_wrench_p95(shuffled)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            metrics.peak_wrench_p95([])


class TestOverload:
    def test_fraction(self):
        assert metrics.overload_ratio([5, 15, 5], 10) == pytest.approx(1 / 3)

    def test_none(self):
        assert metrics.overload_ratio([1, 2, 3], 10) == 0.0

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            metrics.overload_ratio([], 1.0)


class TestContinuity:
    def test_always(self):
        assert metrics.contact_continuity([True] * 10) == 1.0

    @pytest.mark.parametrize("n", [1, 2, 5, 13])
    def test_alternating(self, n):
        flags = [i % 2 == 0 for i in range(2 * n)]
        assert metrics.contact_continuity(flags) == pytest.approx(1 / n)

    def test_never(self):
        assert metrics.contact_continuity([False] * 5) == 0.0

    def test_mean_mode(self):
        flags = [1, 1, 1, 0, 1, 0, 0]
        # runs 3 and 1: mean 2 over 4 contact steps
        assert metrics.contact_continuity(flags, mode="mean") == pytest.approx(0.5)
        assert metrics.contact_continuity(flags) == pytest.approx(0.75)


class TestProgress:
    def test_goal(self):
        assert metrics.progress_at_T([0.2, 0.9, 1.0]) == 1.0

    def test_no_motion(self):
        assert metrics.progress_at_T([0.0, 0.0]) == 0.0

    def test_running_max(self):
        assert metrics.progress_at_T([0.1, 0.6, 0.3]) == 0.6

    @given(st.lists(st.floats(-1, 2), min_size=1, max_size=30), st.floats(0, 1))
    def test_monotone_in_series(self, values, bump):
        raised = [v + bump for v in values]
        assert metrics.progress_at_T(raised) >= metrics.progress_at_T(values)


def test_episode_metrics_and_aggregate():
    n = 20
    log = metrics.EpisodeLog(dt=0.01, horizon=0.2, positions=np.zeros((n, 3)), wrench_norms=np.ones(n),
                             powers=np.linspace(0, 10, n), gammas=np.where(np.linspace(0, 10, n) > 5,
                                                                           5 / np.maximum(np.linspace(0, 10, n), 1e-6), 1.0),
                             contact=np.ones(n, bool), progress=np.linspace(0, 1, n), success=True)
    m = metrics.episode_metrics(log, P_max=5.0, gated=True)
    assert m.overload_ratio == 0.0
    assert metrics.episode_metrics(log, P_max=5.0).overload_ratio > 0
    assert m.max_power == pytest.approx(5.0) and m.success == 1.0
    assert metrics.episode_metrics(log, P_max=5.0).max_power == 10.0
    agg = metrics.aggregate([m, m])
    assert agg["max_power"] == (pytest.approx(5.0), 0.0)
    table = metrics.metrics_table_csv({"PPT": agg, "ST": agg})
    lines = table.splitlines()
    assert lines[0] == "metric,unit,PPT,ST"
    assert len(lines) == 1 + len(metrics.METRIC_UNITS)


def test_moving_average():
    np.testing.assert_allclose(metrics.moving_average([1, 2, 3, 4], 2), [1, 1.5, 2.5, 3.5])
