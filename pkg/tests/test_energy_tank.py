import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pptrl import energy_tank as tank
from pptrl.energy_tank import TankConfig, TankState
from pptrl.errors import InvalidInputError


def axis_pair(p):
    """Wrench/twist pair along x with power magnitude p."""
    return np.array([p, 0, 0, 0, 0, 0.0]), np.array([1.0, 0, 0, 0, 0, 0])


class TestPower:
    def test_aligned(self):
        assert tank.instantaneous_power([1, 0, 0, 0, 0, 0], [2, 0, 0, 0, 0, 0]) == (2.0, 2.0)

    def test_orthogonal(self):
        assert tank.instantaneous_power([1, 0, 0, 0, 0, 0], [0, 3, 0, 0, 0, 0])[0] == 0.0

    def test_mixed(self):
        assert tank.instantaneous_power([1, 1, 0, 0, 0, 1], [-1, 2, 0, 0, 0, 3]) == (4.0, 4.0)

    def test_negative_power_magnitude(self):
        assert tank.instantaneous_power([1, 0, 0, 0, 0, 0], [-2, 0, 0, 0, 0, 0]) == (-2.0, 2.0)


class TestGate:
    cfg = TankConfig(E_max=100.0, E_0=100.0, P_max=10.0, dt=0.01)

    def test_within_budget(self):
        assert tank.gate(self.cfg, TankState(E=100.0), 5.0) == 1.0

    def test_power_bound(self):
        assert tank.gate(self.cfg, TankState(E=100.0), 25.0) == pytest.approx(0.4, abs=1e-15)

    def test_empty_tank(self):
        assert tank.gate(self.cfg, TankState(E=0.0), 3.0) == 0.0

    def test_refill_enters_numerator(self):
        cfg = TankConfig(E_max=1.0, E_0=0.0, P_max=10.0, dt=0.01, u_in=0.02)
        # (0 + 0.02) / (0.01 * 5) = 0.4
        assert tank.gate(cfg, TankState(E=0.0), 5.0) == pytest.approx(0.4, abs=1e-15)

    def test_tiny_power_uses_floor(self):
        assert tank.gate(self.cfg, TankState(E=100.0), 0.0) == 1.0

    @given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 100), st.floats(0, 100))
    def test_monotone(self, p1, p2, E1, E2):
        state = lambda E: TankState(E=E)
        lo, hi = sorted((p1, p2))
        assert tank.gate(self.cfg, state(E1), hi) <= tank.gate(self.cfg, state(E1), lo)
        lo, hi = sorted((E1, E2))
        assert tank.gate(self.cfg, state(lo), p1) <= tank.gate(self.cfg, state(hi), p1)

    def test_negative_power_rejected(self):
        with pytest.raises(InvalidInputError):
            tank.gate(self.cfg, TankState(E=1.0), -1.0)

    def test_disabled_tank_always_passes(self):
        cfg = TankConfig.disabled(dt=0.01)
        assert not cfg.enabled
        state = cfg.initial_state()
        for p in [0.0, 1.0, 1e6, 1e12]:
            gamma, state = tank.step(cfg, state, *axis_pair(p))
            assert gamma == 1.0
        assert math.isinf(state.E)


class TestStep:
    def test_debit(self):
        cfg = TankConfig(E_max=2.0, E_0=1.0, P_max=100.0, dt=0.01)
        gamma, state = tank.step(cfg, TankState(E=1.0), *axis_pair(30.0))  # debit 0.3 J
        assert gamma == 1.0
        assert state.E == pytest.approx(0.7, abs=1e-15)
        assert state.cumulative_injected == pytest.approx(0.3, abs=1e-15)

    def test_saturates_at_cap(self):
        cfg = TankConfig(E_max=2.0, E_0=2.0, P_max=1.0, dt=0.01, u_in=0.5)
        _, state = tank.step(cfg, TankState(E=2.0), np.zeros(6), np.zeros(6))
        assert state.E == 2.0

    @pytest.mark.parametrize("E_0,P_max,p", [(1.0, 10.0, 25.0), (0.37, 3.0, 4.0), (5.0, 1.0, 100.0)])
    def test_drain_step_count(self, E_0, P_max, p):
        cfg = TankConfig(E_max=E_0, E_0=E_0, P_max=P_max, dt=0.01)
        bound = math.ceil(E_0 / (P_max * cfg.dt))
        state = cfg.initial_state()
        steps = 0
        while state.E > 0:
            _, state = tank.step(cfg, state, *axis_pair(p))
            steps += 1
            assert steps <= bound
        for _ in range(3):
            gamma, state = tank.step(cfg, state, *axis_pair(p))
            assert gamma == 0.0

    def test_scale_command(self):
        np.testing.assert_array_equal(tank.scale_command(1.0, [3.0, -1.0]), [3.0, -1.0])
        np.testing.assert_array_equal(tank.scale_command(0.0, [3.0, -1.0]), [0.0, 0.0])
        np.testing.assert_array_equal(tank.scale_command(0.5, [4.0, -2.0]), [2.0, -1.0])
        with pytest.raises(InvalidInputError):
            tank.scale_command(1.5, [1.0])

    @given(st.integers(0, 2**32 - 1))
    def test_invariants_random_sequences(self, seed):
        rng = np.random.default_rng(seed)
        cfg = TankConfig(E_max=rng.uniform(0.1, 5), E_0=0.0, P_max=rng.uniform(0.1, 10),
                         dt=0.01, u_in=rng.uniform(0, 0.01))
        cfg = TankConfig(cfg.E_max, rng.uniform(0, cfg.E_max), cfg.P_max, cfg.dt, u_in=cfg.u_in)
        state = cfg.initial_state()
        for t in range(1, 200):
            lam, nu = rng.standard_normal(6) * 10, rng.standard_normal(6)
            gamma, state = tank.step(cfg, state, lam, nu)
            assert state.last_power == tank.instantaneous_power(lam, nu)[1]
            assert gamma * state.last_power <= cfg.P_max
            assert 0.0 <= state.E <= cfg.E_max
            assert state.cumulative_injected <= cfg.E_0 + t * cfg.u_in + 1e-9

    def test_trace_csv(self):
        text = tank.trace_csv([0.0, 0.01], [1.0, 2.0], [1.0, 0.5], [3.0, 2.99])
        assert text.splitlines()[0] == "t,p,gamma,E"
        assert len(text.splitlines()) == 3

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            TankConfig(E_max=1.0, E_0=2.0, P_max=1.0, dt=0.01)
        with pytest.raises(InvalidInputError):
            TankConfig(E_max=1.0, E_0=0.5, P_max=1.0, dt=0.01, u_in=-1)
