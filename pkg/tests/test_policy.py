import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from pptrl.errors import CheckpointMismatchError, InvalidInputError
from pptrl.policy import checkpoint
from pptrl.policy.network import MLP, NetworkParams, forward
from pptrl.policy.ppo import (ActionSpec, OptimizerState, PPOConfig, RolloutBuffer, act, gae,
                              loss_and_grad, ppo_update)


def small_params(rng, obs_dim=3, act_dim=2, hidden=(4,)):
    p = NetworkParams.create(obs_dim, act_dim, rng, hidden=hidden, init_log_std=-0.3)
    # perturb everything so biases and output layers are not trivially zero
    p.set_flat(p.flat() + 0.3 * rng.standard_normal(p.flat().size))
    p.obs_mean = rng.standard_normal(obs_dim) * 0.1
    p.obs_var = rng.uniform(0.5, 2.0, obs_dim)
    return p


def random_batch(rng, params, B=16):
    obs = rng.standard_normal((B, params.obs_dim))
    mean, log_std, _ = forward(params, obs)
    actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    # old log-probs off the current policy so ratios spread across the clip range
    from pptrl.policy.network import gaussian_log_prob
    old = gaussian_log_prob(actions, mean, log_std) + rng.normal(0, 0.3, B)
    return {"obs": obs, "actions": actions, "log_probs": old, "advantages": rng.standard_normal(B),
            "returns": rng.standard_normal(B), "means": mean}


class TestForward:
    def test_zero_params(self):
        p = NetworkParams(MLP((3, 8, 2)), MLP((3, 8, 1)), np.zeros(2))
        mean, log_std, value = forward(p, np.ones((5, 3)))
        np.testing.assert_array_equal(mean, 0.0)
        np.testing.assert_array_equal(value, 0.0)

    def test_hand_computed(self):
        net = MLP((2, 1, 1))
        W1, b1, W2, b2 = net.views()
        W1[...] = [[1.0], [-2.0]]
        b1[...] = [0.5]
        W2[...] = [[3.0]]
        b2[...] = [-1.0]
        out, _ = net.forward(np.array([[1.0, 0.5], [0.0, 1.0]]))
        # relu(1 - 1 + 0.5) * 3 - 1 = 0.5 ; relu(-2 + 0.5) * 3 - 1 = -1
        np.testing.assert_array_equal(out[:, 0], [0.5, -1.0])

    def test_deterministic(self):
        p = small_params(np.random.default_rng(0))
        o = np.random.default_rng(1).standard_normal((4, 3))
        a, b = forward(p, o), forward(p, o)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_width_mismatch(self):
        p = small_params(np.random.default_rng(0))
        with pytest.raises(InvalidInputError):
            forward(p, np.zeros((2, 5)))


def fd_grad(params, batch, config, h=1e-5):
    base = params.flat()
    g = np.zeros_like(base)
    probe = params.copy()
    for i in range(base.size):
        for sign in (1, -1):
            x = base.copy()
            x[i] += sign * h
            probe.actor.flat, probe.critic.flat = x[:params.actor.n_params], x[params.actor.n_params:-params.act_dim]
            probe.log_std = x[-params.act_dim:]  # no clamp: stay on the raw loss surface
            g[i] += sign * loss_and_grad(probe, batch, config)[0]
    return g / (2 * h)


def relative_error(a, b, floor=1e-7):
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


class TestBackward:
    def test_matches_finite_differences(self):
        config = PPOConfig()
        worst = 0.0
        for trial in range(50):
            rng = np.random.default_rng(trial)
            obs_dim, act_dim = int(rng.integers(1, 4)), int(rng.integers(1, 3))
            hidden = tuple(int(h) for h in rng.integers(2, 6, size=int(rng.integers(1, 3))))
            p = small_params(rng, obs_dim, act_dim, hidden)
            assert p.flat().size <= 200
            batch = random_batch(rng, p)
            _, grad, _ = loss_and_grad(p, batch, config)
            worst = max(worst, relative_error(grad, fd_grad(p, batch, config)).max())
        assert worst < 1e-4

    def test_constant_loss_zero_grad(self):
        net = MLP.initialized((3, 5, 2), np.random.default_rng(0))
        _, acts = net.forward(np.ones((4, 3)))
        np.testing.assert_array_equal(net.backward(acts, np.zeros((4, 2))), 0.0)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        net = MLP.initialized((3, 5, 2), rng)
        _, acts = net.forward(rng.standard_normal((4, 3)))
        g = rng.standard_normal((4, 2))
        np.testing.assert_allclose(net.backward(acts, 2 * g), 2 * net.backward(acts, g), rtol=1e-14)


class TestGAE:
    def test_lambda_zero_is_td_error(self):
        rng = np.random.default_rng(0)
        r, v = rng.standard_normal(7), rng.standard_normal(7)
        dones = np.zeros(7, bool)
        dones[3] = True
        adv, ret = gae(r, v, dones, 0.4, gamma=0.9, lam=0.0)
        nxt = np.append(v[1:], 0.4) * (1 - dones)
        np.testing.assert_allclose(adv, r + 0.9 * nxt - v, atol=1e-12, rtol=0)
        np.testing.assert_allclose(ret, adv + v, atol=1e-12)

    def test_monte_carlo_limit(self):
        r, v = np.array([1.0, -2.0, 0.5, 3.0]), np.array([0.1, 0.2, -0.3, 0.4])
        dones = np.array([0, 0, 0, 1], bool)
        adv, _ = gae(r, v, dones, 99.0, gamma=1.0, lam=1.0)
        np.testing.assert_allclose(adv, np.cumsum(r[::-1])[::-1] - v, atol=1e-12, rtol=0)

    def test_hand_case(self):
        adv, ret = gae([1.0, 0.0, 1.0], [0.5, 0.5, 0.5], [False, False, True], 0.0, gamma=0.9, lam=0.8)
        d2 = 1.0 - 0.5
        d1 = 0.0 + 0.9 * 0.5 - 0.5
        d0 = 1.0 + 0.9 * 0.5 - 0.5
        a2 = d2
        a1 = d1 + 0.72 * a2
        a0 = d0 + 0.72 * a1
        np.testing.assert_allclose(adv, [a0, a1, a2], atol=1e-15)
        assert a0 == pytest.approx(1.1732)

    def test_parallel_columns_independent(self):
        rng = np.random.default_rng(2)
        r, v = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        d = rng.random((5, 3)) < 0.3
        last = rng.standard_normal(3)
        adv, _ = gae(r, v, d, last, 0.99, 0.95)
        for j in range(3):
            np.testing.assert_allclose(adv[:, j], gae(r[:, j], v[:, j], d[:, j], last[j], 0.99, 0.95)[0])

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            gae([], [], [], 0.0, 0.9, 0.9)

    def test_buffer_requires_complete(self):
        buf = RolloutBuffer(2, 1, 1, 1)
        buf.add(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), np.ones(1), np.zeros(1), np.zeros(1, bool))
        with pytest.raises(InvalidInputError):
            buf.compute_gae(0.99, 0.95)


class TestSurrogate:
    def _batch(self, ratio, adv):
        p = NetworkParams(MLP((1, 2, 1)), MLP((1, 2, 1)), np.zeros(1))
        obs, actions = np.zeros((len(adv), 1)), np.full((len(adv), 1), 0.3)
        from pptrl.policy.network import gaussian_log_prob
        logp = gaussian_log_prob(actions, np.zeros_like(actions), p.log_std)
        batch = {"obs": obs, "actions": actions, "log_probs": logp - np.log(ratio),
                 "advantages": np.asarray(adv, float), "returns": np.zeros(len(adv))}
        return p, batch

    def test_unit_ratio(self):
        adv = np.array([1.0, -2.0, 0.5])
        p, batch = self._batch(np.ones(3), adv)
        _, _, st = loss_and_grad(p, batch, PPOConfig())
        assert st["policy_loss"] == pytest.approx(-adv.mean(), abs=1e-14)
        assert st["clip_fraction"] == 0.0

    def test_clip_factor(self):
        p, batch = self._batch(np.array([1.5]), [2.0])
        _, _, st = loss_and_grad(p, batch, PPOConfig(clip=0.2))
        assert st["policy_loss"] == pytest.approx(-1.2 * 2.0, abs=1e-12)

    def test_negative_advantage_not_clipped_below(self):
        p, batch = self._batch(np.array([1.5]), [-2.0])
        _, _, st = loss_and_grad(p, batch, PPOConfig(clip=0.2))
        assert st["policy_loss"] == pytest.approx(1.5 * 2.0, abs=1e-12)

    def test_clip_bound(self):
        rng = np.random.default_rng(3)
        p = small_params(rng)
        _, _, st = loss_and_grad(p, random_batch(rng, p, 64), PPOConfig())
        assert st["clip_bound_ok"]


class TestAct:
    def test_deterministic_is_mean(self):
        p = small_params(np.random.default_rng(0))
        o = np.ones(3)
        a, _, mean, _ = act(p, o, deterministic=True)
        np.testing.assert_array_equal(a, mean)

    def test_log_prob_density(self):
        rng = np.random.default_rng(4)
        p = small_params(rng)
        o = rng.standard_normal((6, 3))
        a, logp, mean, _ = act(p, o, rng)
        cov = np.diag(np.exp(2 * p.log_std))
        ref = [multivariate_normal(mean[i], cov).logpdf(a[i]) for i in range(6)]
        np.testing.assert_allclose(logp, ref, rtol=1e-12)

    def test_spec_mismatch(self):
        p = small_params(np.random.default_rng(0))
        with pytest.raises(InvalidInputError):
            act(p, np.ones(3), deterministic=True, spec=ActionSpec("cartesian_velocity", 3))

    def test_stochastic_needs_generator(self):
        with pytest.raises(InvalidInputError):
            act(small_params(np.random.default_rng(0)), np.ones(3))


def bandit_round(params, opt, rng, config, n=64):
    """One-step episodes with reward -|a|^2 and a constant observation."""
    obs = np.ones((n, 2))
    a, logp, mean, value = act(params, obs, rng)
    buf = RolloutBuffer(1, n, 2, params.act_dim)
    buf.log_std = params.log_std.copy()
    reward = -np.sum(a ** 2, axis=1)
    buf.add(obs, a, logp, reward, value, np.ones(n, bool), means=mean)
    buf.compute_gae(config.gamma, config.lam, np.zeros(n))
    params, opt, stats = ppo_update(params, buf, config, opt, rng)
    return params, opt, stats, reward.mean()


def bandit_params(seed):
    rng = np.random.default_rng(seed)
    p = NetworkParams.create(2, 2, rng, hidden=(16, 16), init_log_std=-1.0)
    p.actor.views()[-1][...] = [1.0, -0.8]  # start the mean away from the optimum
    return p, rng


class TestBandit:
    config = PPOConfig(lr=3e-3, minibatch_size=32)

    def test_one_update_moves_mean_toward_zero(self):
        for seed in range(10):
            p, rng = bandit_params(seed)
            opt = OptimizerState.create(p, self.config.lr)
            before = np.linalg.norm(forward(p, np.ones(2))[0])
            p, _, stats, _ = bandit_round(p, opt, rng, self.config)
            assert "error" not in stats
            assert np.linalg.norm(forward(p, np.ones(2))[0]) < before

    def test_improves_over_fifty_updates(self):
        wins = 0
        for seed in range(10):
            p, rng = bandit_params(seed)
            opt = OptimizerState.create(p, self.config.lr)
            first = None
            for _ in range(50):
                p, opt, _, r = bandit_round(p, opt, rng, self.config)
                first = r if first is None else first
            eval_rng = np.random.default_rng(1000 + seed)
            final = np.mean([-np.sum(act(p, np.ones(2), eval_rng)[0] ** 2) for _ in range(200)])
            wins += final > first
        assert wins >= 9

    def test_deterministic_training(self):
        runs = []
        for _ in range(2):
            p, rng = bandit_params(5)
            opt = OptimizerState.create(p, self.config.lr)
            for _ in range(3):
                p, opt, _, _ = bandit_round(p, opt, rng, self.config)
            runs.append(p.flat())
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_log_std_stays_clamped(self):
        p, rng = bandit_params(0)
        opt = OptimizerState.create(p, 1e-2)
        for _ in range(30):
            p, opt, _, _ = bandit_round(p, opt, rng, PPOConfig(lr=1e-2, lr_min=1e-2, lr_max=1e-2))
        assert np.all(p.log_std >= -5.0) and np.all(p.log_std <= 2.0)

    def test_non_finite_aborts(self):
        p, rng = bandit_params(0)
        opt = OptimizerState.create(p, 1e-3)
        buf = RolloutBuffer(1, 4, 2, 2)
        buf.add(np.ones((4, 2)), np.zeros((4, 2)), np.zeros(4), np.array([np.nan, 0, 0, 0]),
                np.zeros(4), np.ones(4, bool))
        buf.compute_gae(0.99, 0.95)
        new, new_opt, stats = ppo_update(p, buf, PPOConfig(), opt, rng)
        assert stats["error"] == "non-finite loss"
        assert new_opt.lr == pytest.approx(5e-4)
        np.testing.assert_array_equal(new.flat(), p.flat())


def test_normalizer_matches_batch_statistics():
    rng = np.random.default_rng(0)
    p = NetworkParams.create(3, 1, rng, hidden=(4,))
    data = rng.standard_normal((100, 3)) * [1, 2, 3] + [0, 5, -1]
    for chunk in np.array_split(data, 7):
        p.update_normalizer(chunk)
    np.testing.assert_allclose(p.obs_mean, data.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(p.obs_var, data.var(axis=0), rtol=1e-12)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        p = small_params(np.random.default_rng(0))
        p.obs_count = 12.0
        path = tmp_path / "ckpt.bin"
        checkpoint.save(path, p, {"task": "maze"})
        q, cfg = checkpoint.load(path, expected_config={"task": "maze"})
        np.testing.assert_array_equal(q.flat(), p.flat())
        np.testing.assert_array_equal(q.obs_var, p.obs_var)
        assert q.obs_count == 12.0 and cfg == {"task": "maze"}

    def test_byte_layout(self, tmp_path):
        p = small_params(np.random.default_rng(0))
        path = tmp_path / "ckpt.bin"
        checkpoint.save(path, p)
        raw = path.read_bytes()
        payload = raw[raw.index(b"\n") + 1:]
        assert np.frombuffer(payload[:8], "<f8")[0] == p.actor.flat[0]

    def test_config_mismatch(self, tmp_path):
        path = tmp_path / "ckpt.bin"
        checkpoint.save(path, small_params(np.random.default_rng(0)), {"task": "maze"})
        with pytest.raises(CheckpointMismatchError):
            checkpoint.load(path, expected_config={"task": "pushing"})

    def test_truncated(self, tmp_path):
        path = tmp_path / "ckpt.bin"
        checkpoint.save(path, small_params(np.random.default_rng(0)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointMismatchError):
            checkpoint.load(path)
