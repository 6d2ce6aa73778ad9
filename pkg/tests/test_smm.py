import numpy as np
import pytest

from fmaxlab.discrim import LearnedDiscriminator, RewardKind, RewardSpec
from fmaxlab.errors import ConfigError, ShapeMismatch
from fmaxlab.fdiv import REVERSE_KL
from fmaxlab.smm import (
    PointMassEnv,
    SMMConfig,
    TargetKind,
    TargetSampler,
    evaluate_marginal,
    histogram_js,
    load_points,
    load_visited,
    sample_target,
    save_points,
    save_visited,
    smm_train,
    state_rewards,
)
from fmaxlab.softrl import GaussianPolicy


class TestTargets:
    def test_defaults(self):
        inf, sp = TargetSampler.infinity(), TargetSampler.spiral()
        assert (inf.r, inf.noise_scale, inf.num_points, inf.horizon) == (12.0, 0.3, 4000, 120)
        assert (sp.num_rotations, sp.radius, sp.noise_scale, sp.num_points, sp.horizon) == (2.0, 16.0, 0.3, 16000, 480)

    def test_infinity_start_point(self):
        pts = sample_target(TargetSampler.infinity(noise_scale=0.0), seed=0)
        np.testing.assert_allclose(pts[0], [12.0 * np.sqrt(2), 0.0], atol=1e-12)

    def test_infinity_parametric_equations(self):
        n = 4000
        pts = sample_target(TargetSampler.infinity(noise_scale=0.0, num_points=n), seed=0)
        for k in (0, 7, 1234, n - 1):
            a = 2 * np.pi * k / (n - 1)
            x = 12.0 * np.sqrt(2) * np.cos(a) / (np.sin(a) ** 2 + 1)
            assert pts[k, 0] == pytest.approx(x, abs=1e-12)
            assert pts[k, 1] == pytest.approx(x * np.sin(a), abs=1e-12)

    def test_infinity_point_symmetry(self):
        pts = sample_target(TargetSampler.infinity(noise_scale=0.0, num_points=4001), seed=0)
        # a -> pi - a maps (x, y) to (-x, -y); on this grid that is index k -> 2000 - k (mod 4000)
        k = np.arange(4000)
        np.testing.assert_allclose(pts[(2000 - k) % 4000], -pts[k], atol=1e-9)

    def test_spiral_end_radius(self):
        pts = sample_target(TargetSampler.spiral(noise_scale=0.0), seed=0)
        assert np.hypot(*pts[-1]) == pytest.approx(16.0, abs=1e-12)
        assert np.hypot(*pts[0]) == 0.0

    def test_noise_is_seeded(self):
        s = TargetSampler.infinity()
        np.testing.assert_array_equal(sample_target(s, 3), sample_target(s, 3))
        assert not np.array_equal(sample_target(s, 3), sample_target(s, 4))
        resid = sample_target(s, 3) - s.curve()
        assert resid.std() == pytest.approx(0.3, rel=0.05)

    def test_kind_from_string(self):
        assert TargetSampler("Spiral").kind is TargetKind.SPIRAL


class TestPointMass:
    def test_displacements_are_clipped(self):
        env = PointMassEnv()
        a = np.random.default_rng(0).normal(0, 5, (1000, 2))
        step = env.step(np.zeros((1000, 2)), a)
        assert np.linalg.norm(step, axis=1).max() <= 1 + 1e-12
        small = np.array([[0.3, 0.4]])
        np.testing.assert_array_equal(env.step(np.zeros((1, 2)), small), small)

    def test_rollout_shapes_and_start(self):
        env = PointMassEnv(horizon=15)
        pol = GaussianPolicy(2, 2, hidden=(4,), seed=0, init_log_std=1.0)
        states, actions = env.rollout(pol, 200, np.random.default_rng(0))
        assert states.shape == (15, 200, 2) and actions.shape == (15, 200, 2)
        assert states[0].std() == pytest.approx(0.1, rel=0.15)
        steps = np.linalg.norm(np.diff(states, axis=0), axis=2)
        assert steps.max() <= 1 + 1e-12

    def test_episode_returns(self):
        env = PointMassEnv(horizon=10, reward_fn=lambda s: np.ones(len(s)))
        pol = GaussianPolicy(2, 2, hidden=(4,), seed=0)
        np.testing.assert_array_equal(env.episode_returns(pol, 3, seed=0), 10.0)
        with pytest.raises(ValueError):
            PointMassEnv().episode_returns(pol, 3, seed=0)


class TestHistogramJS:
    def test_identical_sets(self):
        pts = np.random.default_rng(0).normal(size=(3000, 2))
        assert histogram_js(pts, pts) < 1e-3

    def test_disjoint_sets(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0, 0.1, (2000, 2))
        b = rng.normal(50, 0.1, (2000, 2))
        assert histogram_js(a, b) == pytest.approx(np.log(2), abs=1e-3)

    def test_same_gaussian_baseline(self):
        a = np.random.default_rng(1).normal(size=(10000, 2))
        b = np.random.default_rng(2).normal(size=(10000, 2))
        assert histogram_js(a, b) < 0.02

    def test_empty(self):
        with pytest.raises(ValueError):
            histogram_js(np.zeros((0, 2)), np.zeros((3, 2)))


class TestStateOnlyReward:
    def test_rewards_depend_on_states_only(self):
        disc = LearnedDiscriminator(2, hidden=(8,), seed=0)
        states = np.random.default_rng(0).normal(size=(5, 4, 2))
        spec = RewardSpec(RewardKind.FMAX, REVERSE_KL)
        r = state_rewards(disc, states, spec)
        assert r.shape == (5, 4)
        np.testing.assert_allclose(r, disc.logit(states.reshape(-1, 2)).reshape(5, 4) - 1.0, atol=1e-12)
        with pytest.raises(ShapeMismatch):
            # state-action inputs are rejected by the state-only critic
            state_rewards(disc, np.zeros((5, 4, 4)), spec)


class TestTraining:
    def test_goal_blob(self):
        target = np.random.default_rng(0).normal([5.0, 5.0], 0.3, (2000, 2))
        env = PointMassEnv(120)
        res = smm_train(env, target, cfg=SMMConfig(iterations=100, seed=0, eval_every=50))
        states, _ = env.rollout(res.policy, 50, np.random.default_rng(1))
        assert np.linalg.norm(states[-1].mean(axis=0) - [5.0, 5.0]) < 1.0
        assert res.final_js < 0.5 * res.initial_js

    def test_own_visitation_is_a_fixed_point(self):
        env = PointMassEnv(30)
        cfg = SMMConfig(iterations=5, seed=0, eval_every=5, lr_decay=False, step_size=1e-4)
        pol = GaussianPolicy(2, 2, cfg.hidden, seed=0)
        target = env.visited(pol, 400, seed=1)
        before = pol.params.copy()
        res = smm_train(env, target, cfg=cfg, initial_policy=pol)
        # no systematic separation between target and fresh rollouts
        assert abs(res.discriminator.logit(target).mean()) < 0.05
        assert abs(res.discriminator.logit(env.visited(pol, 400, seed=2)).mean()) < 0.05
        assert np.abs(pol.params - before).max() < 5 * 5e-4

    def test_report_columns_and_csv(self, tmp_path):
        env = PointMassEnv(20)
        target = sample_target(TargetSampler.infinity(num_points=500), 0)
        res = smm_train(env, target, cfg=SMMConfig(iterations=3, seed=0, eval_every=2, eval_episodes=5))
        assert len(res.report) == 3
        assert np.isnan(res.report.column("js")[1])
        res.report.to_csv(tmp_path / "r.csv", timing=False)
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "iter,divergence,js,disc_loss,mean_reward,log_std"

    def test_deterministic_per_seed(self):
        env = PointMassEnv(20)
        target = sample_target(TargetSampler.infinity(num_points=500), 0)
        cfg = SMMConfig(iterations=4, seed=3, eval_episodes=5)
        a = smm_train(env, target, cfg=cfg)
        b = smm_train(env, target, cfg=cfg)
        np.testing.assert_array_equal(a.policy.params, b.policy.params)
        assert a.final_js == b.final_js

    def test_value_baseline_option(self):
        env = PointMassEnv(20)
        target = sample_target(TargetSampler.infinity(num_points=500), 0)
        cfg = SMMConfig(iterations=3, seed=1, eval_episodes=5, value_baseline=True, value_batch=64)
        a = smm_train(env, target, cfg=cfg)
        b = smm_train(env, target, cfg=cfg)
        np.testing.assert_array_equal(a.policy.params, b.policy.params)
        plain = smm_train(env, target, cfg=SMMConfig(iterations=3, seed=1, eval_episodes=5))
        assert not np.array_equal(a.policy.params, plain.policy.params)
        with pytest.raises(ConfigError):
            SMMConfig(value_steps=0)

    def test_rejects_bad_target(self):
        with pytest.raises(ShapeMismatch):
            smm_train(PointMassEnv(5), np.zeros((10, 3)), cfg=SMMConfig(iterations=1))


class TestEvaluateMarginal:
    def test_seeded(self):
        env = PointMassEnv(20)
        pol = GaussianPolicy(2, 2, hidden=(4,), seed=0)
        target = sample_target(TargetSampler.infinity(), 0)
        assert evaluate_marginal(pol, env, target, seed=4) == evaluate_marginal(pol, env, target, seed=4)


class TestFiles:
    def test_points_round_trip(self, tmp_path):
        pts = np.random.default_rng(0).normal(size=(7, 2))
        save_points(pts, tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().startswith("x,y\n")
        np.testing.assert_array_equal(load_points(tmp_path / "t.csv"), pts)

    def test_visited_round_trip(self, tmp_path):
        states = np.random.default_rng(0).normal(size=(4, 3, 2))
        save_visited(states, tmp_path / "v.csv")
        assert (tmp_path / "v.csv").read_text().startswith("episode,t,x,y\n")
        np.testing.assert_array_equal(load_visited(tmp_path / "v.csv"), states)
