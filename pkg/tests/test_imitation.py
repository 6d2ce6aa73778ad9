import math

import numpy as np
import pytest

from fmaxlab.discrim import reward_from_logit
from fmaxlab.errors import ConfigError, EmptyDemos
from fmaxlab.fdiv import FORWARD_KL, JENSEN_SHANNON, REVERSE_KL, eval_divergence
from fmaxlab.imitation import (
    DemoSet,
    ILConfig,
    TrainReport,
    adversarial_il,
    algorithm_family,
    bc_tabular,
    behavioural_cloning,
    dagger,
    divergence_for,
    evaluate_policy,
    exact_return,
    generate_demos,
    psi_conjugate_identity_check,
    subsample,
)
from fmaxlab.softrl import GaussianPolicy, solve_soft
from fmaxlab.tabular import TabularPolicy, Trajectory, gridworld, occupancy_measure, random_mdp, sample_trajectories


@pytest.fixture(scope="module")
def grid():
    return gridworld(5)


@pytest.fixture(scope="module")
def expert(grid):
    return solve_soft(grid).policy


class TestDemoSet:
    def test_subsample_indices(self):
        tr = Trajectory(np.arange(45), np.zeros(45, dtype=int))
        ds = subsample([tr], 20, seed=0)
        off = ds.offsets[0]
        np.testing.assert_array_equal(ds.trajectories[0].states, np.arange(off, 45, 20))
        np.testing.assert_array_equal(ds.trajectories[0].timesteps, np.arange(off, 45, 20))

    def test_factor_one_keeps_everything(self):
        tr = Trajectory(np.arange(7), np.arange(7) % 4)
        ds = subsample([tr], 1, seed=3)
        np.testing.assert_array_equal(ds.trajectories[0].states, np.arange(7))

    def test_retained_count(self):
        mdp = gridworld(5, horizon=40)
        ds = generate_demos(mdp, TabularPolicy.uniform(25, 4), 4, seed=0)
        assert len(ds) == 4
        assert all(t.length == math.ceil((40 - off) / 20) for t, off in zip(ds.trajectories, ds.offsets))
        assert all(0 <= off < 20 for off in ds.offsets)

    def test_seeded_determinism(self):
        mdp = gridworld(5, horizon=40)
        a = generate_demos(mdp, TabularPolicy.uniform(25, 4), 3, seed=5)
        b = generate_demos(mdp, TabularPolicy.uniform(25, 4), 3, seed=5)
        np.testing.assert_array_equal(a.states(), b.states())
        assert a.offsets == b.offsets

    def test_file_round_trip(self, tmp_path):
        mdp = gridworld(4, horizon=30)
        ds = generate_demos(mdp, TabularPolicy.uniform(16, 4), 3, seed=1, subsample_factor=5)
        ds.save(tmp_path / "d.jsonl")
        lines = (tmp_path / "d.jsonl").read_text().splitlines()
        assert len(lines) == 3
        back = DemoSet.load(tmp_path / "d.jsonl")
        np.testing.assert_array_equal(back.actions(), ds.actions())
        assert back.offsets == ds.offsets and back.subsample_factor == 5

    def test_empty_occupancy(self):
        with pytest.raises(EmptyDemos):
            DemoSet([Trajectory([], [])]).occupancy(3, 2)


class TestConfig:
    def test_default_reward_scales(self):
        assert ILConfig(algorithm="AIRL").scale == 4.0
        assert ILConfig(algorithm="FAIRL").scale == 128.0
        assert ILConfig(algorithm="GAIL").scale == 1.0

    def test_field_level_errors(self):
        with pytest.raises(ConfigError, match="reward_scale"):
            ILConfig(reward_scale=-1.0)
        with pytest.raises(ConfigError, match="damping"):
            ILConfig(damping=0.0)
        with pytest.raises(ValueError):
            ILConfig(algorithm="WGAN")

    def test_algorithm_family(self):
        assert algorithm_family("FMAX(ForwardKL)").value == "FMAX"


class TestBehaviouralCloning:
    def test_recovers_deterministic_expert_on_visited_states(self):
        rng = np.random.default_rng(0)
        acts = rng.integers(0, 4, 9)
        states = np.repeat(np.arange(9), 3)
        pi = bc_tabular(states, acts[states], 9, 4)
        assert np.all(pi.mode() == acts)
        assert np.all(pi.probs[np.arange(9), acts] > 0.999)

    def test_unvisited_states_are_uniform(self):
        pi = bc_tabular([0, 0], [1, 1], 3, 4)
        np.testing.assert_allclose(pi.probs[1:], 0.25)

    def test_empty_demos(self):
        with pytest.raises(EmptyDemos):
            behavioural_cloning(DemoSet([]), (3, 2))

    def test_continuous_constant_action(self):
        rng = np.random.default_rng(0)
        trajs = [Trajectory(rng.normal(size=(50, 1)), np.full((50, 1), 0.5))]
        pol = GaussianPolicy(1, 1, hidden=(8,), seed=0)
        cfg = ILConfig(algorithm="BC", bc_steps=1500, bc_step_size=1e-2)
        behavioural_cloning(DemoSet(trajs, 1), pol, cfg)
        np.testing.assert_allclose(pol.mean(np.linspace(-1, 1, 5)[:, None]), 0.5, atol=0.01)


class TestDAgger:
    def test_expert_as_start_recovers_expert(self, grid, expert):
        cfg = ILConfig(algorithm="DAgger", iterations=30, dagger_rollouts=20, seed=0)
        res = dagger(expert, grid.with_horizon(40), cfg, initial_policy=expert)
        visited = np.unique(res.dataset[0])
        err = np.abs(res.policy.probs[visited] - expert.probs[visited]).max(axis=1)
        # frequently visited states are labelled many times
        counts = np.bincount(res.dataset[0], minlength=25)
        assert np.all(err[counts[visited] > 400] < 0.1)

    def test_no_rollouts_is_bc(self, grid, expert):
        mdp = grid.with_horizon(40)
        demos = generate_demos(mdp, expert, 4, seed=0)
        cfg = ILConfig(algorithm="DAgger", iterations=1, dagger_rollouts=0)
        res = dagger(expert, mdp, cfg, demos)
        np.testing.assert_allclose(res.policy.probs, behavioural_cloning(demos, mdp).policy.probs)

    def test_aggregate_matches_average_occupancy(self, grid, expert):
        mdp = grid.with_horizon(20)
        cfg = ILConfig(algorithm="DAgger", iterations=5, dagger_rollouts=400, seed=1)
        res = dagger(expert, mdp, cfg, initial_policy=TabularPolicy.uniform(25, 4))
        counts = np.bincount(res.dataset[0], minlength=25) / len(res.dataset[0])
        avg = np.mean([occupancy_measure(mdp, p).state_marginal for p in res.report.policies], axis=0)
        np.testing.assert_allclose(counts, avg, atol=0.01)


class TestEvaluation:
    def test_deterministic_policy_in_deterministic_env(self):
        mdp = gridworld(3, horizon=10)
        pi = TabularPolicy.deterministic([3, 3, 1, 3, 3, 1, 3, 3, 1], 4)
        mean, std = evaluate_policy(mdp, pi, 10, "Stoch", seed=0)
        assert std == 0.0 and mean == 6.0

    def test_constant_reward_gives_horizon(self):
        mdp = gridworld(3, horizon=12).with_reward(np.ones((9, 4)))
        mean, _ = evaluate_policy(mdp, TabularPolicy.uniform(9, 4), 5, "Stoch")
        assert mean == 12.0

    def test_stochastic_mean_matches_exact(self):
        mdp = random_mdp(4, 3, seed=2, horizon=15)
        pi = TabularPolicy.random(4, 3, np.random.default_rng(0))
        trajs = sample_trajectories(mdp, pi, 4000, seed=1)
        rets = np.array([t.total_reward() for t in trajs])
        se = rets.std() / np.sqrt(len(rets))
        mean, _ = evaluate_policy(mdp, pi, 4000, "Stoch", seed=1)
        assert abs(mean - exact_return(mdp, pi)) < 3 * se

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            evaluate_policy(gridworld(3, horizon=5), TabularPolicy.uniform(9, 4), 3, "Greedy")


class TestExactAdversarial:
    def expert_occ(self, grid, expert):
        return occupancy_measure(grid, expert).joint

    def test_airl_reaches_expert(self, grid, expert):
        res = adversarial_il(grid, self.expert_occ(grid, expert), cfg=ILConfig(algorithm="AIRL", iterations=120, seed=0))
        d = res.report.divergences
        assert d[-1] < 0.01
        assert np.all(np.diff(d[20:]) <= 1e-9)

    def test_reported_divergence_matches_recomputation(self, grid, expert):
        rho_e = self.expert_occ(grid, expert)
        res = adversarial_il(grid, rho_e, cfg=ILConfig(algorithm="AIRL", iterations=10, seed=1))
        for k, occ in enumerate(res.report.occupancies):
            assert res.report.divergences[k] == pytest.approx(eval_divergence(REVERSE_KL, rho_e, occ), abs=1e-12)

    def test_fixed_point_when_demos_come_from_student(self, grid):
        student = TabularPolicy.random(25, 4, np.random.default_rng(3))
        occ = occupancy_measure(grid, student).joint
        res = adversarial_il(grid, occ, cfg=ILConfig(algorithm="AIRL", iterations=3), initial_policy=student)
        assert np.abs(res.policy.probs - student.probs).max() < 1e-8
        assert res.report.divergences.max() < 1e-12

    @pytest.mark.parametrize("kind", ["GAIL", "FMAX(ForwardKL)", "FMAX(ReverseKL)", "FMAX(JensenShannon)"])
    def test_other_objectives_decrease(self, grid, expert, kind):
        res = adversarial_il(grid, self.expert_occ(grid, expert), kind, ILConfig(iterations=60, seed=2))
        d = res.report.divergences
        assert d[-1] < 0.2 * d[0]

    def test_report_csv_round_trip(self, grid, expert, tmp_path):
        res = adversarial_il(grid, self.expert_occ(grid, expert), cfg=ILConfig(algorithm="AIRL", iterations=3))
        res.report.to_csv(tmp_path / "r.csv", timing=False)
        header = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert header == "iter,divergence,return_det,return_stoch,disc_loss"
        res.report.to_csv(tmp_path / "t.csv")
        back = TrainReport.from_csv(tmp_path / "t.csv")
        np.testing.assert_array_equal(back.divergences, res.report.divergences)

    def test_sampled_mode_runs(self):
        mdp = gridworld(3, horizon=12)
        exp = solve_soft(mdp).policy
        demos = generate_demos(mdp, exp, 8, seed=0, subsample_factor=2)
        cfg = ILConfig(algorithm="AIRL", mode="sampled", iterations=5, disc_steps=5, policy_rollouts=4)
        res = adversarial_il(mdp, demos, cfg=cfg)
        assert len(res.report) == 6
        assert np.all(np.isfinite(res.report.column("disc_loss")))


class TestDivergenceFor:
    def test_orientation(self):
        pe, pp = np.array([0.7, 0.3]), np.array([0.4, 0.6])
        kl = lambda a, b: float(np.sum(a * np.log(a / b)))
        assert divergence_for("AIRL", pe, pp) == pytest.approx(kl(pp, pe))
        assert divergence_for("FAIRL", pe, pp) == pytest.approx(kl(pe, pp))
        assert divergence_for("GAIL", pe, pp) == pytest.approx(eval_divergence(JENSEN_SHANNON, pe, pp))


class TestGailVersusJensenShannonReward:
    def test_rewards_are_monotone_transforms(self):
        # both increase with the logit, so they rank state-action pairs identically
        ell = np.random.default_rng(0).normal(0, 3, 200)
        g = reward_from_logit(ell, "GAIL")
        j = reward_from_logit(ell, "FMAX(JS)")
        assert np.array_equal(np.argsort(g), np.argsort(j))

    def test_exact_relation(self):
        ell = np.linspace(-5, 5, 11)
        g = reward_from_logit(ell, "GAIL")
        j = reward_from_logit(ell, "FMAX(JS)")
        np.testing.assert_allclose(j, 0.5 * (ell - g - np.log(2.0)), atol=1e-12)


class TestPsiConjugate:
    @pytest.mark.parametrize("f", [REVERSE_KL, FORWARD_KL], ids=str)
    def test_equal_occupancies(self, f):
        p = np.array([0.3, 0.7])
        best, exact = psi_conjugate_identity_check(f, p, p)
        assert abs(best) < 1e-9 and abs(exact) < 1e-12

    @pytest.mark.parametrize("f", [REVERSE_KL, FORWARD_KL], ids=str)
    def test_neutral_start_two_points(self, f):
        rng = np.random.default_rng(4)
        for _ in range(5):
            pe, pp = rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(2))
            best, exact = psi_conjugate_identity_check(f, pe, pp, start=np.full(2, float(f.optimal_t(1.0))))
            assert abs(best - exact) < 1e-3
