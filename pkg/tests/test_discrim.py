import numpy as np
import pytest

from fmaxlab.discrim import (
    ExactTabularDiscriminator,
    LearnedDiscriminator,
    RewardKind,
    log_sigmoid,
    one_hot_features,
    parse_reward,
    reward_from_logit,
)
from fmaxlab.errors import ShapeMismatch
from fmaxlab.fdiv import FORWARD_KL, JENSEN_SHANNON, REVERSE_KL
from fmaxlab.nn import InputNormalizer


class TestRewardShapes:
    def test_values_at_zero(self):
        assert reward_from_logit(0.0, "AIRL") == 0.0
        assert reward_from_logit(0.0, "GAIL") == pytest.approx(np.log(0.5))
        assert reward_from_logit(0.0, "FAIRL") == 0.0

    def test_fairl_peak(self):
        ell = np.linspace(-5, 5, 100001)
        r = reward_from_logit(ell, "FAIRL")
        k = np.argmax(r)
        assert ell[k] == pytest.approx(-1.0, abs=1e-4)
        assert r[k] == pytest.approx(np.exp(-1), abs=1e-9)

    def test_fmax_closed_forms(self):
        ell = np.linspace(-6, 6, 25)
        np.testing.assert_allclose(reward_from_logit(ell, "FMAX(ReverseKL)"), ell - 1.0, atol=1e-12)
        np.testing.assert_allclose(reward_from_logit(ell, "FMAX(ForwardKL)"), np.exp(ell), rtol=1e-12)
        js = reward_from_logit(ell, "FMAX(JensenShannon)")
        np.testing.assert_allclose(js, 0.5 * np.log((1 + np.exp(ell)) / 2), atol=1e-12)

    def test_gail_and_js_rewards_are_increasing(self):
        ell = np.linspace(-8, 8, 200)
        assert np.all(np.diff(reward_from_logit(ell, "GAIL")) > 0)
        assert np.all(np.diff(reward_from_logit(ell, "FMAX(JS)")) > 0)

    def test_log_sigmoid_is_stable(self):
        assert np.isfinite(log_sigmoid(-800.0))
        assert log_sigmoid(800.0) == 0.0

    def test_parse(self):
        assert parse_reward("airl").kind is RewardKind.AIRL
        spec = parse_reward("FMAX(fkl)")
        assert spec.divergence is FORWARD_KL and str(spec) == "FMAX(ForwardKL)"
        with pytest.raises(ValueError):
            parse_reward("FMAX")
        with pytest.raises(ValueError):
            parse_reward("WGAN")


class TestExactDiscriminator:
    def test_logit_is_log_ratio(self):
        rng = np.random.default_rng(0)
        pe, pp = rng.dirichlet(np.ones(6)).reshape(3, 2), rng.dirichlet(np.ones(6)).reshape(3, 2)
        d = ExactTabularDiscriminator(pe, pp, logit_clip=None)
        np.testing.assert_allclose(d.logit_table(), np.log(pe / pp), atol=1e-14)
        np.testing.assert_allclose(d.probability_table(), pe / (pe + pp), atol=1e-14)
        assert d.logit(np.array([1, 1])) == pytest.approx(np.log(pe[1, 1] / pp[1, 1]))

    def test_clipping_and_zero_mass(self):
        pe = np.array([[0.5, 0.5], [0.0, 0.0]])
        pp = np.array([[0.25, 0.0], [0.25, 0.5]])
        d = ExactTabularDiscriminator(pe, pp, logit_clip=(-10, 10))
        assert d.logit_table()[0, 1] == 10.0
        assert d.logit_table()[1, 0] == -10.0

    def test_airl_expectation_is_negative_reverse_kl(self):
        rng = np.random.default_rng(1)
        pe, pp = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
        d = ExactTabularDiscriminator(pe[None], pp[None], logit_clip=None)
        value = np.sum(pp * d.reward_table("AIRL")[0])
        assert value == pytest.approx(-np.sum(pp * np.log(pp / pe)), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ExactTabularDiscriminator(np.ones((2, 2)) / 4, np.ones((2, 3)) / 6)


class TestOneHot:
    def test_layout(self):
        x = one_hot_features([0, 2], [1, 0], 3, 2)
        np.testing.assert_array_equal(x, [[1, 0, 0, 0, 1], [0, 0, 1, 1, 0]])
        assert one_hot_features([1], None, 3).tolist() == [[0, 1, 0]]


class TestLearnedDiscriminator:
    def test_recovers_gaussian_log_ratio(self):
        # expert N(1, 1) vs policy N(-1, 1): log ratio is 2x
        rng = np.random.default_rng(0)
        d = LearnedDiscriminator(1, hidden=(16,), seed=0, step_size=1e-2, logit_clip=None)
        for _ in range(1500):
            d.train_step(rng.normal(1, 1, (128, 1)), rng.normal(-1, 1, (128, 1)))
        xs = np.linspace(-1, 1, 5)[:, None]
        np.testing.assert_allclose(d.logit(xs), 2 * xs[:, 0], atol=0.25)

    def test_loss_gradient_matches_finite_differences(self):
        from fmaxlab.nn import MLP, central_difference

        rng = np.random.default_rng(1)
        d = LearnedDiscriminator(2, hidden=(5,), seed=1)
        xe, xp = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        _, g = d.loss_and_grad(xe, xp)

        def loss(theta):
            d.net = MLP(d.net.layer_sizes, "tanh", 1, theta)
            return d.loss_and_grad(xe, xp)[0]

        theta0 = d.net.params.copy()
        fd = central_difference(loss, theta0)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6

    def test_save_load(self, tmp_path):
        d = LearnedDiscriminator(2, hidden=(4,), seed=3, normalizer=InputNormalizer(np.ones(2), 2 * np.ones(2)))
        d.save(tmp_path / "d.ckpt")
        back = LearnedDiscriminator.load(tmp_path / "d.ckpt")
        x = np.random.default_rng(0).normal(size=(3, 2))
        np.testing.assert_array_equal(back.logit(x), d.logit(x))

    def test_input_dim_check(self):
        d = LearnedDiscriminator(2)
        with pytest.raises(ShapeMismatch):
            d.logit(np.zeros((3, 3)))

    def test_accuracy_on_separable_data(self):
        rng = np.random.default_rng(2)
        d = LearnedDiscriminator(1, hidden=(8,), seed=0, step_size=1e-2)
        for _ in range(300):
            d.train_step(rng.uniform(1, 2, (64, 1)), rng.uniform(-2, -1, (64, 1)))
        assert d.accuracy(rng.uniform(1, 2, (50, 1)), rng.uniform(-2, -1, (50, 1))) == 1.0


@pytest.mark.parametrize("f", [REVERSE_KL, FORWARD_KL, JENSEN_SHANNON], ids=str)
def test_fmax_reward_is_conjugate_of_optimal_critic(f):
    u = np.exp(np.linspace(-4, 4, 17))
    np.testing.assert_allclose(reward_from_logit(np.log(u), f"FMAX({f})"), f.conjugate(f.optimal_t(u)), atol=1e-12)
