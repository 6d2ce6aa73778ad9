import numpy as np
import pytest

from fmaxlab.errors import DivergedParameters, ShapeMismatch
from fmaxlab.nn import (
    MLP,
    Adam,
    InputNormalizer,
    central_difference,
    gradient_penalty,
    interpolate_batches,
    load_checkpoint,
    n_params,
    penalty_of_input_gradients,
    save_checkpoint,
)


def rel_err(a, b):
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def manual_forward(params, sizes, x, act):
    # independent oracle: unpack weights by hand and loop over layers
    h = np.asarray(x, dtype=float)
    k = 0
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = params[k:k + n_in * n_out].reshape(n_out, n_in)
        k += n_in * n_out
        b = params[k:k + n_out]
        k += n_out
        h = h @ W.T + b
        if i < len(sizes) - 2:
            h = np.tanh(h) if act == "tanh" else np.maximum(h, 0)
    return h


class TestMLP:
    @pytest.mark.parametrize("act", ["tanh", "relu"])
    def test_forward_matches_manual(self, act):
        sizes = [3, 7, 4, 2]
        net = MLP(sizes, act, seed=2)
        x = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_allclose(net(x), manual_forward(net.params, sizes, x, act), atol=1e-14)
        assert net.params.size == n_params(sizes)

    def test_single_vector_input(self):
        net = MLP([2, 4, 1], seed=0)
        x = np.array([0.3, -0.1])
        assert net(x).shape == (1,)
        np.testing.assert_allclose(net(x), net(x[None])[0])

    def test_seeded_init_is_reproducible_and_biases_zero(self):
        a, b = MLP([4, 8, 1], seed=5), MLP([4, 8, 1], seed=5)
        np.testing.assert_array_equal(a.params, b.params)
        for _, bias in a.layers():
            assert np.all(bias == 0)

    def test_xavier_bounds(self):
        net = MLP([10, 30, 1], seed=0)
        w, _ = net.layers()[0]
        assert np.abs(w).max() <= np.sqrt(6 / 40)

    def test_set_params_rejects_nan_and_wrong_size(self):
        net = MLP([2, 3, 1])
        with pytest.raises(DivergedParameters):
            net.set_params(np.full(net.params.size, np.nan))
        with pytest.raises(ShapeMismatch):
            net.set_params(np.zeros(3))

    def test_checkpoint_round_trip(self, tmp_path):
        net = MLP([2, 5, 1], "relu", seed=3)
        save_checkpoint(net, tmp_path / "n.ckpt", extra={"note": 1})
        back, extra = load_checkpoint(tmp_path / "n.ckpt")
        np.testing.assert_array_equal(back.params, net.params)
        assert back.layer_sizes == [2, 5, 1] and back.activation.value == "relu"
        assert extra == {"note": 1}
        header = (tmp_path / "n.ckpt").read_bytes().split(b"\n", 1)[0]
        assert b'"layer_sizes"' in header


class TestGradients:
    @pytest.mark.parametrize("seed", range(6))
    def test_backward_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        sizes = [int(rng.integers(1, 5)), int(rng.integers(2, 7)), int(rng.integers(2, 7)), int(rng.integers(1, 3))]
        net = MLP(sizes, "tanh", seed=seed)
        x = rng.normal(size=(4, sizes[0]))
        g_out = rng.normal(size=(4, sizes[-1]))

        def loss(theta):
            return float(np.sum(g_out * MLP(sizes, "tanh", seed, theta)(x)))

        assert rel_err(net.backward(x, g_out), central_difference(loss, net.params)) < 1e-6

    def test_input_gradient(self):
        rng = np.random.default_rng(1)
        net = MLP([3, 6, 2], "tanh", seed=1)
        x = rng.normal(size=(3,))
        g_out = rng.normal(size=2)
        fd = central_difference(lambda v: float(g_out @ net(v)), x)
        assert rel_err(net.input_gradient(x, g_out), fd) < 1e-7

    @pytest.mark.parametrize("act", ["tanh", "relu"])
    def test_penalty_gradient(self, act):
        rng = np.random.default_rng(2)
        sizes = [2, 5, 4, 1]
        net = MLP(sizes, act, seed=2)
        x = rng.normal(size=(6, 2))
        value, grad = penalty_of_input_gradients(net, x, 3.0)

        def pen(theta):
            return penalty_of_input_gradients(MLP(sizes, act, 2, theta), x, 3.0)[0]

        assert value == pytest.approx(pen(net.params))
        assert rel_err(grad, central_difference(pen, net.params)) < 1e-6

    def test_penalty_value_by_definition(self):
        net = MLP([2, 4, 1], seed=0)
        x = np.random.default_rng(3).normal(size=(5, 2))
        norms = [np.linalg.norm(net.input_gradient(xi, np.ones(1))) for xi in x]
        expected = 2.0 * np.mean((np.array(norms) - 1.0) ** 2)
        assert penalty_of_input_gradients(net, x, 2.0)[0] == pytest.approx(expected, rel=1e-12)

    def test_interpolates_lie_on_segments(self):
        rng = np.random.default_rng(0)
        xe = np.zeros((10, 2))
        xp = np.ones((10, 2))
        pts = interpolate_batches(xe, xp, rng)
        assert np.all((pts >= 0) & (pts <= 1))
        np.testing.assert_allclose(pts[:, 0], pts[:, 1])

    def test_gradient_penalty_seeded(self):
        net = MLP([2, 4, 1], seed=0)
        xe = np.random.default_rng(0).normal(size=(8, 2))
        xp = np.random.default_rng(1).normal(size=(8, 2))
        a = gradient_penalty(net, xe, xp, 1.0, np.random.default_rng(9))
        b = gradient_penalty(net, xe, xp, 1.0, np.random.default_rng(9))
        assert a[0] == b[0]


class TestAdam:
    def test_first_step_has_step_size_magnitude(self):
        opt = Adam(0.1)
        new = opt.step(np.zeros(3), np.array([2.0, -5.0, 0.5]))
        np.testing.assert_allclose(new, [-0.1, 0.1, -0.1], atol=1e-6)

    def test_minimises_quadratic(self):
        opt = Adam(0.05)
        x = np.array([3.0, -2.0])
        for _ in range(2000):
            x = opt.step(x, 2 * x)
        assert np.abs(x).max() < 1e-3

    def test_raises_on_divergence(self):
        with pytest.raises(DivergedParameters):
            Adam(1.0).step(np.zeros(1), np.array([np.nan]))


class TestInputNormalizer:
    def test_fit_standardises(self):
        x = np.random.default_rng(0).normal(3.0, 2.0, size=(500, 2))
        z = InputNormalizer.fit(x)(x)
        np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-12)

    def test_constant_feature_is_floored(self):
        norm = InputNormalizer.fit(np.ones((4, 1)))
        assert norm.std[0] == 1e-6

    def test_dict_round_trip(self):
        norm = InputNormalizer(np.array([1.0]), np.array([2.0]))
        back = InputNormalizer.from_dict(norm.to_dict())
        assert back(np.array([3.0]))[0] == 1.0
