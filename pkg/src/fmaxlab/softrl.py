"""Maximum-entropy policy optimisation.

Tabular problems are solved exactly: :func:`solve_soft` returns the policy
maximising ``E_rho[r] + tau * H_causal(pi)`` under the discounted objective.
Continuous problems use a likelihood-ratio policy gradient on a Gaussian
policy with a per-timestep batch-mean (or learned value) baseline and an
entropy bonus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DivergedParameters, NonConvergence, ShapeMismatch
from .nn import MLP, Adam, InputNormalizer
from .tabular import TabularMDP, TabularPolicy

LOG_FLOOR = -700.0


@dataclass(frozen=True)
class SoftRLConfig:
    """Settings for the tabular soft-optimal solver.

    ``method="policy"`` runs soft policy iteration (exact evaluation plus
    softmax improvement), which converges in a handful of sweeps even for
    ``gamma`` near one. ``method="value"`` runs plain soft value iteration.
    ``discount`` overrides the MDP's discount when set.
    """

    temperature: float = 1.0
    max_iters: int = 10_000
    tolerance: float = 1e-10
    discount: float | None = None
    method: str = "policy"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.method not in ("policy", "value"):
            raise ValueError(f"method must be 'policy' or 'value', got {self.method!r}")


@dataclass
class SoftSolution:
    policy: TabularPolicy
    q: np.ndarray
    v: np.ndarray
    iterations: int
    residual: float
    residuals: list[float] = field(default_factory=list)


def _threshold(cfg, v):
    # relative once values are large, so huge reward scales stay solvable
    return cfg.tolerance * max(1.0, float(np.max(np.abs(v))))


def _soft_v(q, tau):
    return tau * logsumexp(q / tau, axis=1)


def _evaluate(P, r, pi, gamma, tau):
    """Exact soft value of ``pi``: ``V = (I - g P_pi)^-1 sum_a pi (r - tau log pi)``."""
    with np.errstate(divide="ignore"):
        logp = np.maximum(np.log(pi), LOG_FLOOR)
    r_pi = np.sum(pi * (r - tau * logp), axis=1)
    P_pi = np.einsum("sa,sat->st", pi, P)
    return np.linalg.solve(np.eye(P.shape[0]) - gamma * P_pi, r_pi)


def solve_soft(mdp: TabularMDP, reward=None, cfg: SoftRLConfig | None = None, raise_on_fail: bool = True) -> SoftSolution:
    """Soft-optimal policy and its soft Q and V functions.

    The result satisfies ``pi(a|s) = exp((Q(s,a) - V(s)) / tau)`` with
    ``V = tau * logsumexp(Q / tau)`` and ``Q = r + gamma * P V`` up to the
    Bellman residual reported in ``residual``.
    """
    cfg = cfg or SoftRLConfig()
    r = mdp.reward if reward is None else np.asarray(reward, dtype=float)
    if r.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeMismatch(f"reward must be {(mdp.n_states, mdp.n_actions)}, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("reward entries must be finite")
    P = mdp.transition
    gamma = mdp.discount if cfg.discount is None else cfg.discount
    tau = cfg.temperature
    residuals: list[float] = []

    if cfg.method == "value":
        v = np.zeros(mdp.n_states)
        for it in range(1, cfg.max_iters + 1):
            q = r + gamma * (P @ v)
            v_new = _soft_v(q, tau)
            res = float(np.max(np.abs(v_new - v)))
            residuals.append(res)
            v = v_new
            if res < _threshold(cfg, v):
                break
    else:
        pi = np.full(r.shape, 1.0 / mdp.n_actions)
        for it in range(1, cfg.max_iters + 1):
            v = _evaluate(P, r, pi, gamma, tau)
            q = r + gamma * (P @ v)
            v_new = _soft_v(q, tau)
            res = float(np.max(np.abs(v_new - v)))
            residuals.append(res)
            pi = np.exp((q - v_new[:, None]) / tau)
            pi /= pi.sum(axis=1, keepdims=True)
            v = v_new
            if res < _threshold(cfg, v):
                break

    q = r + gamma * (P @ v)
    v = _soft_v(q, tau)
    probs = np.exp((q - v[:, None]) / tau)
    probs /= probs.sum(axis=1, keepdims=True)
    res = residuals[-1]
    if res >= _threshold(cfg, v) and raise_on_fail:
        raise NonConvergence(
            f"soft {cfg.method} iteration stopped after {it} sweeps with residual {res:.3g}",
            residual=res,
            iterations=it,
        )
    return SoftSolution(TabularPolicy(probs), q, v, it, res, residuals)


def soft_value_iteration(mdp: TabularMDP, reward=None, cfg: SoftRLConfig | None = None) -> TabularPolicy:
    """Soft-optimal (maximum-entropy) policy for ``reward`` on ``mdp``."""
    return solve_soft(mdp, reward, cfg).policy


def soft_objective(mdp: TabularMDP, policy: TabularPolicy, reward=None, temperature: float = 1.0, discount=None) -> float:
    """Discounted ``E[sum_t g^t (r - tau log pi)]`` from the initial distribution."""
    r = mdp.reward if reward is None else np.asarray(reward, dtype=float)
    gamma = mdp.discount if discount is None else discount
    v = _evaluate(mdp.transition, r, policy.probs, gamma, temperature)
    return float(mdp.initial_dist @ v)


# ---------------------------------------------------------------------------
# continuous control


class GaussianPolicy:
    """Diagonal Gaussian with an MLP mean and a global learned log-std.

    Observations pass through a fixed :class:`InputNormalizer` before the
    network. The flat parameter vector is the network parameters followed by
    the log-std entries.
    """

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        hidden=(64, 64),
        activation: str = "tanh",
        seed: int = 0,
        init_log_std: float = 0.0,
        normalizer: InputNormalizer | None = None,
        output_scale: float = 0.1,
    ):
        self.mean_net = MLP([obs_dim, *hidden, act_dim], activation, seed)
        if output_scale != 1.0:
            w, _ = self.mean_net.layers()[-1]
            w *= output_scale
        self.log_std = np.full(act_dim, float(init_log_std))
        self.normalizer = normalizer or InputNormalizer.identity(obs_dim)
        self.obs_dim = obs_dim
        self.act_dim = act_dim

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.mean_net.params, self.log_std])

    def set_params(self, params) -> None:
        params = np.asarray(params, dtype=float)
        if not np.all(np.isfinite(params)):
            raise DivergedParameters("non-finite policy parameters")
        k = self.mean_net.params.size
        self.mean_net.set_params(params[:k])
        self.log_std = params[k:].copy()

    def with_params(self, params) -> "GaussianPolicy":
        other = GaussianPolicy.__new__(GaussianPolicy)
        other.mean_net = self.mean_net.copy()
        other.normalizer = self.normalizer
        other.obs_dim, other.act_dim = self.obs_dim, self.act_dim
        other.log_std = self.log_std.copy()
        other.set_params(params)
        return other

    def mean(self, obs):
        return self.mean_net(self.normalizer(obs))

    def mode(self, obs):
        return self.mean(obs)

    def sample(self, obs, rng):
        mu = self.mean(obs)
        return mu + np.exp(self.log_std) * rng.standard_normal(np.shape(mu))

    def log_prob(self, obs, actions):
        mu = self.mean(obs)
        z = (np.asarray(actions, dtype=float) - mu) * np.exp(-self.log_std)
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(self.log_std) - 0.5 * self.act_dim * np.log(2 * np.pi)

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + 0.5 * self.act_dim * (1.0 + np.log(2 * np.pi)))

    def weighted_log_prob_grad(self, obs, actions, weights):
        """Gradient of ``sum_i w_i log pi(a_i | s_i)`` with respect to the flat params."""
        x = self.normalizer(obs)
        mu = self.mean_net(x)
        inv_std = np.exp(-self.log_std)
        z = (np.asarray(actions, dtype=float) - mu) * inv_std
        w = np.asarray(weights, dtype=float)[:, None]
        g_mean = self.mean_net.backward(x, w * z * inv_std)
        g_log_std = np.sum(w * (z * z - 1.0), axis=0)
        return np.concatenate([g_mean, g_log_std])


@dataclass
class PolicyGradientConfig:
    """Likelihood-ratio learner settings.

    ``entropy_weight`` multiplies the Gaussian entropy bonus; ``discount`` is
    used for reward-to-go; advantages are reward-to-go minus the batch mean
    at the same timestep, optionally rescaled to unit variance.
    """

    step_size: float = 3e-3
    batch_size: int = 32
    discount: float = 0.99
    entropy_weight: float = 0.0
    normalize_advantages: bool = True
    min_log_std: float = -3.0
    max_log_std: float = 2.0


def rewards_to_go(rewards, discount: float) -> np.ndarray:
    """``G[t] = sum_{k >= t} discount^(k-t) r[k]`` along axis 0."""
    r = np.asarray(rewards, dtype=float)
    out = np.zeros_like(r)
    acc = np.zeros(r.shape[1:])
    for t in range(r.shape[0] - 1, -1, -1):
        acc = r[t] + discount * acc
        out[t] = acc
    return out


def advantages(rewards, cfg: PolicyGradientConfig, values=None) -> np.ndarray:
    """Reward-to-go minus a baseline; ``rewards`` is ``(T, B)``.

    The baseline is ``values`` (same shape) when given, otherwise the batch
    mean of the reward-to-go at each timestep.
    """
    g = rewards_to_go(rewards, cfg.discount)
    if values is None:
        adv = g - g.mean(axis=1, keepdims=True)
    else:
        adv = g - np.asarray(values, dtype=float)
    if cfg.normalize_advantages:
        sd = adv.std()
        adv = adv / sd if sd > 1e-12 else np.zeros_like(adv)
    return adv


class ValueBaseline:
    """State-and-time value regressor used as a policy-gradient baseline.

    Inputs are normalised observations plus the fraction of the horizon
    elapsed; targets are reward-to-go standardised by their batch statistics.
    Each fitting step uses a seeded minibatch of ``minibatch`` samples
    (``None`` for the full batch).
    """

    def __init__(self, obs_dim: int, hidden=(64, 64), seed: int = 0, step_size: float = 3e-3, steps: int = 5,
                 normalizer: InputNormalizer | None = None, minibatch: int | None = None):
        self.net = MLP([obs_dim + 1, *hidden, 1], "tanh", seed)
        self.optimizer = Adam(step_size)
        self.steps = steps
        self.minibatch = minibatch
        self.normalizer = normalizer or InputNormalizer.identity(obs_dim)
        self.rng = np.random.default_rng(seed)

    def _features(self, obs):
        T, B = obs.shape[:2]
        tfrac = np.broadcast_to((np.arange(T) / T)[:, None, None], (T, B, 1))
        return np.concatenate([self.normalizer(obs.reshape(T * B, -1)).reshape(T, B, -1), tfrac], axis=2).reshape(T * B, -1)

    def fit_predict(self, obs, returns) -> np.ndarray:
        """Regress on this batch for ``steps`` Adam steps, then predict it."""
        obs = np.asarray(obs, dtype=float)
        g = np.asarray(returns, dtype=float)
        x = self._features(obs)
        mu, sd = g.mean(), g.std() + 1e-8
        y = ((g - mu) / sd).reshape(-1)
        for _ in range(self.steps):
            xb, yb = x, y
            if self.minibatch is not None and self.minibatch < len(y):
                idx = self.rng.integers(0, len(y), self.minibatch)
                xb, yb = x[idx], y[idx]
            v = self.net(xb)[:, 0]
            grad = self.net.backward(xb, ((v - yb) / len(yb))[:, None])
            self.net.set_params(self.optimizer.step(self.net.params, grad))
        return (self.net(x)[:, 0] * sd + mu).reshape(g.shape)


def surrogate_loss(policy: GaussianPolicy, obs, actions, adv, entropy_weight: float, params=None):
    """Loss ``-mean(A * log pi) - w * H`` whose gradient is the policy-gradient step."""
    pol = policy if params is None else policy.with_params(params)
    lp = pol.log_prob(obs, actions)
    return float(-np.mean(adv * lp) - entropy_weight * pol.entropy())


def surrogate_grad(policy: GaussianPolicy, obs, actions, adv, entropy_weight: float) -> np.ndarray:
    n = len(adv)
    g = -policy.weighted_log_prob_grad(obs, actions, np.asarray(adv) / n)
    g[-policy.act_dim:] -= entropy_weight
    return g


def continuous_policy_update(
    policy: GaussianPolicy,
    obs,
    actions,
    rewards,
    cfg: PolicyGradientConfig,
    optimizer: Adam,
    baseline: ValueBaseline | None = None,
) -> dict:
    """One policy-gradient step from a ``(T, B)`` batch of rollouts.

    ``obs`` and ``actions`` have shape ``(T, B, dim)``; ``actions`` are the raw
    Gaussian samples (before any environment-side squashing).
    """
    obs = np.asarray(obs, dtype=float)
    actions = np.asarray(actions, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    T, B = rewards.shape
    if obs.shape[:2] != (T, B) or actions.shape[:2] != (T, B):
        raise ShapeMismatch("obs, actions and rewards must share the (T, B) leading shape")
    values = None
    if baseline is not None:
        values = baseline.fit_predict(obs, rewards_to_go(rewards, cfg.discount))
    adv = advantages(rewards, cfg, values).reshape(-1)
    o = obs.reshape(T * B, -1)
    a = actions.reshape(T * B, -1)
    grad = surrogate_grad(policy, o, a, adv, cfg.entropy_weight)
    new = optimizer.step(policy.params, grad)
    k = policy.mean_net.params.size
    new[k:] = np.clip(new[k:], cfg.min_log_std, cfg.max_log_std)
    policy.set_params(new)
    return {"grad_norm": float(np.linalg.norm(grad)), "mean_reward": float(rewards.mean())}
