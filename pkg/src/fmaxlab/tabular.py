"""Finite MDPs, stochastic policies, occupancy measures and trajectory sampling.

Occupancy measures are always stored normalised to sum to one. The
normaliser that converts an expectation under the occupancy measure back into
an expected trajectory sum is carried alongside: ``1 / (1 - gamma)`` in
discounted mode, the horizon ``T`` in finite-horizon mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ShapeMismatch, SingularSystem

DIRECT_SOLVE_LIMIT = 10_000
ACTION_NAMES = ("up", "down", "left", "right")


def _check_rows(x, axis, what, tol=1e-12):
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError(f"{what} must be finite and nonnegative")
    err = np.max(np.abs(x.sum(axis=axis) - 1.0))
    if err > tol:
        raise ValueError(f"{what} rows must sum to 1 (max error {err:.3g})")


@dataclass(frozen=True)
class TabularMDP:
    """``(S, A, P, r, rho0, gamma)`` with an optional finite horizon."""

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    discount: float = 0.99
    horizon: int | None = None

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        rho0 = np.array(self.initial_dist, dtype=float).ravel()
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ShapeMismatch(f"transition must be (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if r.shape != (S, A):
            raise ShapeMismatch(f"reward must be {(S, A)}, got {r.shape}")
        if rho0.shape != (S,):
            raise ShapeMismatch(f"initial_dist must have {S} entries, got {rho0.shape}")
        _check_rows(P, 2, "transition")
        _check_rows(rho0, 0, "initial_dist")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if self.horizon is not None and int(self.horizon) < 1:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        for name, arr in (("transition", P), ("reward", r), ("initial_dist", rho0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))
        if self.horizon is not None:
            object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def finite_horizon(self) -> bool:
        return self.horizon is not None

    def with_horizon(self, horizon: int | None) -> "TabularMDP":
        return TabularMDP(self.transition, self.reward, self.initial_dist, self.discount, horizon)

    def with_reward(self, reward) -> "TabularMDP":
        return TabularMDP(self.transition, reward, self.initial_dist, self.discount, self.horizon)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "discount": self.discount,
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMDP":
        return cls(
            np.asarray(d["transition"]),
            np.asarray(d["reward"]),
            np.asarray(d["initial_dist"]),
            d.get("discount", 0.99),
            d.get("horizon"),
        )


@dataclass(frozen=True)
class TabularPolicy:
    """Row-stochastic matrix ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2:
            raise ShapeMismatch(f"policy must be (S, A), got {p.shape}")
        _check_rows(p, 1, "policy")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def normalised(cls, weights) -> "TabularPolicy":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum(axis=1, keepdims=True))

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        p = np.zeros((actions.size, n_actions))
        p[np.arange(actions.size), actions] = 1.0
        return cls(p)

    @classmethod
    def random(cls, n_states: int, n_actions: int, rng, concentration: float = 1.0) -> "TabularPolicy":
        return cls.normalised(rng.dirichlet(np.full(n_actions, concentration), size=n_states))

    def mode(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    def greedy(self) -> "TabularPolicy":
        return TabularPolicy.deterministic(self.mode(), self.n_actions)

    def mix(self, other: "TabularPolicy", alpha: float) -> "TabularPolicy":
        """``(1 - alpha) * self + alpha * other``."""
        return TabularPolicy.normalised((1.0 - alpha) * self.probs + alpha * other.probs)

    def log_probs(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


@dataclass(frozen=True)
class OccupancyMeasure:
    joint: np.ndarray
    normalizer: float

    def __post_init__(self):
        j = np.array(self.joint, dtype=float)
        if abs(j.sum() - 1.0) > 1e-10:
            raise ValueError(f"occupancy sums to {j.sum()!r}")
        j.setflags(write=False)
        object.__setattr__(self, "joint", j)

    @property
    def state_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    def expectation(self, h) -> float:
        return float(np.sum(self.joint * np.asarray(h, dtype=float)))


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray | None = None
    timesteps: np.ndarray | None = None
    policy_id: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states)
        self.actions = np.asarray(self.actions)
        if len(self.states) != len(self.actions):
            raise ShapeMismatch(f"{len(self.states)} states but {len(self.actions)} actions")
        if self.rewards is not None:
            self.rewards = np.asarray(self.rewards, dtype=float)
        if self.timesteps is None:
            self.timesteps = np.arange(len(self.actions))
        else:
            self.timesteps = np.asarray(self.timesteps, dtype=int)

    @property
    def length(self) -> int:
        return len(self.actions)

    def __len__(self) -> int:
        return self.length

    def total_reward(self) -> float:
        return 0.0 if self.rewards is None else float(self.rewards.sum())

    def to_json(self) -> dict:
        d = {"states": self.states.tolist(), "actions": self.actions.tolist()}
        if self.rewards is not None:
            d["rewards"] = self.rewards.tolist()
        if not np.array_equal(self.timesteps, np.arange(self.length)):
            d["timesteps"] = self.timesteps.tolist()
        if self.policy_id:
            d["policy_id"] = self.policy_id
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Trajectory":
        return cls(np.asarray(d["states"]), np.asarray(d["actions"]), d.get("rewards"), d.get("timesteps"), d.get("policy_id", ""))


def policy_transition(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """State-to-state kernel ``P_pi[s, s'] = sum_a pi(a|s) P[s, a, s']``."""
    _check_pair(mdp, policy)
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def _check_pair(mdp, policy):
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeMismatch(
            f"policy shape {policy.probs.shape} does not match MDP {(mdp.n_states, mdp.n_actions)}"
        )


def _power_iteration(P_pi, rho0, gamma, tol=1e-12, max_iters=100_000):
    d = (1 - gamma) * rho0
    term = d.copy()
    for _ in range(max_iters):
        term = gamma * (term @ P_pi)
        d = d + term
        if term.sum() < tol * 1e-2:
            break
    return d


def state_occupancy(mdp: TabularMDP, policy: TabularPolicy, mode: str | None = None) -> np.ndarray:
    """Normalised state visitation distribution."""
    P_pi = policy_transition(mdp, policy)
    mode = mode or ("finite" if mdp.finite_horizon else "discounted")
    if mode == "finite":
        if mdp.horizon is None:
            raise ValueError("finite-horizon mode needs mdp.horizon")
        d = mdp.initial_dist.copy()
        total = np.zeros_like(d)
        for _ in range(mdp.horizon):
            total += d
            d = d @ P_pi
        return total / mdp.horizon
    if mode != "discounted":
        raise ValueError(f"unknown occupancy mode {mode!r}")
    gamma = mdp.discount
    S = mdp.n_states
    if S * mdp.n_actions <= DIRECT_SOLVE_LIMIT:
        try:
            d = _solve_flow(P_pi, mdp.initial_dist, gamma)
        except SingularSystem:
            d = _power_iteration(P_pi, mdp.initial_dist, gamma)
    else:
        d = _power_iteration(P_pi, mdp.initial_dist, gamma)
    d = np.maximum(d, 0.0)
    return d / d.sum()


def _solve_flow(P_pi, rho0, gamma):
    S = P_pi.shape[0]
    try:
        d = np.linalg.solve(np.eye(S) - gamma * P_pi.T, (1 - gamma) * rho0)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(d)):
        raise SingularSystem("non-finite solution of the flow equations")
    return d


def occupancy_measure(mdp: TabularMDP, policy: TabularPolicy, mode: str | None = None) -> OccupancyMeasure:
    """Normalised state-action occupancy ``rho(s, a) = d(s) pi(a | s)``.

    ``mode`` is ``"finite"`` or ``"discounted"``; by default finite-horizon
    MDPs use the uniform average over ``t = 0..T-1`` and the rest use the
    discounted flow equations.
    """
    mode = mode or ("finite" if mdp.finite_horizon else "discounted")
    d = state_occupancy(mdp, policy, mode)
    joint = d[:, None] * policy.probs
    joint = joint / joint.sum()
    normalizer = float(mdp.horizon) if mode == "finite" else 1.0 / (1.0 - mdp.discount)
    return OccupancyMeasure(joint, normalizer)


def flow_residual(mdp: TabularMDP, occ: OccupancyMeasure) -> float:
    """Max violation of ``d(s) = (1-g) rho0(s) + g sum rho(s',a') P[s',a',s]``."""
    g = mdp.discount
    rhs = (1 - g) * mdp.initial_dist + g * np.einsum("sa,sat->t", occ.joint, mdp.transition)
    return float(np.max(np.abs(occ.state_marginal - rhs)))


def causal_entropy(mdp: TabularMDP, policy: TabularPolicy, mode: str | None = None) -> float:
    """``E_{rho(s,a)}[-log pi(a|s)]`` with ``0 log 0 = 0``."""
    occ = occupancy_measure(mdp, policy, mode)
    p = policy.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        neglog = np.where(p > 0, -np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(np.sum(occ.joint * neglog))


def expected_return(mdp: TabularMDP, policy: TabularPolicy, reward=None, mode: str | None = None) -> float:
    """Expected (discounted or finite-horizon) return through the occupancy measure."""
    occ = occupancy_measure(mdp, policy, mode)
    r = mdp.reward if reward is None else np.asarray(reward, dtype=float)
    return occ.normalizer * occ.expectation(r)


def _categorical(rng, probs):
    """One draw per row of ``probs``."""
    u = rng.random(probs.shape[0])
    idx = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_trajectories(
    mdp: TabularMDP,
    policy: TabularPolicy,
    n: int,
    seed: int | np.random.Generator,
    mode: str | None = None,
    max_length: int = 100_000,
) -> list[Trajectory]:
    """Roll out ``n`` trajectories.

    Finite-horizon mode produces ``T`` steps each. Discounted mode ends each
    trajectory after every step with probability ``1 - gamma``, so trajectory
    sums estimate discounted returns without explicit discount weights.
    """
    _check_pair(mdp, policy)
    if n <= 0:
        return []
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mode = mode or ("finite" if mdp.finite_horizon else "discounted")
    length = mdp.horizon if mode == "finite" else max_length
    P, pi, r = mdp.transition, policy.probs, mdp.reward

    s = _categorical(rng, np.broadcast_to(mdp.initial_dist, (n, mdp.n_states)))
    alive = np.ones(n, dtype=bool)
    lengths = np.zeros(n, dtype=int)
    S_hist, A_hist = [], []
    for _ in range(length):
        a = _categorical(rng, pi[s])
        S_hist.append(s.copy())
        A_hist.append(a)
        lengths += alive
        s = _categorical(rng, P[s, a])
        if mode == "discounted":
            alive &= rng.random(n) < mdp.discount
            if not alive.any():
                break
    S_arr = np.array(S_hist)
    A_arr = np.array(A_hist)
    out = []
    for i in range(n):
        L = lengths[i]
        st, ac = S_arr[:L, i], A_arr[:L, i]
        out.append(Trajectory(st, ac, r[st, ac]))
    return out


def empirical_occupancy(trajectories, n_states: int, n_actions: int, smoothing: float = 0.0) -> np.ndarray:
    counts = np.full((n_states, n_actions), float(smoothing))
    for tr in trajectories:
        np.add.at(counts, (np.asarray(tr.states, dtype=int), np.asarray(tr.actions, dtype=int)), 1.0)
    if counts.sum() == 0:
        raise ValueError("no state-action pairs to count")
    return counts / counts.sum()


class IdentityCheck(NamedTuple):
    estimate: float
    exact: float
    stderr: float

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if np.isclose(self.estimate, self.exact, atol=1e-12) else np.inf
        return abs(self.estimate - self.exact) / self.stderr


def trajectory_occupancy_identity_check(
    mdp: TabularMDP, policy: TabularPolicy, h, n_samples: int, seed, mode: str | None = None
) -> IdentityCheck:
    """Monte Carlo ``E_tau[sum_t h(s_t, a_t)]`` against ``normalizer * E_rho[h]``.

    In discounted mode trajectories terminate with probability ``1 - gamma``
    per step, which makes the undiscounted sum an unbiased estimate of the
    discounted one.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeMismatch(f"h must be {(mdp.n_states, mdp.n_actions)}, got {h.shape}")
    occ = occupancy_measure(mdp, policy, mode)
    exact = occ.normalizer * occ.expectation(h)
    trajs = sample_trajectories(mdp, policy, n_samples, seed, mode)
    sums = np.array([h[t.states, t.actions].sum() for t in trajs])
    stderr = float(sums.std(ddof=1) / np.sqrt(len(sums))) if len(sums) > 1 else 0.0
    return IdentityCheck(float(sums.mean()), float(exact), stderr)


def gridworld(n: int = 5, horizon: int | None = None, discount: float = 0.99, goal: int | None = None) -> TabularMDP:
    """``n x n`` grid with deterministic moves, walls that bounce back, start at
    the top-left corner and reward 1 for every action taken in the goal cell
    (bottom-right corner by default)."""
    S = n * n
    moves = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    P = np.zeros((S, 4, S))
    for s in range(S):
        i, j = divmod(s, n)
        for a, (di, dj) in enumerate(moves):
            ii = min(max(i + di, 0), n - 1)
            jj = min(max(j + dj, 0), n - 1)
            P[s, a, ii * n + jj] = 1.0
    goal = S - 1 if goal is None else goal
    r = np.zeros((S, 4))
    r[goal] = 1.0
    rho0 = np.zeros(S)
    rho0[0] = 1.0
    return TabularMDP(P, r, rho0, discount, horizon)


def random_mdp(
    n_states: int, n_actions: int, seed, discount: float = 0.9, horizon: int | None = None
) -> TabularMDP:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.normal(size=(n_states, n_actions))
    rho0 = rng.dirichlet(np.ones(n_states))
    rho0 /= rho0.sum()
    return TabularMDP(P, r, rho0, discount, horizon)


def save_mdp(mdp: TabularMDP, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict()))


def load_mdp(path) -> TabularMDP:
    return TabularMDP.from_dict(json.loads(Path(path).read_text()))


def save_trajectories(trajectories, path) -> None:
    with open(path, "w") as fh:
        for tr in trajectories:
            fh.write(json.dumps(tr.to_json()) + "\n")


def load_trajectories(path) -> list[Trajectory]:
    with open(path) as fh:
        return [Trajectory.from_json(json.loads(line)) for line in fh if line.strip()]
