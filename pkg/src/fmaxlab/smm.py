"""State-marginal matching on a 2D point mass.

The agent starts near the origin and each action displaces it by at most one
unit. A state-only discriminator separates target samples (positive) from
visited states (negative) and the policy is trained by likelihood-ratio
gradients on the reward ``f*(t(logit))``, so the visitation distribution is
pulled toward the target point cloud under the chosen f-divergence.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .discrim import LearnedDiscriminator, RewardKind, RewardSpec, parse_reward, reward_from_logit
from .errors import ConfigError, DivergedParameters, ShapeMismatch
from .fdiv import FDivergence, get_divergence
from .nn import Adam, InputNormalizer
from .softrl import GaussianPolicy, PolicyGradientConfig, ValueBaseline, continuous_policy_update

INFINITY_HORIZON = 120
SPIRAL_HORIZON = 480

SMM_REPORT_COLUMNS = ("iter", "divergence", "js", "disc_loss", "mean_reward", "log_std", "seconds")


# ---------------------------------------------------------------------------
# environment


@dataclass
class PointMassEnv:
    """Point in the plane moved by actions rescaled to at most unit norm.

    ``reward_fn`` maps a batch of positions ``(n, 2)`` to per-step rewards and
    is only needed by :meth:`episode_returns`.
    """

    horizon: int = INFINITY_HORIZON
    start_noise: float = 0.1
    reward_fn: Callable | None = None

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.start_noise < 0:
            raise ValueError("start_noise must be nonnegative")

    @staticmethod
    def clip_action(actions) -> np.ndarray:
        a = np.asarray(actions, dtype=float)
        norm = np.linalg.norm(a, axis=-1, keepdims=True)
        return a / np.maximum(1.0, norm)

    def reset(self, n: int, rng) -> np.ndarray:
        return rng.normal(0.0, self.start_noise, (n, 2))

    def step(self, positions, actions) -> np.ndarray:
        return np.asarray(positions, dtype=float) + self.clip_action(actions)

    def rollout(self, policy, n: int, rng, deterministic: bool = False):
        """Visited states and raw actions, both ``(horizon, n, 2)``.

        ``states[t]`` is the position at which ``actions[t]`` was chosen.
        """
        states = np.zeros((self.horizon, n, 2))
        actions = np.zeros((self.horizon, n, 2))
        x = self.reset(n, rng)
        for t in range(self.horizon):
            states[t] = x
            a = policy.mode(x) if deterministic else policy.sample(x, rng)
            actions[t] = a
            x = self.step(x, a)
        return states, actions

    def visited(self, policy, n: int, seed, deterministic: bool = False) -> np.ndarray:
        states, _ = self.rollout(policy, n, np.random.default_rng(seed), deterministic)
        return states.reshape(-1, 2)

    def episode_returns(self, policy, n: int, seed, deterministic: bool = False) -> np.ndarray:
        if self.reward_fn is None:
            raise ValueError("this point mass has no reward_fn")
        states, _ = self.rollout(policy, n, np.random.default_rng(seed), deterministic)
        r = np.stack([self.reward_fn(s) for s in states])
        return r.sum(axis=0)


# ---------------------------------------------------------------------------
# targets


class TargetKind(str, Enum):
    INFINITY = "Infinity"
    SPIRAL = "Spiral"


@dataclass(frozen=True)
class TargetSampler:
    """Noisy points along a figure-eight or a two-turn spiral."""

    kind: TargetKind = TargetKind.INFINITY
    r: float = 12.0
    num_rotations: float = 2.0
    radius: float = 16.0
    noise_scale: float = 0.3
    num_points: int = 4000

    def __post_init__(self):
        object.__setattr__(self, "kind", TargetKind(self.kind))
        if self.num_points <= 0:
            raise ValueError("num_points must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")

    @classmethod
    def infinity(cls, r: float = 12.0, noise_scale: float = 0.3, num_points: int = 4000) -> "TargetSampler":
        return cls(TargetKind.INFINITY, r=r, noise_scale=noise_scale, num_points=num_points)

    @classmethod
    def spiral(cls, num_rotations: float = 2.0, radius: float = 16.0, noise_scale: float = 0.3,
               num_points: int = 16000) -> "TargetSampler":
        return cls(TargetKind.SPIRAL, num_rotations=num_rotations, radius=radius,
                   noise_scale=noise_scale, num_points=num_points)

    @property
    def horizon(self) -> int:
        return INFINITY_HORIZON if self.kind is TargetKind.INFINITY else SPIRAL_HORIZON

    def curve(self) -> np.ndarray:
        """Noiseless points, ``(num_points, 2)``."""
        if self.kind is TargetKind.INFINITY:
            return infinity_curve(self.r, self.num_points)
        return spiral_curve(self.num_rotations, self.radius, self.num_points)


def infinity_curve(r: float, num_points: int) -> np.ndarray:
    a = np.linspace(0.0, 2 * np.pi, num_points)
    x = r * np.sqrt(2) * np.cos(a) / (np.sin(a) ** 2 + 1)
    y = x * np.sin(a)
    return np.stack([x, y], axis=1)


def spiral_curve(num_rotations: float, radius: float, num_points: int) -> np.ndarray:
    a = np.linspace(0.0, 2 * np.pi * num_rotations, num_points)
    rr = np.linspace(0.0, radius, num_points)
    return np.stack([rr * np.cos(a), rr * np.sin(a)], axis=1)


def sample_target(sampler: TargetSampler, seed) -> np.ndarray:
    pts = sampler.curve()
    if sampler.noise_scale > 0:
        pts = pts + np.random.default_rng(seed).normal(0.0, sampler.noise_scale, pts.shape)
    return pts


# ---------------------------------------------------------------------------
# evaluation


def histogram_js(target, visited, bins: int = 40, margin: float = 1.0, smoothing: float = 1e-6) -> float:
    """JS divergence (nats) between 2D histograms on a shared grid.

    The grid covers the joint bounding box widened by ``margin`` on each side;
    every bin count gets ``smoothing`` added before normalisation.
    """
    p_pts = np.asarray(target, dtype=float).reshape(-1, 2)
    q_pts = np.asarray(visited, dtype=float).reshape(-1, 2)
    if len(p_pts) == 0 or len(q_pts) == 0:
        raise ValueError("point sets must be nonempty")
    both = np.vstack([p_pts, q_pts])
    lo = both.min(axis=0) - margin
    hi = both.max(axis=0) + margin
    rng_ = [[lo[0], hi[0]], [lo[1], hi[1]]]
    hp, _, _ = np.histogram2d(p_pts[:, 0], p_pts[:, 1], bins=bins, range=rng_)
    hq, _, _ = np.histogram2d(q_pts[:, 0], q_pts[:, 1], bins=bins, range=rng_)
    p = (hp + smoothing).ravel()
    q = (hq + smoothing).ravel()
    p /= p.sum()
    q /= q.sum()
    m = 0.5 * (p + q)
    return float(0.5 * np.sum(p * np.log(p / m)) + 0.5 * np.sum(q * np.log(q / m)))


def evaluate_marginal(policy, env: PointMassEnv, target, bins: int = 40, n_episodes: int = 50, seed=0,
                      deterministic: bool = False) -> float:
    """Histogram JS between the target cloud and states visited over ``n_episodes``."""
    return histogram_js(target, env.visited(policy, n_episodes, seed, deterministic), bins)


# ---------------------------------------------------------------------------
# training


@dataclass
class SMMConfig:
    """Settings of the state-only adversarial learner.

    The gradient penalty defaults to zero. ``value_baseline`` replaces the
    per-timestep batch-mean baseline with a learned state-and-time value
    regressor fitted on ``value_batch``-sample minibatches.
    """

    divergence: str = "ReverseKL"
    iterations: int = 5000
    seed: int = 0
    batch_size: int = 32
    step_size: float = 1e-3
    lr_decay: bool = True
    min_lr_fraction: float = 0.05
    discount: float = 0.95
    entropy_weight: float = 0.0
    init_log_std: float = 0.0
    min_log_std: float = float(np.log(0.05))
    max_log_std: float = 2.0
    hidden: tuple = (64, 64)
    disc_hidden: tuple = (64, 64)
    disc_step_size: float = 1e-3
    disc_steps: int = 5
    disc_batch: int = 256
    grad_pen_weight: float = 0.0
    logit_clip: tuple | None = (-10.0, 10.0)
    value_baseline: bool = False
    value_step_size: float = 3e-3
    value_steps: int = 5
    value_batch: int | None = 512
    eval_every: int = 500
    eval_episodes: int = 50
    bins: int = 40

    def __post_init__(self):
        get_divergence(self.divergence)
        for name in ("iterations", "batch_size", "disc_steps", "disc_batch", "eval_episodes", "bins"):
            if getattr(self, name) < (0 if name == "iterations" else 1):
                raise ConfigError("out of range", field=name)
        if not self.step_size > 0:
            raise ConfigError("must be positive", field="step_size")
        if not 0 <= self.discount <= 1:
            raise ConfigError("must lie in [0, 1]", field="discount")
        if self.grad_pen_weight < 0:
            raise ConfigError("must be nonnegative", field="grad_pen_weight")
        if self.eval_every <= 0:
            raise ConfigError("must be positive", field="eval_every")
        if self.value_steps < 1:
            raise ConfigError("must be at least 1", field="value_steps")
        if self.value_batch is not None and self.value_batch < 1:
            raise ConfigError("must be positive or omitted", field="value_batch")
        self.hidden = tuple(int(h) for h in self.hidden)
        self.disc_hidden = tuple(int(h) for h in self.disc_hidden)
        if self.logit_clip is not None:
            self.logit_clip = tuple(float(x) for x in self.logit_clip)


@dataclass
class SMMReport:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append({k: row.get(k, float("nan")) for k in SMM_REPORT_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def divergences(self) -> np.ndarray:
        return self.column("divergence")

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, path, timing: bool = True) -> None:
        cols = SMM_REPORT_COLUMNS if timing else SMM_REPORT_COLUMNS[:-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([str(int(r[c])) if c == "iter" else repr(float(r[c])) for c in cols])


@dataclass
class SMMResult:
    policy: GaussianPolicy
    discriminator: LearnedDiscriminator
    report: SMMReport
    initial_js: float
    final_js: float

    def __iter__(self):
        yield self.policy
        yield self.report


def state_rewards(disc: LearnedDiscriminator, states, spec: RewardSpec) -> np.ndarray:
    """Per-state reward; the input is positions only, shape ``(..., 2)``."""
    s = np.asarray(states, dtype=float)
    flat = s.reshape(-1, s.shape[-1])
    return reward_from_logit(disc.logit(flat), spec).reshape(s.shape[:-1])


def estimated_divergence(f: FDivergence, disc: LearnedDiscriminator, target_batch, visited_batch) -> float:
    """Variational lower bound ``E_target[T] - E_visited[f*(T)]`` with ``T`` read off the logit."""
    te = f.t_from_logit(disc.logit(target_batch))
    tp = f.t_from_logit(disc.logit(visited_batch))
    return float(np.mean(te) - np.mean(f.conjugate_unchecked(tp)))


def _default_spec(cfg: SMMConfig) -> RewardSpec:
    return RewardSpec(RewardKind.FMAX, get_divergence(cfg.divergence))


def smm_train(env: PointMassEnv, target, f: FDivergence | str | None = None, cfg: SMMConfig | None = None,
              reward=None, initial_policy: GaussianPolicy | None = None, callback=None) -> SMMResult:
    """Match the policy's state marginal to ``target`` (an ``(N, 2)`` point set).

    ``f`` overrides ``cfg.divergence``; ``reward`` (any reward kind accepted by
    :func:`reward_from_logit`) overrides the f-MAX reward of ``f``. The
    discriminator sees states only. Histogram JS against ``target`` is
    logged every ``cfg.eval_every`` iterations and at the end.
    """
    cfg = cfg or SMMConfig()
    if f is not None:
        cfg = SMMConfig(**{**asdict(cfg), "divergence": str(f)})
    fdiv = get_divergence(cfg.divergence)
    spec = _default_spec(cfg) if reward is None else parse_reward(reward)
    target = np.asarray(target, dtype=float)
    if target.ndim != 2 or target.shape[1] != 2 or len(target) == 0:
        raise ShapeMismatch(f"target must be a nonempty (N, 2) point set, got {target.shape}")

    rng = np.random.default_rng(cfg.seed)
    normalizer = InputNormalizer.fit(target)
    policy = initial_policy or GaussianPolicy(2, 2, cfg.hidden, "tanh", cfg.seed, cfg.init_log_std, normalizer)
    disc = LearnedDiscriminator(2, cfg.disc_hidden, "tanh", cfg.seed + 1, cfg.disc_step_size, normalizer,
                                cfg.logit_clip)
    pg = PolicyGradientConfig(cfg.step_size, cfg.batch_size, cfg.discount, cfg.entropy_weight, True,
                              cfg.min_log_std, cfg.max_log_std)
    optimizer = Adam(cfg.step_size)
    baseline = None
    if cfg.value_baseline:
        baseline = ValueBaseline(2, cfg.hidden, cfg.seed + 2, cfg.value_step_size, cfg.value_steps,
                                 normalizer, cfg.value_batch)
    eval_seed = cfg.seed + 10_000
    report = SMMReport()
    t0 = time.perf_counter()
    initial_js = evaluate_marginal(policy, env, target, cfg.bins, cfg.eval_episodes, eval_seed)
    js = initial_js

    for it in range(cfg.iterations):
        if cfg.lr_decay:
            optimizer.step_size = cfg.step_size * max(cfg.min_lr_fraction, 1.0 - it / cfg.iterations)
        states, actions = env.rollout(policy, cfg.batch_size, rng)
        flat = states.reshape(-1, 2)
        for _ in range(cfg.disc_steps):
            xe = target[rng.integers(0, len(target), cfg.disc_batch)]
            xp = flat[rng.integers(0, len(flat), cfg.disc_batch)]
            loss = disc.train_step(xe, xp, cfg.grad_pen_weight)
        rewards = state_rewards(disc, states, spec)
        if not np.all(np.isfinite(rewards)):
            raise DivergedParameters(f"non-finite rewards at iteration {it}")
        continuous_policy_update(policy, states, actions, rewards, pg, optimizer, baseline)
        last = it == cfg.iterations - 1
        if it % cfg.eval_every == 0 or last:
            js = evaluate_marginal(policy, env, target, cfg.bins, cfg.eval_episodes, eval_seed + it + 1)
        else:
            js = float("nan")
        report.append(
            iter=it,
            divergence=estimated_divergence(fdiv, disc, xe, xp),
            js=js,
            disc_loss=loss,
            mean_reward=float(rewards.mean()),
            log_std=float(policy.log_std.mean()),
            seconds=time.perf_counter() - t0,
        )
        if callback is not None:
            callback(it, policy, disc, report)
    final_js = js if cfg.iterations > 0 else initial_js
    return SMMResult(policy, disc, report, initial_js, final_js)


def continuous_adversarial_il(env: PointMassEnv, demos, spec, cfg=None):
    """Point-mass imitation from demonstrated states with any reward kind.

    ``demos`` is an ``(N, 2)`` array of states or an object with a
    ``states()`` method. The learner is the state-only loop of
    :func:`smm_train`; ``cfg`` may be an :class:`SMMConfig` or an ILConfig
    whose ``iterations`` and ``seed`` are carried over.
    """
    from .imitation import ILResult, TrainReport

    pts = demos.states() if hasattr(demos, "states") else demos
    pts = np.asarray(pts, dtype=float)
    if isinstance(cfg, SMMConfig):
        scfg = cfg
    else:
        scfg = SMMConfig(iterations=getattr(cfg, "iterations", 5000), seed=getattr(cfg, "seed", 0))
    spec = parse_reward(spec)
    if spec.kind is RewardKind.FMAX:
        scfg = SMMConfig(**{**asdict(scfg), "divergence": str(spec.divergence)})
    res = smm_train(env, pts, cfg=scfg, reward=spec)
    report = TrainReport()
    for row in res.report.rows:
        report.append(iter=row["iter"], divergence=row["divergence"], disc_loss=row["disc_loss"], seconds=row["seconds"])
    return ILResult(res.policy, report)


# ---------------------------------------------------------------------------
# persistence


def save_points(points, path) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in pts:
            w.writerow([repr(float(x)), repr(float(y))])


def load_points(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"x", "y"}:
        raise ValueError(f"{path}: expected header 'x,y'")
    return np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)


def save_visited(states, path) -> None:
    """``states`` is ``(T, n_episodes, 2)``; rows are ``episode,t,x,y``."""
    s = np.asarray(states, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "t", "x", "y"])
        for ep in range(s.shape[1]):
            for t in range(s.shape[0]):
                w.writerow([ep, t, repr(float(s[t, ep, 0])), repr(float(s[t, ep, 1]))])


def load_visited(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return np.zeros((0, 0, 2))
    n_ep = max(int(r["episode"]) for r in rows) + 1
    T = max(int(r["t"]) for r in rows) + 1
    out = np.full((T, n_ep, 2), np.nan)
    for r in rows:
        out[int(r["t"]), int(r["episode"])] = (float(r["x"]), float(r["y"]))
    return out
