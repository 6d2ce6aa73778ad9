"""Imitation-learning procedures on tabular MDPs.

Behavioural cloning and DAgger fit action conditionals directly. The
adversarial family (GAIL, AIRL, FAIRL and f-MAX with any supported
divergence) alternates a discriminator with a policy improvement step that
maximises the discriminator-derived reward under a maximum-entropy RL solver.

In ``exact`` mode the discriminator is the closed-form optimum computed from
occupancy measures and each policy step solves the soft-optimal control
problem exactly, then mixes the result into the current policy:

    pi <- (1 - damping) * pi + damping * RL(scale * reward + tau * log pi)

The ``tau * log pi`` term makes the step proximal in KL: with a zero reward it
returns the current policy, so the expert is a fixed point of every variant.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .discrim import (
    DEFAULT_LOGIT_CLIP,
    ExactTabularDiscriminator,
    LearnedDiscriminator,
    RewardKind,
    RewardSpec,
    log_sigmoid,
    one_hot_features,
    parse_reward,
)
from .errors import AbsoluteContinuityViolation, ConfigError, EmptyDemos, ShapeMismatch
from .fdiv import FORWARD_KL, JENSEN_SHANNON, REVERSE_KL, eval_divergence, get_divergence
from .nn import Adam
from .softrl import GaussianPolicy, SoftRLConfig, solve_soft
from .tabular import (
    TabularMDP,
    TabularPolicy,
    Trajectory,
    empirical_occupancy,
    expected_return,
    occupancy_measure,
    sample_trajectories,
)

DEFAULT_REWARD_SCALE = {"AIRL": 4.0, "FAIRL": 128.0}
REWARD_SCALE_GRID = {"AIRL": [2.0, 4.0, 8.0, 16.0], "FAIRL": [64.0, 128.0, 196.0, 256.0]}
GRAD_PEN_GRID = {"AIRL": [2.0, 4.0, 8.0, 16.0], "FAIRL": [0.01, 0.05, 0.1, 0.5]}
DEMO_COUNTS = (4, 16, 32)


class Algorithm(str, Enum):
    BC = "BC"
    DAGGER = "DAgger"
    GAIL = "GAIL"
    AIRL = "AIRL"
    FAIRL = "FAIRL"
    FMAX = "FMAX"


def algorithm_family(name) -> Algorithm:
    if isinstance(name, Algorithm):
        return name
    text = str(name).strip()
    if text.upper().startswith("FMAX"):
        return Algorithm.FMAX
    for alg in Algorithm:
        if alg.value.upper() == text.upper():
            return alg
    raise ConfigError(f"unknown algorithm {name!r}", field="algorithm")


# ---------------------------------------------------------------------------
# demonstrations


@dataclass
class DemoSet:
    """Demonstration trajectories after subsampling.

    ``offsets[i]`` is the first retained timestep of trajectory ``i``; retained
    timesteps are ``offset, offset + k, offset + 2k, ...`` for factor ``k``.
    """

    trajectories: list[Trajectory]
    subsample_factor: int = 20
    offsets: list[int] = field(default_factory=list)
    source_policy_id: str = ""

    def __post_init__(self):
        if not self.offsets:
            self.offsets = [0] * len(self.trajectories)
        if len(self.offsets) != len(self.trajectories):
            raise ShapeMismatch("one offset per trajectory is required")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_pairs(self) -> int:
        return int(sum(t.length for t in self.trajectories))

    def states(self) -> np.ndarray:
        return np.concatenate([np.asarray(t.states) for t in self.trajectories])

    def actions(self) -> np.ndarray:
        return np.concatenate([np.asarray(t.actions) for t in self.trajectories])

    def occupancy(self, n_states: int, n_actions: int) -> np.ndarray:
        """Empirical joint frequencies of the retained state-action pairs."""
        if self.n_pairs == 0:
            raise EmptyDemos("demo set has no state-action pairs")
        return empirical_occupancy(self.trajectories, n_states, n_actions)

    def take(self, n: int) -> "DemoSet":
        return DemoSet(self.trajectories[:n], self.subsample_factor, self.offsets[:n], self.source_policy_id)

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w") as fh:
            for tr, off in zip(self.trajectories, self.offsets):
                rec = {
                    "states": np.asarray(tr.states).tolist(),
                    "actions": np.asarray(tr.actions).tolist(),
                    "policy_id": self.source_policy_id,
                    "offset": int(off),
                    "subsample_factor": int(self.subsample_factor),
                    "timesteps": np.asarray(tr.timesteps).tolist(),
                }
                fh.write(json.dumps(rec) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "DemoSet":
        trajs, offsets, factor, pid = [], [], 1, ""
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                trajs.append(Trajectory(rec["states"], rec["actions"], None, rec.get("timesteps"), rec.get("policy_id", "")))
                offsets.append(int(rec.get("offset", 0)))
                factor = int(rec.get("subsample_factor", factor))
                pid = rec.get("policy_id", pid)
        return cls(trajs, factor, offsets, pid)


def subsample(trajectories, factor: int, seed, policy_id: str = "") -> DemoSet:
    """Keep every ``factor``-th step of each trajectory from a random offset in ``[0, factor)``."""
    if factor < 1:
        raise ValueError(f"subsample factor must be >= 1, got {factor}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kept, offsets = [], []
    for tr in trajectories:
        off = int(rng.integers(factor)) if factor > 1 else 0
        if tr.length:
            off = min(off, tr.length - 1)
        idx = np.arange(off, tr.length, factor)
        kept.append(Trajectory(np.asarray(tr.states)[idx], np.asarray(tr.actions)[idx], None, np.asarray(tr.timesteps)[idx], policy_id))
        offsets.append(off)
    return DemoSet(kept, factor, offsets, policy_id)


def generate_demos(mdp: TabularMDP, expert: TabularPolicy, n: int, seed, subsample_factor: int = 20, policy_id: str = "expert") -> DemoSet:
    """Roll out the expert (sampling its actions) and subsample each trajectory."""
    rng = np.random.default_rng(seed)
    trajs = sample_trajectories(mdp, expert, n, rng)
    return subsample(trajs, subsample_factor, rng, policy_id)


# ---------------------------------------------------------------------------
# configuration and reports


@dataclass
class ILConfig:
    """Settings shared by all imitation procedures.

    ``reward_scale`` defaults per algorithm (AIRL 4, FAIRL 128, otherwise 1).
    ``damping`` is the mixing weight of each exact policy step.
    """

    algorithm: str = "AIRL"
    n_demos: int = 4
    reward_scale: float | None = None
    grad_pen_weight: float = 0.0
    gail_entropy_weight: float = 0.0
    iterations: int = 200
    seed: int = 0
    eval_episodes: int = 50
    validation_every: int = 10
    validation_episodes: int = 10
    damping: float = 0.05
    temperature: float = 1.0
    subsample_factor: int = 20
    bc_smoothing: float = 1e-3
    logit_clip: tuple[float, float] | None = DEFAULT_LOGIT_CLIP
    mode: str = "exact"
    init: str = "random"
    dagger_rollouts: int = 4
    disc_steps: int = 20
    disc_batch: int = 64
    disc_step_size: float = 1e-2
    policy_rollouts: int = 16
    bc_steps: int = 2000
    bc_step_size: float = 1e-2

    def __post_init__(self):
        algorithm_family(self.algorithm)
        if self.reward_scale is not None and not self.reward_scale > 0:
            raise ConfigError("must be positive", field="reward_scale")
        if self.grad_pen_weight < 0:
            raise ConfigError("must be nonnegative", field="grad_pen_weight")
        if self.gail_entropy_weight < 0:
            raise ConfigError("must be nonnegative", field="gail_entropy_weight")
        if not 0 < self.damping <= 1:
            raise ConfigError("must lie in (0, 1]", field="damping")
        if self.iterations < 0:
            raise ConfigError("must be nonnegative", field="iterations")
        if self.mode not in ("exact", "sampled"):
            raise ConfigError("must be 'exact' or 'sampled'", field="mode")
        if self.init not in ("random", "uniform"):
            raise ConfigError("must be 'random' or 'uniform'", field="init")
        if self.logit_clip is not None:
            self.logit_clip = tuple(float(x) for x in self.logit_clip)

    @property
    def scale(self) -> float:
        if self.reward_scale is not None:
            return float(self.reward_scale)
        return DEFAULT_REWARD_SCALE.get(algorithm_family(self.algorithm).value, 1.0)

    @property
    def reward_spec(self) -> RewardSpec:
        return parse_reward(self.algorithm)


REPORT_COLUMNS = ("iter", "divergence", "return_det", "return_stoch", "disc_loss", "seconds")


@dataclass
class TrainReport:
    """One row per iteration, plus optional per-iteration snapshots."""

    rows: list[dict] = field(default_factory=list)
    occupancies: list[np.ndarray] = field(default_factory=list)
    policies: list[TabularPolicy] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append({k: row.get(k, float("nan")) for k in REPORT_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def divergences(self) -> np.ndarray:
        return self.column("divergence")

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self, path, timing: bool = True) -> None:
        cols = REPORT_COLUMNS if timing else REPORT_COLUMNS[:-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in cols])

    @classmethod
    def from_csv(cls, path) -> "TrainReport":
        rep = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rep.append(**{k: (int(v) if k == "iter" else float(v)) for k, v in rec.items()})
        return rep


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class ILResult:
    policy: object
    report: TrainReport
    best_policy: object = None
    best_iteration: int = -1
    best_validation: float = float("nan")

    def __iter__(self):
        yield self.policy
        yield self.report


# ---------------------------------------------------------------------------
# evaluation


def evaluate_policy(env, policy, n_episodes: int, mode: str = "Stoch", seed=0) -> tuple[float, float]:
    """Mean and standard deviation of undiscounted episode returns.

    ``Det`` acts with the most likely action (tabular) or the mean action
    (continuous); ``Stoch`` samples from the policy.
    """
    mode = mode.capitalize()
    if mode not in ("Det", "Stoch"):
        raise ValueError(f"mode must be 'Det' or 'Stoch', got {mode!r}")
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    if isinstance(env, TabularMDP):
        pol = policy.greedy() if mode == "Det" else policy
        trajs = sample_trajectories(env, pol, n_episodes, seed)
        returns = np.array([t.total_reward() for t in trajs])
    else:
        returns = env.episode_returns(policy, n_episodes, seed, deterministic=(mode == "Det"))
    return float(returns.mean()), float(returns.std())


def exact_return(mdp: TabularMDP, policy: TabularPolicy, mode: str = "Stoch") -> float:
    pol = policy.greedy() if mode.capitalize() == "Det" else policy
    return expected_return(mdp, pol)


# ---------------------------------------------------------------------------
# behavioural cloning and DAgger


def bc_tabular(states, actions, n_states: int, n_actions: int, smoothing: float = 1e-3) -> TabularPolicy:
    """Smoothed empirical action conditionals; unvisited states get uniform."""
    s = np.asarray(states, dtype=int)
    a = np.asarray(actions, dtype=int)
    counts = np.zeros((n_states, n_actions))
    np.add.at(counts, (s, a), 1.0)
    probs = np.full((n_states, n_actions), 1.0 / n_actions)
    seen = counts.sum(axis=1) > 0
    c = counts[seen] + smoothing
    probs[seen] = c / c.sum(axis=1, keepdims=True)
    return TabularPolicy(probs)


def behavioural_cloning(demos: DemoSet, template, cfg: ILConfig | None = None) -> ILResult:
    """Fit the policy to demonstrated actions by maximum likelihood.

    ``template`` is a :class:`TabularMDP` (or ``(n_states, n_actions)``) for
    tabular demos, or a :class:`GaussianPolicy` that is fitted in place for
    continuous demos.
    """
    cfg = cfg or ILConfig(algorithm="BC")
    if len(demos) == 0 or demos.n_pairs == 0:
        raise EmptyDemos("behavioural cloning needs at least one demonstrated pair")
    report = TrainReport()
    t0 = time.perf_counter()
    if isinstance(template, GaussianPolicy):
        return _bc_continuous(demos, template, cfg, report, t0)
    if isinstance(template, TabularMDP):
        S, A = template.n_states, template.n_actions
    else:
        S, A = template
    policy = bc_tabular(demos.states(), demos.actions(), S, A, cfg.bc_smoothing)
    row = {"iter": 0, "seconds": time.perf_counter() - t0}
    if isinstance(template, TabularMDP):
        row.update(_tabular_metrics(template, policy, demos.occupancy(S, A), Algorithm.BC))
    report.append(**row)
    report.policies.append(policy)
    return ILResult(policy, report, policy, 0)


def _bc_continuous(demos, policy: GaussianPolicy, cfg, report, t0) -> ILResult:
    obs = np.asarray(demos.states(), dtype=float).reshape(-1, policy.obs_dim)
    act = np.asarray(demos.actions(), dtype=float).reshape(-1, policy.act_dim)
    opt = Adam(cfg.bc_step_size)
    n = len(obs)
    for it in range(cfg.bc_steps):
        g = -policy.weighted_log_prob_grad(obs, act, np.full(n, 1.0 / n))
        policy.set_params(opt.step(policy.params, g))
        if it % 100 == 0 or it == cfg.bc_steps - 1:
            nll = float(-np.mean(policy.log_prob(obs, act)))
            report.append(iter=it, divergence=nll, seconds=time.perf_counter() - t0)
    return ILResult(policy, report, policy, cfg.bc_steps - 1)


def dagger(expert: TabularPolicy, mdp: TabularMDP, cfg: ILConfig | None = None, demos: DemoSet | None = None,
           initial_policy: TabularPolicy | None = None) -> ILResult:
    """Dataset aggregation with expert relabelling.

    Each iteration rolls out the current policy, labels every visited state
    with an action sampled from the expert, adds the pairs to the aggregate
    dataset and refits by behavioural cloning. ``report.policies[i]`` is the
    policy used for the rollouts of iteration ``i``.
    """
    cfg = cfg or ILConfig(algorithm="DAgger")
    rng = np.random.default_rng(cfg.seed)
    S, A = mdp.n_states, mdp.n_actions
    states: list[np.ndarray] = []
    actions: list[np.ndarray] = []
    if demos is not None and demos.n_pairs:
        states.append(np.asarray(demos.states(), dtype=int))
        actions.append(np.asarray(demos.actions(), dtype=int))
    if initial_policy is not None:
        policy = initial_policy
    elif states:
        policy = bc_tabular(np.concatenate(states), np.concatenate(actions), S, A, cfg.bc_smoothing)
    else:
        policy = TabularPolicy.uniform(S, A)
    report = TrainReport()
    expert_occ = occupancy_measure(mdp, expert).joint
    t0 = time.perf_counter()
    for it in range(max(cfg.iterations, 1)):
        report.policies.append(policy)
        if cfg.dagger_rollouts > 0:
            trajs = sample_trajectories(mdp, policy, cfg.dagger_rollouts, rng)
            visited = np.concatenate([t.states for t in trajs])
            labels = np.array([rng.choice(A, p=expert.probs[s]) for s in visited], dtype=int)
            states.append(visited)
            actions.append(labels)
        if not states:
            raise EmptyDemos("DAgger has neither demonstrations nor rollouts to fit")
        policy = bc_tabular(np.concatenate(states), np.concatenate(actions), S, A, cfg.bc_smoothing)
        row = _tabular_metrics(mdp, policy, expert_occ, Algorithm.DAGGER)
        report.append(iter=it, seconds=time.perf_counter() - t0, **row)
    report.notes.append(f"aggregate_pairs={sum(len(s) for s in states)}")
    result = ILResult(policy, report, policy, len(report) - 1)
    result.dataset = (np.concatenate(states), np.concatenate(actions))
    return result


# ---------------------------------------------------------------------------
# adversarial imitation


def divergence_for(algorithm, expert_joint, policy_joint) -> float:
    """The divergence between expert and policy occupancies that ``algorithm`` targets.

    AIRL: ``KL(policy || expert)``; FAIRL, BC and DAgger: ``KL(expert || policy)``;
    GAIL: Jensen-Shannon; ``FMAX(f)``: ``D_f(expert || policy)``. Infinite values
    (support mismatch) are reported with clamped density ratios.
    """
    fam = algorithm_family(algorithm)
    if fam is Algorithm.AIRL:
        f = REVERSE_KL
    elif fam is Algorithm.GAIL:
        f = JENSEN_SHANNON
    elif fam is Algorithm.FMAX:
        f = parse_reward(algorithm).divergence
    else:
        f = FORWARD_KL
    try:
        return eval_divergence(f, expert_joint, policy_joint)
    except AbsoluteContinuityViolation:
        return eval_divergence(f, expert_joint, policy_joint, clamp=True)


def _tabular_metrics(mdp, policy, expert_joint, algorithm) -> dict:
    occ = occupancy_measure(mdp, policy).joint
    return {
        "divergence": divergence_for(algorithm, expert_joint, occ),
        "return_det": exact_return(mdp, policy, "Det"),
        "return_stoch": exact_return(mdp, policy, "Stoch"),
    }


def exact_disc_loss(disc: ExactTabularDiscriminator) -> float:
    """Balanced logistic loss ``-(E_exp log D + E_pi log(1 - D)) / 2``."""
    ell = disc.logit_table()
    return float(-0.5 * (np.sum(disc.expert * log_sigmoid(ell)) + np.sum(disc.policy * log_sigmoid(-ell))))


def policy_reward_table(disc, spec: RewardSpec, cfg: ILConfig, policy: TabularPolicy) -> np.ndarray:
    """Scaled discriminator reward plus the GAIL entropy bonus, before the proximal term."""
    reward = cfg.scale * disc.reward_table(spec)
    if spec.kind is RewardKind.GAIL and cfg.gail_entropy_weight > 0:
        reward = reward - cfg.gail_entropy_weight * np.maximum(policy.log_probs(), -700.0)
    return reward


def proximal_step(mdp: TabularMDP, policy: TabularPolicy, reward, cfg: ILConfig) -> tuple[TabularPolicy, bool]:
    """Damped soft-optimal step anchored at ``policy``; returns (new policy, converged)."""
    tau = cfg.temperature
    r = reward + tau * np.maximum(policy.log_probs(), -700.0)
    sol = solve_soft(mdp, r, SoftRLConfig(temperature=tau), raise_on_fail=False)
    converged = sol.residual < 1e-10 * max(1.0, float(np.max(np.abs(sol.v))))
    return policy.mix(sol.policy, cfg.damping), converged


def _initial_policy(mdp, cfg, rng):
    if cfg.init == "uniform":
        return TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    return TabularPolicy.random(mdp.n_states, mdp.n_actions, rng)


def adversarial_il(env, demos, kind=None, cfg: ILConfig | None = None, initial_policy=None) -> ILResult:
    """Alternate discriminator and policy updates for GAIL, AIRL, FAIRL or f-MAX.

    ``demos`` is either a :class:`DemoSet` (its empirical occupancy becomes
    the expert distribution) or an expert occupancy table / measure. Only
    tabular environments are handled here; the continuous point-mass variant
    lives in :mod:`fmaxlab.smm`.
    """
    cfg = cfg or ILConfig()
    if kind is not None:
        cfg = ILConfig(**{**asdict(cfg), "algorithm": str(parse_reward(kind))})
    spec = cfg.reward_spec
    if not isinstance(env, TabularMDP):
        from .smm import continuous_adversarial_il

        return continuous_adversarial_il(env, demos, spec, cfg)
    rng = np.random.default_rng(cfg.seed)
    expert_joint = _expert_joint(env, demos)
    policy = initial_policy if initial_policy is not None else _initial_policy(env, cfg, rng)
    if cfg.mode == "exact":
        return _exact_loop(env, expert_joint, policy, spec, cfg, rng)
    if not isinstance(demos, DemoSet):
        raise ConfigError("sampled mode needs a DemoSet", field="mode")
    return _sampled_loop(env, demos, expert_joint, policy, spec, cfg, rng)


def _expert_joint(mdp, demos) -> np.ndarray:
    if isinstance(demos, DemoSet):
        if demos.n_pairs == 0:
            raise EmptyDemos("adversarial imitation needs demonstrations")
        return demos.occupancy(mdp.n_states, mdp.n_actions)
    joint = np.asarray(getattr(demos, "joint", demos), dtype=float)
    if joint.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeMismatch(f"expert occupancy must be {(mdp.n_states, mdp.n_actions)}")
    if joint.sum() <= 0:
        raise EmptyDemos("expert occupancy is empty")
    return joint / joint.sum()


class _Validator:
    """Tracks the iterate with the best validation return."""

    def __init__(self, mdp, cfg, rng):
        self.mdp, self.cfg = mdp, cfg
        self.seed = int(rng.integers(2**31))
        self.best = -math.inf
        self.best_policy = None
        self.best_iter = -1

    def __call__(self, it, policy):
        cfg = self.cfg
        if cfg.validation_every <= 0 or it % cfg.validation_every:
            return
        score, _ = evaluate_policy(self.mdp, policy, cfg.validation_episodes, "Stoch", self.seed + it)
        if score > self.best:
            self.best, self.best_policy, self.best_iter = score, policy, it


def _exact_loop(mdp, expert_joint, policy, spec, cfg, rng) -> ILResult:
    report = TrainReport()
    validator = _Validator(mdp, cfg, rng)
    t0 = time.perf_counter()
    unconverged = 0
    for it in range(cfg.iterations + 1):
        occ = occupancy_measure(mdp, policy).joint
        disc = ExactTabularDiscriminator(expert_joint, occ, cfg.logit_clip)
        report.occupancies.append(occ)
        report.policies.append(policy)
        validator(it, policy)
        report.append(
            iter=it,
            divergence=divergence_for(cfg.algorithm, expert_joint, occ),
            return_det=exact_return(mdp, policy, "Det"),
            return_stoch=exact_return(mdp, policy, "Stoch"),
            disc_loss=exact_disc_loss(disc),
            seconds=time.perf_counter() - t0,
        )
        if it == cfg.iterations:
            break
        reward = policy_reward_table(disc, spec, cfg, policy)
        policy, ok = proximal_step(mdp, policy, reward, cfg)
        unconverged += not ok
    if unconverged:
        report.notes.append(f"soft solver did not reach tolerance in {unconverged} iterations")
    best = validator.best_policy if validator.best_policy is not None else policy
    return ILResult(policy, report, best, validator.best_iter, validator.best)


def _sampled_loop(mdp, demos, expert_joint, policy, spec, cfg, rng) -> ILResult:
    S, A = mdp.n_states, mdp.n_actions
    disc = LearnedDiscriminator(S + A, seed=cfg.seed, step_size=cfg.disc_step_size, logit_clip=cfg.logit_clip)
    expert_x = one_hot_features(demos.states(), demos.actions(), S, A)
    all_pairs = np.array([(s, a) for s in range(S) for a in range(A)])
    all_x = one_hot_features(all_pairs[:, 0], all_pairs[:, 1], S, A)
    report = TrainReport()
    validator = _Validator(mdp, cfg, rng)
    t0 = time.perf_counter()
    for it in range(cfg.iterations + 1):
        occ = occupancy_measure(mdp, policy).joint
        report.occupancies.append(occ)
        report.policies.append(policy)
        validator(it, policy)
        trajs = sample_trajectories(mdp, policy, cfg.policy_rollouts, rng)
        px = one_hot_features(np.concatenate([t.states for t in trajs]), np.concatenate([t.actions for t in trajs]), S, A)
        losses = []
        for _ in range(cfg.disc_steps):
            eb = expert_x[rng.integers(len(expert_x), size=cfg.disc_batch)]
            pb = px[rng.integers(len(px), size=cfg.disc_batch)]
            losses.append(disc.train_step(eb, pb, cfg.grad_pen_weight))
        report.append(
            iter=it,
            divergence=divergence_for(cfg.algorithm, expert_joint, occ),
            return_det=exact_return(mdp, policy, "Det"),
            return_stoch=exact_return(mdp, policy, "Stoch"),
            disc_loss=float(np.mean(losses)),
            seconds=time.perf_counter() - t0,
        )
        if it == cfg.iterations:
            break
        table = disc.reward(all_x, spec).reshape(S, A)
        reward = cfg.scale * table
        if spec.kind is RewardKind.GAIL and cfg.gail_entropy_weight > 0:
            reward = reward - cfg.gail_entropy_weight * np.maximum(policy.log_probs(), -700.0)
        policy, _ = proximal_step(mdp, policy, reward, cfg)
    best = validator.best_policy if validator.best_policy is not None else policy
    return ILResult(policy, report, best, validator.best_iter, validator.best)


# ---------------------------------------------------------------------------
# conjugate identity


def _maximise_1d(fn, x0: float, lo: float, hi: float, resolution: int, rounds: int = 200) -> tuple[float, float]:
    """Grid search on ``[lo, hi]`` around ``x0``.

    The window doubles while the best grid point sits on its edge and zooms
    in once the maximum is bracketed.
    """
    best_x, best_v = x0, fn(x0)
    half = 1.0
    for _ in range(rounds):
        a = max(lo, best_x - half)
        b = min(hi, best_x + half)
        grid = np.linspace(a, b, resolution)
        vals = np.array([fn(x) for x in grid])
        k = int(np.argmax(vals))
        if vals[k] > best_v:
            best_x, best_v = float(grid[k]), float(vals[k])
        on_edge = (k == 0 and a > lo) or (k == resolution - 1 and b < hi)
        if on_edge:
            half *= 2.0
        else:
            half = (b - a) / (resolution - 1) * 2.0
            if half < 1e-13:
                break
    return best_x, best_v


def psi_conjugate_identity_check(f, expert_occupancy, policy_occupancy, resolution: int = 41, start=None) -> tuple[float, float]:
    """Numerically maximise ``E_pi[c] - E_exp[f*(c)]`` over per-pair costs ``c``.

    Returns ``(maximum found, D_f(policy || expert))``. Coordinate ascent is
    seeded at ``start`` (default: the analytic maximiser ``f'(rho_pi / rho_exp)``)
    and each coordinate is searched on a window of half-width one that zooms
    in around the incumbent; coordinates with zero mass on both sides are
    skipped.
    """
    f = get_divergence(f)
    pe = np.asarray(getattr(expert_occupancy, "joint", expert_occupancy), dtype=float).ravel()
    pp = np.asarray(getattr(policy_occupancy, "joint", policy_occupancy), dtype=float).ravel()
    if pe.shape != pp.shape:
        raise ShapeMismatch("occupancies must share a support")
    if np.any(pe <= 0):
        raise AbsoluteContinuityViolation("expert occupancy must be positive on the support")
    lo, hi = f.conjugate_domain
    eps = 1e-12
    lo = lo + eps if np.isfinite(lo) else -np.inf
    hi = hi - eps if np.isfinite(hi) else np.inf
    if start is None:
        with np.errstate(divide="ignore"):
            c = f.optimal_t(pp / pe)
        c = np.where(np.isfinite(c), c, lo if np.isfinite(lo) else -50.0)
    else:
        c = np.asarray(start, dtype=float).copy()
    c = np.clip(c, lo if np.isfinite(lo) else -np.inf, hi if np.isfinite(hi) else np.inf)
    total = 0.0
    for i in range(c.size):
        def fn(x, i=i):
            if not f.in_domain(x):
                return -np.inf
            return pp[i] * x - pe[i] * float(f.conjugate_unchecked(x))

        window_lo = lo if np.isfinite(lo) else c[i] - 1e6
        window_hi = hi if np.isfinite(hi) else c[i] + 1e6
        c[i], v = _maximise_1d(fn, float(c[i]), window_lo, window_hi, resolution)
        total += v
    return float(total), eval_divergence(f, pp, pe)
