"""Experiment configuration, orchestration, persistence and plots.

An experiment is one TOML document. Grid lists expand into a cartesian
product of runs; every run gets an id derived from its resolved settings and
seed, writes into its own directory, and finishes by atomically writing a
``record.json``. A run whose record already exists with identical settings
is skipped unless ``force`` is set.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np

from .discrim import ExactTabularDiscriminator, reward_from_logit
from .errors import ConfigError, FmaxLabError, MissingRun
from .fdiv import DIVERGENCES, FORWARD_KL, REVERSE_KL, eval_divergence, forward_kl_degeneracy_check, optimal_critic, variational_bound
from .imitation import (
    Algorithm,
    DemoSet,
    ILConfig,
    TrainReport,
    adversarial_il,
    algorithm_family,
    behavioural_cloning,
    dagger,
    evaluate_policy,
    exact_return,
    generate_demos,
    psi_conjugate_identity_check,
)
from .smm import (
    PointMassEnv,
    SMMConfig,
    TargetSampler,
    load_points,
    sample_target,
    save_points,
    save_visited,
    smm_train,
)
from .softrl import SoftRLConfig, solve_soft
from .tabular import TabularPolicy, gridworld, occupancy_measure, random_mdp, trajectory_occupancy_identity_check

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ExperimentKind(str, Enum):
    EXPERT_GEN = "ExpertGen"
    BENCHMARK = "ImitationBenchmark"
    IDENTITY_SUITE = "IdentitySuite"
    SMM = "SMM"


IL_FIELDS = {f.name for f in fields(ILConfig)}
SMM_FIELDS = {f.name for f in fields(SMMConfig)}
SUMMARY_COLUMNS = (
    "algorithm", "n_demos", "setting", "n_seeds",
    "det_mean", "det_std", "stoch_mean", "stoch_std",
    "exact_det_mean", "exact_det_std", "exact_stoch_mean", "exact_stoch_std",
)


@dataclass
class ExperimentConfig:
    """Resolved experiment settings.

    ``env`` describes the environment (``name = "gridworld"`` with ``size``,
    ``horizon``, ``discount``; or ``name = "pointmass"`` with ``target``).
    ``il`` and ``smm`` hold learner settings; ``grid`` maps any of their
    field names to a list of values to sweep.
    """

    kind: ExperimentKind
    env: dict = field(default_factory=lambda: {"name": "gridworld", "size": 5, "horizon": 40, "discount": 0.99})
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    out: str = "runs"
    algorithms: list = field(default_factory=lambda: ["BC", "AIRL", "FAIRL"])
    demo_counts: list = field(default_factory=lambda: [4])
    n_trajectories: int = 32
    subsample_factor: int = 20
    expert_temperature: float = 1.0
    il: dict = field(default_factory=dict)
    smm: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            self.kind = ExperimentKind(self.kind)
        except ValueError:
            choices = ", ".join(k.value for k in ExperimentKind)
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {choices}", field="kind") from None
        if not isinstance(self.seeds, list) or not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("must be a nonempty list of integers", field="seeds")
        if not isinstance(self.env, dict) or "name" not in self.env:
            raise ConfigError("must be a table with a 'name' key", field="env")
        if self.env["name"] not in ("gridworld", "pointmass"):
            raise ConfigError(f"unknown environment {self.env['name']!r}", field="env.name")
        for a in self.algorithms:
            try:
                algorithm_family(a)
            except ValueError as exc:
                raise ConfigError(str(exc), field="algorithms") from None
        if not all(isinstance(n, int) and n > 0 for n in self.demo_counts):
            raise ConfigError("must be positive integers", field="demo_counts")
        if self.n_trajectories < max(self.demo_counts):
            raise ConfigError("must cover the largest demo count", field="n_trajectories")
        if self.subsample_factor < 1:
            raise ConfigError("must be at least 1", field="subsample_factor")
        for name, known in (("il", IL_FIELDS), ("smm", SMM_FIELDS)):
            bad = set(getattr(self, name)) - known
            if bad:
                raise ConfigError(f"unknown keys {sorted(bad)}", field=name)
        for key, values in self.grid.items():
            if key not in IL_FIELDS | SMM_FIELDS:
                raise ConfigError(f"unknown grid key {key!r}", field="grid")
            if not isinstance(values, list) or not values:
                raise ConfigError("grid values must be nonempty lists", field=f"grid.{key}")
        self._validate_learners()

    def _validate_learners(self):
        try:
            ILConfig(**{k: v for k, v in self.il.items() if k != "algorithm"})
        except (TypeError, ConfigError) as exc:
            raise ConfigError(str(exc), field="il") from None
        try:
            SMMConfig(**self.smm)
        except (TypeError, ConfigError, ValueError) as exc:
            raise ConfigError(str(exc), field="smm") from None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", field="<root>")
        if "kind" not in data:
            raise ConfigError("is required", field="kind")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a TOML experiment file; ``overrides`` replace top-level keys."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no such file {path}", field="config") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", field="config") from None
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# runs


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    seed: int
    settings: dict


@dataclass
class RunRecord:
    run_id: str
    config: dict
    report_path: str | None
    metrics: dict
    status: str

    def write(self, directory) -> Path:
        path = Path(directory) / "record.json"
        atomic_write_text(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunRecord":
        with open(path) as fh:
            return cls(**json.load(fh))


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def config_hash(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def expand_grid(cfg: ExperimentConfig, extra_axes: dict | None = None) -> list[RunSpec]:
    """Cartesian product of grid lists (and ``extra_axes``) times seeds."""
    axes = dict(extra_axes or {})
    axes.update(cfg.grid)
    keys = sorted(axes)
    base = {"kind": cfg.kind.value, "env": cfg.env, "il": cfg.il, "smm": cfg.smm,
            "subsample_factor": cfg.subsample_factor, "expert_temperature": cfg.expert_temperature}
    specs = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        point = dict(zip(keys, combo))
        for seed in cfg.seeds:
            settings = {**base, "point": point, "seed": seed}
            specs.append(RunSpec(f"{config_hash(settings)}-s{seed}", seed, settings))
    return specs


def _existing(run_dir: Path, settings: dict) -> RunRecord | None:
    path = run_dir / "record.json"
    if not path.exists():
        return None
    rec = RunRecord.read(path)
    if rec.config == json.loads(json.dumps(settings, default=str)) and rec.status == "ok":
        return rec
    return None


def _execute(task):
    fn, spec, out, force, timing = task
    run_dir = Path(out) / "runs" / spec.run_id
    if not force:
        rec = _existing(run_dir, spec.settings)
        if rec is not None:
            return rec
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        report_path, metrics = fn(spec, run_dir, timing)
        status = "ok"
    except FmaxLabError as exc:
        report_path, metrics, status = None, {"error": f"{type(exc).__name__}: {exc}"}, "failed"
    rec = RunRecord(spec.run_id, json.loads(json.dumps(spec.settings, default=str)), report_path, metrics, status)
    rec.write(run_dir)
    return rec


def _run_all(fn, specs, out, force, timing, jobs) -> list[RunRecord]:
    tasks = [(fn, s, str(out), force, timing) for s in specs]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_execute, tasks))
    return [_execute(t) for t in tasks]


# ---------------------------------------------------------------------------
# environments and experts


def build_gridworld(env: dict):
    return gridworld(int(env.get("size", 5)), env.get("horizon"), float(env.get("discount", 0.99)), env.get("goal"))


def solve_expert(mdp, temperature: float = 1.0) -> TabularPolicy:
    return solve_soft(mdp, cfg=SoftRLConfig(temperature=temperature)).policy


def demos_path(out, seed: int) -> Path:
    return Path(out) / "demos" / f"demos_seed{seed}.jsonl"


def run_expert_gen(cfg: ExperimentConfig, out=None, force: bool = False) -> list[Path]:
    """Solve the expert and write one subsampled DemoSet file per seed."""
    if cfg.env["name"] != "gridworld":
        raise ConfigError("expert generation needs a gridworld environment", field="env.name")
    out = Path(out or cfg.out)
    mdp = build_gridworld(cfg.env)
    expert = solve_expert(mdp, cfg.expert_temperature)
    paths = []
    for seed in cfg.seeds:
        path = demos_path(out, seed)
        if force or not path.exists():
            demos = generate_demos(mdp, expert, cfg.n_trajectories, seed, cfg.subsample_factor)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            demos.save(tmp)
            os.replace(tmp, path)
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# benchmark


def _il_settings(spec: RunSpec) -> dict:
    s = spec.settings
    merged = {**s["il"], **{k: v for k, v in s["point"].items() if k in IL_FIELDS}}
    merged["seed"] = spec.seed
    merged["subsample_factor"] = s["subsample_factor"]
    return merged


def _benchmark_run(spec: RunSpec, run_dir: Path, timing: bool):
    s = spec.settings
    mdp = build_gridworld(s["env"])
    demos = DemoSet.load(s["demos_file"]).take(int(s["point"]["n_demos"]))
    algorithm = algorithm_family(s["point"]["algorithm"])
    il = ILConfig(**{**_il_settings(spec), "algorithm": s["point"]["algorithm"], "n_demos": len(demos)})
    if algorithm is Algorithm.BC:
        result = behavioural_cloning(demos, mdp, il)
    elif algorithm is Algorithm.DAGGER:
        expert = solve_expert(mdp, s["expert_temperature"])
        result = dagger(expert, mdp, il, demos)
    else:
        result = adversarial_il(mdp, demos, cfg=il)
    policy = result.best_policy if result.best_policy is not None else result.policy
    eval_seed = spec.seed + 1_000_003
    det, _ = evaluate_policy(mdp, policy, il.eval_episodes, "Det", eval_seed)
    stoch, _ = evaluate_policy(mdp, policy, il.eval_episodes, "Stoch", eval_seed)
    report_path = run_dir / "report.csv"
    result.report.to_csv(report_path, timing=timing)
    metrics = {
        "return_det": det,
        "return_stoch": stoch,
        "exact_return_det": exact_return(mdp, policy, "Det"),
        "exact_return_stoch": exact_return(mdp, policy, "Stoch"),
        "best_iteration": int(result.best_iteration),
        "final_divergence": float(result.report.divergences[-1]) if len(result.report) else float("nan"),
    }
    return str(report_path), metrics


def run_benchmark(cfg: ExperimentConfig, out=None, force: bool = False, timing: bool = True, jobs: int = 1):
    """Run every (algorithm, demo count, grid point, seed) cell.

    Returns the run records and the path of the summary CSV, which holds the
    across-seed mean and standard deviation of Det and Stoch returns per cell.
    """
    out = Path(out or cfg.out)
    run_expert_gen(cfg, out)
    specs = []
    for spec in expand_grid(cfg, {"algorithm": list(cfg.algorithms), "n_demos": list(cfg.demo_counts)}):
        settings = {**spec.settings, "demos_file": str(demos_path(out, spec.seed))}
        specs.append(RunSpec(spec.run_id, spec.seed, settings))
    records = _run_all(_benchmark_run, specs, out, force, timing, jobs)
    summary = out / "summary.csv"
    write_summary(records, summary)
    return records, summary


def _setting_label(point: dict) -> str:
    rest = {k: v for k, v in point.items() if k not in ("algorithm", "n_demos")}
    return ";".join(f"{k}={rest[k]}" for k in sorted(rest)) or "default"


def write_summary(records, path) -> None:
    cells: dict = {}
    for rec in records:
        if rec.status != "ok":
            continue
        p = rec.config["point"]
        key = (p["algorithm"], int(p["n_demos"]), _setting_label(p))
        cells.setdefault(key, []).append(rec.metrics)
    rows = []
    for (alg, n, label), ms in sorted(cells.items()):
        row = [alg, n, label, len(ms)]
        for name in ("return_det", "return_stoch", "exact_return_det", "exact_return_stoch"):
            v = np.array([m[name] for m in ms])
            row += [f"{v.mean():.6f}", f"{v.std():.6f}"]
        rows.append(row)
    lines = [",".join(SUMMARY_COLUMNS)] + [",".join(str(x) for x in r) for r in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# identity suite


def _entry(name, residual, tolerance, extra=None):
    e = {"name": name, "residual": float(residual), "tolerance": float(tolerance),
         "passed": bool(np.isfinite(residual) and residual <= tolerance)}
    if extra:
        e.update(extra)
    return e


def _random_pairs(rng, n, size):
    return [(rng.dirichlet(np.ones(size)), rng.dirichlet(np.ones(size))) for _ in range(n)]


def reward_identity_residuals(kind: str, n_policies: int = 20, seed: int = 0, sign_flip: bool = False) -> np.ndarray:
    """``|E_policy[reward] - target|`` on the 5x5 gridworld for random policies.

    ``AIRL`` compares with ``-KL(policy || expert)``, ``FAIRL`` with
    ``-KL(expert || policy)``; the exact discriminator is unclipped.
    ``sign_flip`` negates the reward, a mutation that must break the check.
    """
    mdp = gridworld(5)
    expert = solve_expert(mdp)
    rho_e = occupancy_measure(mdp, expert).joint
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_policies):
        pi = TabularPolicy.random(mdp.n_states, mdp.n_actions, rng)
        rho_p = occupancy_measure(mdp, pi).joint
        disc = ExactTabularDiscriminator(rho_e, rho_p, logit_clip=None)
        r = reward_from_logit(disc.logit_table(), kind)
        if sign_flip:
            r = -r
        value = float(np.sum(rho_p * r))
        if kind == "AIRL":
            target = -eval_divergence(FORWARD_KL, rho_p.ravel(), rho_e.ravel())
        else:
            target = -eval_divergence(FORWARD_KL, rho_e.ravel(), rho_p.ravel())
        out.append(abs(value - target))
    return np.array(out)


def run_identity_suite(cfg: ExperimentConfig | None = None, out=None, fairl_sign_flip: bool = False, seed: int = 0) -> dict:
    """Evaluate every closed-form identity; returns and writes a JSON report."""
    rng = np.random.default_rng(seed)
    entries = []

    pairs = _random_pairs(rng, 100, 6)
    for name, f in DIVERGENCES.items():
        worst_gap, worst_excess = 0.0, -math.inf
        for p, q in pairs:
            exact = eval_divergence(f, p, q)
            t_star = optimal_critic(f, p, q)
            worst_gap = max(worst_gap, abs(variational_bound(f, p, q, t_star) - exact))
            t = t_star + rng.normal(0, 0.1, t_star.shape)
            t = np.where(f.in_domain(t), t, t_star)
            worst_excess = max(worst_excess, variational_bound(f, p, q, t) - exact)
        entries.append(_entry(f"variational_bound_tight[{name}]", worst_gap, 1e-9))
        entries.append(_entry(f"variational_bound_below[{name}]", max(worst_excess, 0.0), 0.0))

    dev = max(abs(forward_kl_degeneracy_check(p, q) - 1.0) for p, q in _random_pairs(rng, 100, 10))
    entries.append(_entry("forward_kl_degeneracy", dev, 1e-9))

    entries.append(_entry("airl_reverse_kl", reward_identity_residuals("AIRL", seed=seed).max(), 1e-9))
    entries.append(_entry("fairl_forward_kl", reward_identity_residuals("FAIRL", seed=seed, sign_flip=fairl_sign_flip).max(), 1e-9))

    for f in (REVERSE_KL, FORWARD_KL):
        worst = 0.0
        for size in (2, 3):
            for p, q in _random_pairs(rng, 3, size):
                # neutral start: the critic value at density ratio one
                start = np.full(size, float(f.optimal_t(1.0)))
                best, exact = psi_conjugate_identity_check(f, p, q, start=start)
                worst = max(worst, abs(best - exact))
        entries.append(_entry(f"psi_conjugate[{f}]", worst, 1e-3))

    for mode in ("finite", "discounted"):
        worst_z = 0.0
        for k in range(10):
            mdp = random_mdp(4, 3, seed=seed + k, horizon=6 if mode == "finite" else None)
            pi = TabularPolicy.random(mdp.n_states, mdp.n_actions, rng)
            h = rng.normal(size=(mdp.n_states, mdp.n_actions))
            chk = trajectory_occupancy_identity_check(mdp, pi, h, 4000, seed + k, mode)
            worst_z = max(worst_z, abs(chk.z_score))
        entries.append(_entry(f"trajectory_occupancy[{mode}]", worst_z, 3.0))

    report = {"identities": entries, "all_passed": all(e["passed"] for e in entries)}
    if out is not None:
        atomic_write_text(Path(out) / "identity_report.json", json.dumps(report, indent=2) + "\n")
    return report


# ---------------------------------------------------------------------------
# state-marginal matching


def target_sampler(env: dict) -> TargetSampler:
    kind = env.get("target", "Infinity")
    if kind == "Infinity":
        return TargetSampler.infinity(env.get("r", 12.0), env.get("noise_scale", 0.3), env.get("num_points", 4000))
    if kind == "Spiral":
        return TargetSampler.spiral(env.get("num_rotations", 2.0), env.get("radius", 16.0),
                                    env.get("noise_scale", 0.3), env.get("num_points", 16000))
    raise ConfigError(f"unknown target {kind!r}", field="env.target")


def _smm_run(spec: RunSpec, run_dir: Path, timing: bool):
    s = spec.settings
    sampler = target_sampler(s["env"])
    env = PointMassEnv(int(s["env"].get("horizon", sampler.horizon)), float(s["env"].get("start_noise", 0.1)))
    settings = {**s["smm"], **{k: v for k, v in s["point"].items() if k in SMM_FIELDS}, "seed": spec.seed}
    target = sample_target(sampler, spec.seed)
    result = smm_train(env, target, cfg=SMMConfig(**settings))
    save_points(target, run_dir / "target.csv")
    states, _ = env.rollout(result.policy, 50, np.random.default_rng(spec.seed + 7))
    save_visited(states, run_dir / "visited.csv")
    report_path = run_dir / "report.csv"
    result.report.to_csv(report_path, timing=timing)
    return str(report_path), {"initial_js": result.initial_js, "final_js": result.final_js}


def run_smm(cfg: ExperimentConfig, out=None, force: bool = False, timing: bool = True, jobs: int = 1) -> list[RunRecord]:
    if cfg.env["name"] != "pointmass":
        raise ConfigError("SMM needs the pointmass environment", field="env.name")
    target_sampler(cfg.env)
    return _run_all(_smm_run, expand_grid(cfg), Path(out or cfg.out), force, timing, jobs)


# ---------------------------------------------------------------------------
# plots


def reward_shape_curves(logits=None) -> dict:
    """Reward as a function of the logit for AIRL, GAIL and FAIRL."""
    ell = np.linspace(-5.0, 5.0, 1001) if logits is None else np.asarray(logits, dtype=float)
    return {"logit": ell, **{k: reward_from_logit(ell, k) for k in ("AIRL", "GAIL", "FAIRL")}}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "fmaxlab"
    return plt


def _save_svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def emit_reward_shapes(out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    c = reward_shape_curves()
    csv_path = out / "reward_shapes.csv"
    lines = ["logit,AIRL,GAIL,FAIRL"] + [
        f"{a!r},{b!r},{d!r},{e!r}" for a, b, d, e in zip(*(c[k].tolist() for k in ("logit", "AIRL", "GAIL", "FAIRL")))
    ]
    atomic_write_text(csv_path, "\n".join(lines) + "\n")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for k in ("AIRL", "GAIL", "FAIRL"):
        ax.plot(c["logit"], c[k], label=k)
    ax.set_xlabel("logit")
    ax.set_ylabel("reward")
    ax.set_ylim(-6, 3)
    ax.axhline(0, color="0.7", lw=0.5)
    ax.legend()
    svg = out / "reward_shapes.svg"
    _save_svg(fig, svg)
    plt.close(fig)
    return [csv_path, svg]


def emit_divergence_curves(report_paths, out, labels=None) -> Path:
    if not report_paths:
        raise MissingRun("no reports to plot")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, p in enumerate(report_paths):
        if not Path(p).exists():
            raise MissingRun(f"report {p} does not exist")
        rep = TrainReport.from_csv(p)
        ax.plot(rep.column("iter"), rep.divergences, label=labels[i] if labels else Path(p).parent.name)
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("divergence")
    ax.legend(fontsize=6)
    path = Path(out) / "divergence.svg"
    path.parent.mkdir(parents=True, exist_ok=True)
    _save_svg(fig, path)
    plt.close(fig)
    return path


def emit_smm_marginal(target, visited, out, name: str = "smm_marginal.svg") -> Path:
    target = np.asarray(target).reshape(-1, 2)
    visited = np.asarray(visited).reshape(-1, 2)
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharex=True, sharey=True)
    axes[0].scatter(target[:, 0], target[:, 1], s=1, alpha=0.4, label="target")
    axes[0].scatter(visited[:, 0], visited[:, 1], s=1, alpha=0.2, label="policy")
    axes[0].legend(markerscale=8)
    axes[1].hist2d(visited[:, 0], visited[:, 1], bins=40)
    axes[1].set_title("policy visitation")
    path = Path(out) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    _save_svg(fig, path)
    plt.close(fig)
    return path


def emit_plots(source, out) -> list[Path]:
    """Plots for a finished output directory, or the analytic reward shapes.

    ``source`` is ``"reward-shapes"`` or a directory produced by
    ``run_benchmark`` / ``run_smm``.
    """
    out = Path(out)
    paths = emit_reward_shapes(out)
    if source in (None, "reward-shapes"):
        return paths
    root = Path(source) / "runs"
    if not root.is_dir():
        raise MissingRun(f"no runs under {source}")
    records = sorted(root.glob("*/record.json"))
    if not records:
        raise MissingRun(f"no finished runs under {source}")
    reports, labels = [], []
    for rp in records:
        rec = RunRecord.read(rp)
        if rec.status != "ok" or rec.report_path is None:
            continue
        run_dir = rp.parent
        if (run_dir / "target.csv").exists():
            from .smm import load_visited

            paths.append(emit_smm_marginal(load_points(run_dir / "target.csv"), load_visited(run_dir / "visited.csv"),
                                           out, f"smm_{rec.run_id}.svg"))
        else:
            reports.append(rec.report_path)
            p = rec.config.get("point", {})
            labels.append(f"{p.get('algorithm', '')} n={p.get('n_demos', '')} s={rec.config.get('seed')}")
    if reports:
        paths.append(emit_divergence_curves(reports, out, labels))
    return paths
