"""Command-line entry point: ``fmaxlab <verb> [options]``.

Exit status is 0 on success, 1 when any run failed, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, FmaxLabError, MissingRun
from .harness import (
    ExperimentConfig,
    ExperimentKind,
    emit_plots,
    load_config,
    run_benchmark,
    run_expert_gen,
    run_identity_suite,
    run_smm,
)

log = logging.getLogger("fmaxlab")

VERB_KINDS = {
    "expert-gen": ExperimentKind.EXPERT_GEN,
    "benchmark": ExperimentKind.BENCHMARK,
    "identity-suite": ExperimentKind.IDENTITY_SUITE,
    "smm": ExperimentKind.SMM,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmaxlab", description="Divergence-minimisation imitation laboratory.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in (*VERB_KINDS, "plot"):
        p = sub.add_parser(verb)
        p.add_argument("--config", type=Path, help="TOML experiment file")
        p.add_argument("--seed", type=int, help="run only this seed")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--force", action="store_true", help="rerun runs that already have a record")
        p.add_argument("--no-timing", action="store_true", help="omit wall-clock columns from CSV output")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
        if verb == "identity-suite":
            p.add_argument("--fairl-sign-flip", action="store_true", help=argparse.SUPPRESS)
        if verb == "plot":
            p.add_argument("source", nargs="?", default="reward-shapes",
                           help="an output directory of finished runs, or 'reward-shapes'")
    return parser


def _config(args, kind: ExperimentKind) -> ExperimentConfig:
    overrides = {"seeds": [args.seed] if args.seed is not None else None}
    if args.config is not None:
        cfg = load_config(args.config, overrides)
    else:
        data = {"kind": kind.value, **{k: v for k, v in overrides.items() if v is not None}}
        if kind is ExperimentKind.SMM:
            data["env"] = {"name": "pointmass", "target": "Infinity"}
        cfg = ExperimentConfig.from_dict(data)
    if cfg.kind is not kind:
        raise ConfigError(f"config is a {cfg.kind.value} experiment, not {kind.value}", field="kind")
    return cfg


def _report(records) -> int:
    failed = [r for r in records if r.status != "ok"]
    for r in records:
        print(f"{r.run_id} {r.status} {json.dumps(r.metrics, sort_keys=True)}")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return 2
    timing = not args.no_timing
    try:
        if args.verb == "plot":
            out = args.out or Path("plots")
            for p in emit_plots(None if args.source == "reward-shapes" else args.source, out):
                print(p)
            return 0
        cfg = _config(args, VERB_KINDS[args.verb])
        out = args.out or Path(cfg.out)
        if args.verb == "expert-gen":
            for p in run_expert_gen(cfg, out, args.force):
                print(p)
            return 0
        if args.verb == "benchmark":
            records, summary = run_benchmark(cfg, out, args.force, timing, args.jobs)
            code = _report(records)
            print(summary)
            return code
        if args.verb == "smm":
            return _report(run_smm(cfg, out, args.force, timing, args.jobs))
        report = run_identity_suite(cfg, out, fairl_sign_flip=args.fairl_sign_flip, seed=cfg.seeds[0])
        for e in report["identities"]:
            print(f"{'PASS' if e['passed'] else 'FAIL'} {e['name']} residual={e['residual']:.3g} tol={e['tolerance']:g}")
        return 0 if report["all_passed"] else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingRun as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FmaxLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
