"""Command-line interface: train, eval, verify, score, sweep-rho.

Exit codes: 0 success, 1 configuration/usage error, 2 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .agents import AgentConfig
from .config import apply_overrides, load_config
from .envs import make_env
from .harness import evaluate, final_score, load_agent, read_metrics_csv, run_training
from .verify import SUITE_NAMES, report_to_json, run_suite

__all__ = ["main"]


def _parse_seeds(spec: str) -> list[int]:
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in spec.split(",") if part != ""]


def _load_config(args) -> AgentConfig:
    config = load_config(args.config)
    if args.set:
        config = apply_overrides(config, args.set)
    return config


def _cmd_train(args) -> int:
    config = _load_config(args)
    seeds = _parse_seeds(args.seeds) if args.seeds else [config.seed]
    out = Path(args.out)
    series = {}
    for seed in seeds:
        run_config = dataclasses.replace(config, seed=seed)
        result = run_training(run_config, out)
        series[seed] = result.records
        print(f"seed {seed}: metrics {result.metrics_path} "
              f"score {result.score.per_seed[seed]!r}")
    if series and config.total_iterations > 0:
        score = final_score(series, config.total_iterations)
        (out / "finalscore.json").write_text(score.to_json() + "\n")
        print(f"final score: mean {score.mean!r} std {score.std!r}")
    return 0


def _cmd_eval(args) -> int:
    agent, config = load_agent(args.checkpoint)
    env = make_env(config.env, **config.env_overrides)
    mean, std = evaluate(agent.policy, env, args.episodes, args.seed)
    print(json.dumps({"mean_return": mean, "std_return": std,
                      "episodes": args.episodes}, sort_keys=True))
    return 0


def _cmd_verify(args) -> int:
    results = run_suite(args.suite)
    report = report_to_json(results)
    if args.out:
        Path(args.out).write_text(report + "\n")
    print(report)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{status} {r.name}: trials={r.trials} failures={r.failures} "
              f"worst_slack={r.worst:.3e}", file=sys.stderr)
    return 0 if all(r.passed for r in results) else 2


def _cmd_score(args) -> int:
    series = {}
    for path in args.csv:
        records, meta = read_metrics_csv(path)
        series[int(meta["seed"])] = records
    score = final_score(series, args.total_iterations)
    print(score.to_json())
    return 0


def _cmd_sweep_rho(args) -> int:
    config = _load_config(args)
    seeds = _parse_seeds(args.seeds)
    rhos = [float(r) for r in args.rhos.split(",")]
    out = Path(args.out)
    table = []
    for rho in rhos:
        series = {}
        for seed in seeds:
            run_config = dataclasses.replace(config, rho=rho, seed=seed)
            result = run_training(run_config, out / f"rho{rho:g}")
            series[seed] = result.records
        score = final_score(series, config.total_iterations)
        table.append({"rho": rho, "mean": score.mean, "std": score.std,
                      "per_seed": {str(k): v for k, v in sorted(score.per_seed.items())}})
        print(f"rho {rho:g}: mean {score.mean!r} std {score.std!r}")
    report = json.dumps({"env": config.env, "seeds": seeds, "table": table}, sort_keys=True)
    (out / "rho_sweep.json").write_text(report + "\n")
    print(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tecrl",
        description="Train and verify trajectory-entropy-constrained actor-critic agents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run training from a config file")
    train.add_argument("--config", required=True)
    train.add_argument("--out", default="runs")
    train.add_argument("--seeds", default=None, help="e.g. 0..4 or 0,1,2 (default: config seed)")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    train.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpointed policy")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, default=10)
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=_cmd_eval)

    ver = sub.add_parser("verify", help="run exact verification suites")
    ver.add_argument("--suite", default="all", choices=SUITE_NAMES)
    ver.add_argument("--out", default=None)
    ver.set_defaults(func=_cmd_verify)

    score = sub.add_parser("score", help="recompute the final score from metrics CSVs")
    score.add_argument("--total-iterations", type=int, required=True)
    score.add_argument("csv", nargs="+")
    score.set_defaults(func=_cmd_score)

    sweep = sub.add_parser("sweep-rho", help="final-score grid over entropy scaling factors")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--rhos", default="1,10,20,30")
    sweep.add_argument("--seeds", default="0..4")
    sweep.add_argument("--out", default="runs/rho-sweep")
    sweep.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    sweep.set_defaults(func=_cmd_sweep_rho)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; exit 2 is reserved for
        # verification failures, so usage problems map to 1
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
