"""Command-line entry point: ``mumimo-sched {train,finetune,eval,bench,oracle-check}``.

Exit status is 0 on success, 1 on runtime errors and 2 on bad configuration.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from .agents import AgentSpec, build_network
from .env_model import EnvConfig
from .errors import ConfigError, SchedError
from .evaluation import (BaselinePolicy, NetworkPolicy, OraclePolicy, RandomPolicy, bench_latency,
                         evaluate)
from .features import feature_size
from .persistence import config_text, load_config, load_network, save_checkpoint
from .training import fine_tune, train

log = logging.getLogger("mumimo_sched")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _write_csv(path: Path, rows) -> None:
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})


def _seeded(cfg, seed):
    return cfg if seed is None else dataclasses.replace(cfg, seed=seed)


def _load_policies(paths, env: EnvConfig):
    policies = []
    for path in paths:
        net = load_network(path, env)
        policies.append(NetworkPolicy(net, name=f"{net.variant}:{Path(path).stem}"))
    return policies


def _report_text(report, title: str) -> str:
    lines = [title, f"states {report.n_states} (excluded {report.n_excluded}), digest {report.state_digest[:16]}"]
    for p in report.policies.values():
        lines.append(f"  {p.name:<32s} reward {p.mean_reward:8.4f}  vs baseline {p.mean_ratio_pct:7.2f}%  "
                     f"params {p.parameter_count}")
    return "\n".join(lines) + "\n"


def cmd_train(args, env, spec, tcfg, out: Path) -> int:
    tcfg = _seeded(tcfg, args.seed)
    result = train(env, spec, tcfg, log_path=out / "train_log.csv")
    save_checkpoint(out / "checkpoint.bin", result.net, env)
    (out / "config.ini").write_text(config_text(env, spec, tcfg))
    text = f"trained {spec.variant}, {result.net.n_params} parameters, final validation {result.final_validation:.4f}\n"
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_finetune(args, env, spec, tcfg, out: Path) -> int:
    if not args.checkpoint:
        raise ConfigError("checkpoint: finetune needs --checkpoint")
    net = load_network(args.checkpoint[0], env)
    tcfg = _seeded(tcfg, args.seed)
    result = fine_tune(net, env, tcfg, log_path=out / "finetune_log.csv")
    save_checkpoint(out / "checkpoint.bin", result.net, env)
    text = f"fine-tuned {net.variant}, final validation {result.final_validation:.4f}\n"
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args, env, spec, tcfg, out: Path) -> int:
    seed = tcfg.validation_seed if args.seed is None else args.seed
    policies = [BaselinePolicy(), RandomPolicy(seed)] + _load_policies(args.checkpoint, env)
    report = evaluate(policies, env, args.n_states, seed)
    _write_csv(out / "eval_summary.csv", report.summary_rows())
    _write_csv(out / "eval_cdf.csv", report.cdf_rows())
    text = _report_text(report, "relative performance over the traditional baseline")
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args, env, spec, tcfg, out: Path) -> int:
    seed = 0 if args.seed is None else args.seed
    policies = _load_policies(args.checkpoint, env)
    if not policies:
        # untrained networks time the same as trained ones
        n_actions = env.action_table().n_actions
        for variant in ("action_branching", "unibranch", "gnn"):
            s = dataclasses.replace(spec, variant=variant)
            net = build_network(s, env.n_subbands, n_actions, feature_size(env.n_users), seed=seed)
            policies.append(NetworkPolicy(net))
    rows = bench_latency(policies, env, n_runs=args.n_runs, seed=seed)
    _write_csv(out / "latency.csv", ({"policy": r.name, "median_s": r.median_s, "relative": r.relative}
                                     for r in rows))
    text = "".join(f"{r.name:<32s} {1e3 * r.median_s:9.3f} ms  x{r.relative:.2f}\n" for r in rows)
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle_check(args, env, spec, tcfg, out: Path) -> int:
    seed = tcfg.validation_seed if args.seed is None else args.seed
    policies = [OraclePolicy(), BaselinePolicy(), RandomPolicy(seed)] + _load_policies(args.checkpoint, env)
    report = evaluate(policies, env, args.n_states, seed)
    oracle = report["oracle"].mean_reward
    rows = [{"policy": p.name, "mean_reward": p.mean_reward,
             "oracle_ratio_pct": 100.0 * p.mean_reward / oracle if oracle > 0 else float("nan")}
            for p in report.policies.values()]
    _write_csv(out / "oracle_check.csv", rows)
    text = "".join(f"{r['policy']:<32s} reward {r['mean_reward']:8.4f}  of oracle {r['oracle_ratio_pct']:7.2f}%\n"
                   for r in rows)
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mumimo-sched", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI file with [env], [agent], [train] sections")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--checkpoint", action="append", default=[], help="trained network (repeatable)")
        p.add_argument("--verbose", "-v", action="store_true")
        if name in ("eval", "oracle-check"):
            p.add_argument("--n-states", type=int, default=1000)
        if name == "bench":
            p.add_argument("--n-runs", type=int, default=300)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        env, spec, tcfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, env, spec, tcfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchedError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
