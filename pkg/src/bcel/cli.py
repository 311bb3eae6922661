"""Command-line driver: ``bcel {generate,run,audit,reproduce-example}``.

Exit codes: 0 success, 1 audit failures beyond the allowed rate, 2 usage or I/O error.
The worker count comes from the ``BCEL_WORKERS`` environment variable.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import sample_dataset, save_dataset
from .experiments import (TRIAL, ExperimentConfig, _seq, audit_csv, instance_for, result_rows,
                          results_csv, sweep)
from .function_classes import serialize_function_class
from .game import save_game
from .policies import save_policy_class
from .validation import FormatError

EXIT_OK, EXIT_AUDIT, EXIT_USAGE = 0, 1, 2


def _parse_grid(text):
    try:
        return tuple(int(float(x)) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid n-grid {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcel", description="Offline equilibrium learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "run", "audit", "reproduce-example"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--variant", choices=("q", "v", "zerosum"))
        p.add_argument("--eq", choices=("NE", "CE", "CCE"))
        p.add_argument("--threshold-mode", choices=("theoretical", "calibrated"))
        p.add_argument("--trials", type=int)
        p.add_argument("--n-grid", type=_parse_grid, help="comma-separated sample sizes")
    return parser


def load_config(args) -> ExperimentConfig:
    record = {}
    if args.config is not None:
        record = json.loads(args.config.read_text())
        if not isinstance(record, dict):
            raise ValueError("config must be a JSON object")
    if args.command == "reproduce-example":
        record.setdefault("game", "builtin:matrix-example")
        record.setdefault("n_grid", [100, 1000, 10000, 100000])
        record.setdefault("trials", 100)
    overrides = {"seed": args.seed, "variant": args.variant, "equilibrium": args.eq,
                 "threshold_mode": args.threshold_mode, "trials": args.trials, "n_grid": args.n_grid}
    record.update({k: v for k, v in overrides.items() if v is not None})
    if args.out is not None:
        record["out"] = str(args.out)
    return ExperimentConfig.from_dict(record)


def cmd_generate(config: ExperimentConfig) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    inst = instance_for(config, 0)
    save_game(inst.game, out / "game.json")
    save_policy_class(inst.policy_class, out / "policy_class.json")
    for fc in inst.classes:
        (out / f"function_class_{fc.player}.json").write_text(serialize_function_class(fc))
    for j, n in enumerate(config.n_grid):
        ds = sample_dataset(inst.game, inst.dist, n, seed=_seq(config, TRIAL, 0, j),
                            reward_noise=config.reward_noise)
        save_dataset(ds, out / f"dataset_trial0_n{n}.txt")
    (out / "config.json").write_text(config.to_json() + "\n")
    print(f"wrote instance files to {out}")
    return EXIT_OK


def _summaries(config, outcomes):
    for row in result_rows(config, outcomes):
        if row["kind"] == "summary":
            print(f"n={row['n']} sandwich_frequency={row['sandwich_frequency']:.3f} "
                  f"median_selected_gap={row['median_selected_gap']:.4f} failures={row['failures']}")


def cmd_run(config: ExperimentConfig, name: str = "results.csv") -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    outcomes = sweep(config, audit=False)
    (out / name).write_text(results_csv(config, outcomes))
    _summaries(config, outcomes)
    return EXIT_OK


def cmd_audit(config: ExperimentConfig) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    text, summary = audit_csv(config)
    (out / "audit.csv").write_text(text)
    print(f"trials={summary.trials} sandwich_failures={summary.sandwich_failures} "
          f"audit_failures={summary.audit_failures} p_value={summary.p_value:.3g} "
          f"-> {'pass' if summary.passed else 'fail'}")
    return EXIT_OK if summary.passed else EXIT_AUDIT


def cmd_reproduce_example(config: ExperimentConfig) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    outcomes = sweep(config, audit=False)
    (out / "example.csv").write_text(results_csv(config, outcomes))
    _summaries(config, outcomes)
    for n in config.n_grid:
        picks = [o.selected for o in outcomes if o.n == n and not o.error]
        share = float(np.mean([p == 0 for p in picks])) if picks else float("nan")
        print(f"n={n} selected (a1,b1) in {share:.0%} of trials")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "audit": cmd_audit,
            "reproduce-example": cmd_reproduce_example}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
        return COMMANDS[args.command](config)
    except (ValueError, FormatError, OSError, json.JSONDecodeError) as exc:
        print(f"bcel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
