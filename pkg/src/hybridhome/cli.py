"""Command line front end.

Subcommands:

* ``run CONFIG``        run the configured experiments, write metrics/traces
* ``validate CONFIG``   check a config without running anything
* ``rules dump STORE``  print a persisted rule store as raw JSON
* ``rules show STORE``  print a persisted rule store as readable rule blocks
* ``replay TRACE``      summarize a JSON-lines trace and recompute metrics
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, ContractError
from .harness import accuracy_metrics, load_config, read_trace, run_experiment
from .rules import RuleStore, render_existing_rule, render_rule


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridhome",
        description="Hybrid rule-based / learned smart home control simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiments in a config file")
    p_run.add_argument("config", help="path to the experiment config (JSON)")
    p_run.add_argument("--out", help="override the configured output directory")
    p_run.add_argument("--quiet", action="store_true", help="suppress progress lines")

    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("config", help="path to the experiment config (JSON)")

    p_rules = sub.add_parser("rules", help="inspect a persisted rule store")
    rules_sub = p_rules.add_subparsers(dest="rules_command", required=True)
    for name, help_text in (("dump", "print the store as raw JSON"),
                            ("show", "print the store as readable rules")):
        p = rules_sub.add_parser(name, help=help_text)
        p.add_argument("store", help="path to a rule store JSON file")

    p_replay = sub.add_parser("replay", help="summarize a JSON-lines trace")
    p_replay.add_argument("trace", help="path to a trace written by `run`")
    p_replay.add_argument("--window", type=int, default=None,
                          help="evaluation window (default: last 20%% of steps)")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)

    def progress(entry):
        if not args.quiet:
            line = " ".join(f"{k}={v:.3f}" for k, v in sorted(entry.metrics.items()))
            print(f"[{entry.variant} seed={entry.seed}] {line} "
                  f"({entry.wall_clock_s:.1f}s)")

    report = run_experiment(cfg, out_dir=args.out, progress=progress)
    print(f"metrics written to {report.csv_path}")
    return 0


def _cmd_validate(args) -> int:
    load_config(args.config)
    print(f"{args.config}: OK")
    return 0


def _cmd_rules(args) -> int:
    try:
        store = RuleStore.load(args.store)
    except FileNotFoundError:
        raise ConfigError(f"rule store not found: {args.store}") from None
    if args.rules_command == "dump":
        print(json.dumps(store.to_dict(), indent=2, sort_keys=True))
        return 0
    for rule in store.existing:
        print(render_existing_rule(rule))
    for rule in store.extracted:
        print(render_rule(rule))
    if not store.existing and not store.extracted:
        print("(store is empty)")
    return 0


def _cmd_replay(args) -> int:
    try:
        records = read_trace(args.trace)
    except FileNotFoundError:
        raise ConfigError(f"trace not found: {args.trace}") from None
    if not records:
        raise ConfigError(f"trace {args.trace} holds no records")
    service_ids = sorted({sid for rec in records for sid in rec.rewards})
    steps = len(records)
    window = args.window if args.window is not None else max(1, int(round(steps * 0.2)))
    extraction = sum(1 for r in records for e in r.rule_events if e["event"] == "extracted")
    deletion = sum(1 for r in records for e in r.rule_events if e["event"] == "deleted")
    print(f"trace: {steps} steps, services: {', '.join(service_ids)}")
    print(f"rule events: {extraction} extractions, {deletion} deletions")
    metrics = accuracy_metrics(records, window, service_ids)
    for key in sorted(metrics):
        print(f"  {key} (last {window} steps): {metrics[key]:.4f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "validate": _cmd_validate,
                "rules": _cmd_rules, "replay": _cmd_replay}
    try:
        return handlers[args.command](args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
