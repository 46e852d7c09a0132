"""Command-line entry point: ``run``, ``battery`` and ``report`` subcommands."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from ..reflex import ReflexParams
from .config import ConfigError, load_config
from .metrics import format_table, report, run_and_save, run_battery, run_name

COMPARISON_COLUMNS = (
    "scenario", "success_rate_on", "success_rate_off", "mean_trial_time_on", "mean_trial_time_off", "time_reduction",
)
GROUP_COLUMNS = (
    "group", "n_trials", "successes", "user_attempts", "success_rate", "initial_psi_mean", "initial_psi_sd",
    "final_psi_mean", "final_psi_sd", "median_grasp_attempts", "mean_trial_time", "slip_events",
)


def _reflex_flag(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reflexgrasp", description="Teleoperated grasp reflex simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--seed", type=_seed)
    run.add_argument("--out", type=Path, default=Path("out"))
    run.add_argument("--reflexes", type=_reflex_flag)
    run.add_argument("--trace", action="store_true", help="write the per-tick CSV even if the config disables it")

    bat = sub.add_parser("battery", help="seed sweep with reflexes on and off")
    bat.add_argument("--config", required=True, type=Path, nargs="+")
    bat.add_argument("--seed", type=_seed, default=0, help="first seed")
    bat.add_argument("--count", type=int, default=20, help="number of seeds")
    bat.add_argument("--out", type=Path, default=Path("out"))
    bat.add_argument("--reflexes", type=_reflex_flag, help="run only this setting instead of the on/off pair")
    bat.add_argument("--workers", type=int, default=1)

    rep = sub.add_parser("report", help="summarize metrics files")
    rep.add_argument("metrics", nargs="*", type=Path)
    rep.add_argument("--out", type=Path)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed, reflexes=args.reflexes)
    if args.trace:
        cfg = dataclasses.replace(cfg, record_trace=True)
    m = run_and_save(cfg, args.out)
    print(f"{run_name(cfg)}: success={m.success} attempts={m.grasp_attempts} slips={m.slip_events} "
          f"final_psi=({m.final_psi[0]:.3f}, {m.final_psi[1]:.3f})")
    return 0


def _cmd_battery(args) -> int:
    if args.count < 0:
        raise ConfigError("--count must be non-negative")
    configs = [load_config(p) for p in args.config]
    if args.reflexes is not None:
        configs = [c.with_overrides(reflexes=args.reflexes) for c in configs]
    seeds = range(args.seed, args.seed + args.count)
    res = run_battery(configs, seeds, args.out, workers=args.workers, paired=args.reflexes is None)
    groups = [{"group": k, **v} for k, v in res["groups"].items()]
    if groups:
        print(format_table(groups, GROUP_COLUMNS))
    if res["comparison"]:
        print()
        print(format_table(res["comparison"], COMPARISON_COLUMNS))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        summary = {"groups": res["groups"], "comparison": res["comparison"]}
        (args.out / "battery.json").write_text(json.dumps(summary, indent=1, default=str) + "\n")
    return 0


def _cmd_report(args) -> int:
    print(report(args.metrics, args.out, ReflexParams().gamma_mu))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "battery": _cmd_battery, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
