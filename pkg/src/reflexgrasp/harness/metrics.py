"""Trial aggregation, on/off batteries, and report tables."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import ScenarioConfig
from .sim import TRACE_COLUMNS, TrialMetrics, TrialResult, run_scenario


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_trace(path, result: TrialResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(result.header + "\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in result.rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_metrics(path, m: TrialMetrics) -> None:
    Path(path).write_text(json.dumps(_jsonable(m.to_dict()), indent=1) + "\n")


def read_metrics(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"metrics file not found: {path}")
    return json.loads(path.read_text())


def run_name(cfg: ScenarioConfig) -> str:
    return f"{cfg.name}_seed{cfg.seed}_{'on' if cfg.reflexes_enabled else 'off'}"


def run_and_save(cfg: ScenarioConfig, out: Optional[Path]) -> TrialMetrics:
    result = run_scenario(cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if cfg.record_trace:
            write_trace(out / f"{run_name(cfg)}.csv", result)
        write_metrics(out / f"{run_name(cfg)}.metrics.json", result.metrics)
    return result.metrics


# -- statistics ---------------------------------------------------------------


def _as_dict(m) -> dict:
    return m.to_dict() if isinstance(m, TrialMetrics) else m


def _pooled(trials: Sequence[dict], key: str) -> np.ndarray:
    vals = [v for t in trials for v in (t[key] or []) if v is not None and math.isfinite(v)]
    return np.array(vals, dtype=float)


def _mean_sd(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0


def summarize(trials: Iterable) -> dict:
    """Aggregate statistics over a list of trial metrics (objects or dicts)."""
    trials = [_as_dict(t) for t in trials]
    if not trials:
        return {"n_trials": 0}
    successes = sum(bool(t["success"]) for t in trials)
    user_attempts = sum(max(int(t["user_attempts"]), 1) for t in trials)
    per_trial = [(1.0 if t["success"] else 0.0) / max(int(t["user_attempts"]), 1) for t in trials]
    ini_m, ini_sd = _mean_sd(_pooled(trials, "initial_psi"))
    fin_m, fin_sd = _mean_sd(_pooled(trials, "final_psi"))
    times = [t["trial_time"] for t in trials if t["success"] and t.get("trial_time") is not None]
    attempts = [t["grasp_attempts"] for t in trials if t["grasp_attempts"]]
    return {
        "n_trials": len(trials),
        "successes": successes,
        "user_attempts": user_attempts,
        "success_rate": successes / user_attempts,
        "success_rate_per_trial": float(np.mean(per_trial)),
        "initial_psi_mean": ini_m,
        "initial_psi_sd": ini_sd,
        "final_psi_mean": fin_m,
        "final_psi_sd": fin_sd,
        "median_grasp_attempts": float(np.median(attempts)) if attempts else math.nan,
        "mean_trial_time": float(np.mean(times)) if times else math.nan,
        "slip_events": int(sum(t["slip_events"] for t in trials)),
    }


def run_battery(
    configs: Sequence[ScenarioConfig], seeds: Sequence[int], out: Optional[Path] = None, workers: int = 1,
    paired: bool = True,
) -> dict:
    """Run every config over every seed; with ``paired`` each config runs with reflexes on and off.

    Results are folded in seed order so the report is independent of worker count.
    """
    jobs = []
    for cfg in configs:
        variants = (True, False) if paired else (cfg.reflexes_enabled,)
        for flag in variants:
            for seed in seeds:
                jobs.append(cfg.with_overrides(seed=seed, reflexes=flag))
    if not jobs:
        return {"groups": {}, "comparison": []}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            metrics = list(pool.map(run_and_save, jobs, [out] * len(jobs)))
    else:
        metrics = [run_and_save(cfg, out) for cfg in jobs]

    groups: dict[str, list] = {}
    for cfg, m in zip(jobs, metrics):
        groups.setdefault(f"{cfg.name}:{'on' if cfg.reflexes_enabled else 'off'}", []).append(m)
    summary = {k: summarize(sorted(v, key=lambda m: m.seed)) for k, v in groups.items()}
    comparison = []
    for cfg in configs:
        on, off = summary.get(f"{cfg.name}:on"), summary.get(f"{cfg.name}:off")
        if on and off:
            comparison.append({
                "scenario": cfg.name,
                "success_rate_on": on["success_rate"],
                "success_rate_off": off["success_rate"],
                "mean_trial_time_on": on["mean_trial_time"],
                "mean_trial_time_off": off["mean_trial_time"],
                "time_reduction": 1.0 - on["mean_trial_time"] / off["mean_trial_time"]
                if off["mean_trial_time"] and math.isfinite(off["mean_trial_time"]) else math.nan,
            })
    return {"groups": summary, "comparison": comparison, "trials": {k: v for k, v in groups.items()}}


def format_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    def cell(v):
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.3f}"
        return str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


# -- report --------------------------------------------------------------------

SUMMARY_COLUMNS = (
    "name", "seed", "reflexes", "success", "user_attempts", "grasp_attempts", "initial_psi_f", "initial_psi_a",
    "final_psi_f", "final_psi_a", "time_to_secure", "slip_events", "trial_time",
)
GRASP_MAP_COLUMNS = ("name", "seed", "stage", "finger", "rho", "psi")
FORCE_SERIES_COLUMNS = ("name", "seed", "t", "F_t", "F_n", "ratio", "gamma_mu")


def report(paths: Sequence, out: Optional[Path] = None, gamma_mu: float = 0.3125) -> str:
    """Summarize metrics files; optionally write the grasp-map and force-series CSVs."""
    records = [read_metrics(p) for p in paths]
    rows, grasp_map, series = [], [], []
    for r in records:
        ip, fp = r["initial_psi"], r["final_psi"]
        rows.append({
            "name": r["name"], "seed": r["seed"], "reflexes": "on" if r["reflexes"] else "off",
            "success": r["success"], "user_attempts": r["user_attempts"], "grasp_attempts": r["grasp_attempts"],
            "initial_psi_f": ip[0], "initial_psi_a": ip[1], "final_psi_f": fp[0], "final_psi_a": fp[1],
            "time_to_secure": r["time_to_secure"], "slip_events": r["slip_events"], "trial_time": r["trial_time"],
        })
        for stage, key_psi, key_rho in (("initial", "initial_psi", "initial_rho"), ("final", "final_psi", "final_rho")):
            for i, finger in enumerate(("f", "a")):
                if r[key_psi][i] is not None:
                    grasp_map.append((r["name"], r["seed"], stage, finger, r[key_rho][i], r[key_psi][i]))
        for t, ft, fn, ratio in r.get("ratio_trace", []):
            series.append((r["name"], r["seed"], t, ft, fn, ratio, gamma_mu))
    rows = [{k: (math.nan if v is None else v) for k, v in row.items()} for row in rows]
    text = format_table(rows, SUMMARY_COLUMNS)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SUMMARY_COLUMNS)
            w.writerows([[row[c] for c in SUMMARY_COLUMNS] for row in rows])
        with open(out / "grasp_map.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(GRASP_MAP_COLUMNS)
            w.writerows(grasp_map)
        with open(out / "force_series.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(FORCE_SERIES_COLUMNS)
            w.writerows(series)
    return text
