"""``mmimo`` command line: run, compare, sweep and selftest.

Exit codes: 0 success, 1 runtime or check failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .campaign import (
    KPIS,
    PRESETS,
    ScenarioConfig,
    compare,
    default_workers,
    preset,
    run_campaign,
    sweep,
)
from .powermodel import PowerParams

METRIC_COLUMNS = ("drop_index",) + KPIS
SWEEP_DEVICES = (250, 500, 1000, 2000)


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


def fmt(v) -> str:
    """Locale-independent 9-significant-digit rendering used in every CSV."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".9g")


# --- config -----------------------------------------------------------------

_FIELD_TYPES = {
    "name": str, "mobile": bool, "antenna_selection": bool, "pilot_aware": bool,
    "pilot_strategy": str, "combiner": str, "scheduler": str,
}
_INT_FIELDS = {
    "n_antennas", "n_devices", "tau_p", "tau_c", "qlearning_episodes", "n_rf",
    "pilot_period", "max_streams", "drops", "master_seed",
}


def _check_type(key: str, value, expected):
    if expected is bool:
        ok = isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ConfigError(key, f"expected {expected.__name__}, got {type(value).__name__}")


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Build a config from parsed JSON, rejecting unknown keys.

    An optional ``"preset"`` key selects the starting point; every other key
    overrides one :class:`ScenarioConfig` field (``"power"`` is a nested object).
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "top level must be a JSON object")
    known = {f.name for f in fields(ScenarioConfig)}
    base_name = raw.get("preset")
    if base_name is not None:
        if base_name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {base_name!r}")
        base = preset(base_name)
    else:
        base = ScenarioConfig()
    changes = {}
    for key, value in raw.items():
        if key == "preset":
            continue
        if key not in known:
            raise ConfigError(key, "unknown key")
        if key == "power":
            if not isinstance(value, dict):
                raise ConfigError("power", "expected an object")
            pk = {f.name for f in fields(PowerParams)}
            for sub, v in value.items():
                if sub not in pk:
                    raise ConfigError(f"power.{sub}", "unknown key")
                _check_type(f"power.{sub}", v, float)
            try:
                changes["power"] = PowerParams(**{**base.power.to_dict(), **value})
            except ValueError as exc:
                raise ConfigError("power", str(exc)) from None
            continue
        expected = _FIELD_TYPES.get(key, int if key in _INT_FIELDS else float)
        _check_type(key, value, expected)
        changes[key] = value
    try:
        return base.with_(**changes)
    except ValueError as exc:
        # name the first offending key we can find in the message, else the whole object
        bad = next((k for k in changes if k in str(exc)), ",".join(changes) or "<root>")
        raise ConfigError(bad, str(exc)) from None


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(raw)


def config_digest(cfg: ScenarioConfig) -> str:
    """sha256 of the canonical JSON form (sorted keys, compact separators)."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()


# --- writers ----------------------------------------------------------------

def write_metrics(path: Path, report) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for d in report.drops:
            w.writerow([fmt(getattr(d, c)) for c in METRIC_COLUMNS])


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="ascii")


def _latency_export(report) -> list[dict]:
    return [
        {
            "drop_index": d.drop_index,
            "mean_ms": d.mean_latency_ms,
            "p50_ms": d.latency_p50_ms,
            "p95_ms": d.latency_p95_ms,
            "jitter_iqr_ms": d.jitter_ms,
        }
        for d in report.drops
    ]


def write_manifest(out: Path, configs, outputs, started: float) -> None:
    _json_dump(out / "manifest.json", {
        "tool_version": __version__,
        "scenarios": [
            {"name": c.name, "config_digest": config_digest(c), "master_seed": c.master_seed, "config": c.to_dict()}
            for c in configs
        ],
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": sorted(outputs),
    })


# --- commands ---------------------------------------------------------------

def _resolve(args, name: str | None = None) -> ScenarioConfig:
    if name is not None:
        cfg = preset(name)
    elif getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    else:
        raise ConfigError("<args>", "give a config file or --preset")
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.drops is not None:
        if args.drops < 1:
            raise ConfigError("drops", "must be >= 1")
        changes["drops"] = args.drops
    return cfg.with_(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    report = run_campaign(cfg, cfg.drops, args.workers)
    write_metrics(out / "metrics.csv", report)
    summary = report.summary()
    summary["anova"] = None
    summary["latency_distribution"] = _latency_export(report)
    _json_dump(out / "summary.json", summary)
    write_manifest(out, [cfg], ["metrics.csv", "summary.json", "manifest.json"], started)
    print(f"{cfg.name}: {len(report.drops)} drops -> {out}")
    for k in KPIS:
        print(f"  {k:16s} {fmt(report.means[k]):>14s} +/- {fmt(report.ci95[k])}")
    return 0


def cmd_compare(args) -> int:
    names = [n.strip() for n in args.presets.split(",") if n.strip()]
    if len(names) < 2:
        raise ConfigError("presets", "comparison needs at least two presets")
    for n in names:
        if n not in PRESETS:
            raise ConfigError("presets", f"unknown preset {n!r}")
    if len(set(names)) != len(names):
        raise ConfigError("presets", "duplicate preset")
    configs = [_resolve(args, n) for n in names]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    reports, anova = compare(configs, None, args.workers)
    outputs = ["compare.csv", "anova.json", "summary.json", "manifest.json"]
    for r in reports:
        fname = f"metrics_{r.name}.csv"
        write_metrics(out / fname, r)
        outputs.append(fname)
    with open(out / "compare.csv", "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["kpi"]
        for r in reports:
            header += [f"{r.name}_mean", f"{r.name}_ci95"]
        w.writerow(header)
        for k in KPIS:
            row = [k]
            for r in reports:
                row += [fmt(r.means[k]), fmt(r.ci95[k])]
            w.writerow(row)
    _json_dump(out / "anova.json", anova)
    _json_dump(out / "summary.json", {
        "scenarios": [r.summary() for r in reports],
        "anova": anova,
        "latency_distribution": {r.name: _latency_export(r) for r in reports},
    })
    write_manifest(out, configs, outputs, started)
    print(f"{'kpi':16s}" + "".join(f" {r.name:>15s}" for r in reports) + f" {'anova p':>11s}")
    for k in KPIS:
        p = anova[k]["p"]
        cells = "".join(f" {r.means[k]:>15.6g}" for r in reports)
        print(f"{k:16s}{cells} {format(p, '.3g') if p is not None else '-':>11s}")
    return 0


def _parse_devices(text: str) -> list[int]:
    try:
        counts = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("devices", f"not a comma-separated integer list: {text!r}") from None
    if not counts or any(c < 1 for c in counts):
        raise ConfigError("devices", "counts must be positive integers")
    return counts


def cmd_sweep(args) -> int:
    counts = _parse_devices(args.devices)
    cfg = _resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    result = sweep(cfg, counts, None, args.workers)
    with open(out / "sweep.csv", "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("device_count",) + KPIS)
        for K, means in result.rows():
            w.writerow([str(K)] + [fmt(means[k]) for k in KPIS])
    _json_dump(out / "sweep.json", {
        "scenario": cfg.name,
        "device_counts": counts,
        "breaking_point": result.breaking_point,
        "threshold_success_pct": result.threshold_pct,
        "points": [r.summary() for r in result.reports],
    })
    write_manifest(out, [cfg], ["sweep.csv", "sweep.json", "manifest.json"], started)
    print(f"breaking point (success < {result.threshold_pct:g}%): {result.breaking_point}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_checks

    golden = Path(args.golden) if args.golden else None
    results = run_checks(golden)
    failed = [name for name, ok, _ in results if not ok]
    for name, ok, detail in results:
        print(f"{'pass' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


# --- entry point ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep argparse's exit code 2, but a one-line message
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmimo", description="Massive MIMO IoT uplink Monte Carlo simulator")
    p.add_argument("--version", action="version", version=f"mmimo {__version__}")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: available CPUs)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--drops", type=int, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out")

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("config", nargs="?", help="JSON scenario file")
    run.add_argument("--preset", choices=PRESETS)
    common(run)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="compare presets with CIs and ANOVA")
    cmp_.add_argument("--presets", default=",".join(PRESETS))
    common(cmp_)
    cmp_.set_defaults(func=cmd_compare)

    sw = sub.add_parser("sweep", help="device-density sweep and breaking point")
    sw.add_argument("config", nargs="?", help="JSON scenario file")
    sw.add_argument("--preset", choices=PRESETS)
    sw.add_argument("--devices", default=",".join(str(c) for c in SWEEP_DEVICES))
    common(sw)
    sw.set_defaults(func=cmd_sweep)

    st = sub.add_parser("selftest", help="embedded oracle and golden checks")
    st.add_argument("--golden", default=None, help="golden file (default: packaged copy)")
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers is None:
        args.workers = default_workers()
    elif args.workers < 1:
        print("mmimo: error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"mmimo: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any runtime failure maps to exit 1
        print(f"mmimo: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
