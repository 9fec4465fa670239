"""Embedded oracle suite behind ``mmimo selftest``.

Every check returns ``(name, ok, detail)``; nothing here raises on a failed
check, so the CLI can report all of them.
"""
from __future__ import annotations

import json
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .beamform import antenna_select_exact, antenna_select_exhaustive
from .campaign import KPIS, Combiner, PilotStrategy, ScenarioConfig, anova_oneway, run_drop
from .channel import ChannelRealization
from .mac import SchedulerKind
from .pilot import PilotAssignment, estimate
from .randcore import derive_stream

GOLDEN_NAME = "golden_micro.json"


def micro_config() -> ScenarioConfig:
    """Tiny scenario pinned by the golden file: 8 antennas, 6 devices, 3 drops."""
    return ScenarioConfig(
        name="micro", n_antennas=8, n_devices=6, tau_p=4, tau_c=40,
        pilot_strategy=PilotStrategy.GREEDY, combiner=Combiner.ZF, n_rf=8,
        scheduler=SchedulerKind.DELAY_AWARE, horizon_ms=120.0, cell_radius_m=135.0,
        tx_power_w=0.2, drops=3, master_seed=7,
    )


def micro_rows(cfg: ScenarioConfig | None = None) -> list[dict]:
    cfg = cfg or micro_config()
    rows = []
    for i in range(cfg.drops):
        m = run_drop(cfg, i)
        rows.append({"drop_index": i, **{k: format(float(getattr(m, k)), ".9g") for k in KPIS}})
    return rows


def golden_document() -> dict:
    cfg = micro_config()
    return {"config": cfg.to_dict(), "drops": micro_rows(cfg)}


def default_golden_path():
    return resources.files("mmimo") / "data" / GOLDEN_NAME


def check_zero_noise() -> tuple:
    worst = 0.0
    for seed in range(20):
        rng = derive_stream(1000 + seed, 0)
        N, K = 32, 12
        H = rng.complex_normal((N, K))
        ch = ChannelRealization(H, np.ones(K), np.zeros(K), np.zeros(K))
        res = estimate(ch, PilotAssignment(K, np.arange(K)), 1.0, 0.0, "LS", rng.child(1))
        worst = max(worst, float(np.linalg.norm(res.H_hat - H) / np.linalg.norm(H)))
    return "zero-noise estimation", worst < 1e-10, f"max rel err {worst:.2e}"


def check_knapsack() -> tuple:
    rng = derive_stream(2024, 5)
    for trial in range(60):
        n = 1 + int(rng.integers(10, 1)[0])
        u = np.round(rng.uniform(n) * 10.0, 1)
        p = 0.5 + np.round(rng.uniform(n) * 3.0, 1)
        budget = float(0.25 + rng.uniform(1)[0] * p.sum())
        a = antenna_select_exact(u, p, budget)
        b = antenna_select_exhaustive(u, p, budget)
        if a.indices != b.indices:
            return "knapsack vs exhaustive", False, f"instance {trial}: {a.indices} != {b.indices}"
    return "knapsack vs exhaustive", True, "60 instances"


def check_anova() -> tuple:
    groups = [[1, 2, 3], [2, 3, 4], [3, 4, 5]]
    F, p = anova_oneway(groups)
    # sums of squares in exact arithmetic
    flat = [Fraction(x) for g in groups for x in g]
    grand = sum(flat) / len(flat)
    ssb = sum(len(g) * (Fraction(sum(g), len(g)) - grand) ** 2 for g in groups)
    ssw = sum((Fraction(x) - Fraction(sum(g), len(g))) ** 2 for g in groups for x in g)
    exact = (ssb / 2) / (ssw / 6)
    ok = abs(F - float(exact)) < 1e-12 and abs(p - 0.125) <= 0.002
    return "ANOVA worked example", ok, f"F={F:.12g} p={p:.6f}"


def check_golden(path=None) -> tuple:
    name = "golden micro-campaign"
    try:
        src = Path(path) if path is not None else default_golden_path()
        doc = json.loads(src.read_text())
        expected = doc["drops"]
        cfg_doc = doc["config"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        return name, False, f"unreadable golden file: {exc}"
    if cfg_doc != micro_config().to_dict():
        return name, False, "golden config differs from the built-in micro scenario"
    got = micro_rows()
    if got != expected:
        bad = next((i for i, (a, b) in enumerate(zip(got, expected)) if a != b), min(len(got), len(expected)))
        return name, False, f"mismatch at drop {bad}"
    return name, True, f"{len(got)} drops"


def run_checks(golden_path=None) -> list[tuple]:
    return [
        check_zero_noise(),
        check_knapsack(),
        check_anova(),
        check_golden(golden_path),
    ]


if __name__ == "__main__":  # regenerate the packaged golden file
    out = Path(__file__).with_name("data") / GOLDEN_NAME
    out.parent.mkdir(exist_ok=True)
    out.write_text(json.dumps(golden_document(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
