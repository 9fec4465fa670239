"""End-to-end acceptance checks, one test per criterion (``test_criterion_NN_*``).

The full 1000-drop comparison takes roughly a quarter of an hour on one core.
"""
import csv
import itertools
import json
import math
import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from mmimo.beamform import Receiver, antenna_select_exact, antenna_select_exhaustive, zf
from mmimo.campaign import KPIS, anova_oneway, confidence_interval, preset, sweep
from mmimo.channel import ChannelRealization, correlated_columns, drop_devices
from mmimo.cli import main
from mmimo.pilot import (
    PilotAssignment,
    assign_qlearning,
    assign_random,
    estimate,
    mmse_coefficients,
    noise_term,
    pci,
)
from mmimo.randcore import bessel_j0, derive_stream, reg_incomplete_beta

PRESET_ORDER = ("baseline", "optimized", "ai_assisted")


def read_compare(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    means, ci = {}, {}
    for row in rows[1:]:
        kpi = row[0]
        for name in PRESET_ORDER:
            means[name, kpi] = float(row[header.index(f"{name}_mean")])
            ci[name, kpi] = float(row[header.index(f"{name}_ci95")])
    return means, ci


def ordering_failures(means, ci):
    b, o, a = PRESET_ORDER
    bad = []
    for kpi in ("se_cell", "ee", "success_pct"):
        if not (means[a, kpi] > means[o, kpi] > means[b, kpi]):
            bad.append(f"{kpi} not ai > opt > base")
    for kpi in ("mean_latency_ms", "pci"):
        if not (means[b, kpi] > means[o, kpi] > means[a, kpi]):
            bad.append(f"{kpi} not base > opt > ai")
    if (means[b, "pilot_overhead"], means[o, "pilot_overhead"], means[a, "pilot_overhead"]) != (0.3, 0.2, 0.15):
        bad.append("pilot overheads")
    spans = sorted((means[n, "se_cell"] - ci[n, "se_cell"], means[n, "se_cell"] + ci[n, "se_cell"]) for n in PRESET_ORDER)
    if any(hi >= lo2 for (_, hi), (lo2, _) in zip(spans, spans[1:])):
        bad.append("se_cell CIs overlap")
    return bad


def run_compare(out, drops, workers=1):
    t = time.perf_counter()
    code = main(["--workers", str(workers), "compare", "--presets", ",".join(PRESET_ORDER),
                 "--drops", str(drops), "--seed", "42", "--out", str(out)])
    return code, time.perf_counter() - t


@pytest.fixture(scope="module")
def gate_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("gate")
    code, elapsed = run_compare(out, 100)
    return out, code, elapsed


# --- 1: scenario ordering and ratios ----------------------------------------------

def test_criterion_01_scenario_ordering_full(tmp_path):
    code, elapsed = run_compare(tmp_path, 1000)
    assert code == 0
    means, ci = read_compare(tmp_path / "compare.csv")
    b, a = "baseline", "ai_assisted"
    ratios = {
        "se": means[a, "se_cell"] / means[b, "se_cell"],
        "ee": means[a, "ee"] / means[b, "ee"],
        "latency": means[b, "mean_latency_ms"] / means[a, "mean_latency_ms"],
        "success_gap": means[a, "success_pct"] - means[b, "success_pct"],
    }
    print(f"1000 drops in {elapsed:.0f} s; ratios {ratios}")
    assert ordering_failures(means, ci) == []
    assert ratios["se"] >= 1.5
    assert ratios["ee"] >= 1.7
    assert ratios["latency"] >= 2.0
    assert ratios["success_gap"] >= 8.0
    assert elapsed <= 15 * 60


def test_criterion_01_scenario_ordering_gate(gate_run):
    out, code, elapsed = gate_run
    assert code == 0
    means, ci = read_compare(out / "compare.csv")
    assert ordering_failures(means, ci) == []
    assert elapsed <= 120.0
    anova = json.loads((out / "anova.json").read_text())
    assert anova["se_cell"]["p"] < 0.05


# --- 2: estimation exactness ------------------------------------------------------

def test_criterion_02_zero_noise_ls_exact():
    r = derive_stream(2, 0)
    worst = 0.0
    for i in range(100):
        N = 1 + int(r.integers(128, 1)[0])
        K = 1 + int(r.integers(min(N, 64), 1)[0])
        betas = 10.0 ** (-3.0 * r.uniform(K))
        H = correlated_columns(N, betas, 0.5 * r.uniform(K), np.pi * r.uniform(K), r.child(2 * i))
        ch = ChannelRealization(H, betas, np.zeros(K), np.zeros(K))
        res = estimate(ch, PilotAssignment(K, np.arange(K)), 0.2, 0.0, "LS", r.child(2 * i + 1))
        worst = max(worst, np.linalg.norm(res.H_hat - H) / np.linalg.norm(H))
    assert worst < 1e-10


# --- 3: contamination closed forms -----------------------------------------------

CONTAMINATED = [
    ([1.0, 0.5], [0, 0], 1, 1.0, 0.2),
    ([2.0, 1.0, 0.25], [0, 0, 0], 2, 0.5, 0.1),
    ([1.0, 1.0, 3.0, 0.1], [0, 1, 0, 1], 2, 1.0, 0.5),
    ([0.7, 0.2, 0.9], [1, 1, 0], 3, 2.0, 1.0),
    ([5.0, 1.0], [0, 0], 4, 0.1, 0.05),
]


def empirical_nmse(betas, assign, p, nv, method, draws=10_000):
    K = betas.size
    rng = derive_stream(303, 0)
    err = np.zeros(K)
    for i in range(draws // 100):
        # 100 independent single-antenna draws per batch, stacked as rows
        H = correlated_columns(100, betas, np.zeros(K), np.zeros(K), rng.child(2 * i))
        ch = ChannelRealization(H, betas, np.zeros(K), np.zeros(K))
        err += estimate(ch, assign, p, nv, method, rng.child(2 * i + 1)).nmse
    return err / (draws // 100)


@pytest.mark.parametrize("case", range(len(CONTAMINATED)))
def test_criterion_03_contamination_closed_forms(case):
    betas, pilots, tau, p, nv = CONTAMINATED[case]
    betas = np.asarray(betas)
    assign = PilotAssignment(tau, np.asarray(pilots))
    nt = noise_term(p, nv, tau)
    group = np.bincount(assign.assignment, weights=betas, minlength=tau)[assign.assignment]
    ls = empirical_nmse(betas, assign, p, nv, "LS")
    mm = empirical_nmse(betas, assign, p, nv, "MMSE")
    assert np.allclose(ls, (group - betas + nt) / betas, rtol=0.03, atol=0)
    assert np.allclose(mm, 1.0 - mmse_coefficients(assign, betas, p, nv), rtol=0.03, atol=0)


# --- 4: zero-forcing nulling -----------------------------------------------------

def test_criterion_04_zf_nulling():
    r = derive_stream(4, 0)
    worst = 0.0
    for _ in range(100):
        N = 1 + int(r.integers(128, 1)[0])
        K = 1 + int(r.integers(min(N, 32), 1)[0])
        H = r.complex_normal((N, K))
        G = np.abs(zf(H).V.conj().T @ H)
        d = np.diag(G)
        off = G - np.diag(d)
        worst = max(worst, float((off / d[:, None]).max()))
    assert worst < 1e-10


# --- 5: knapsack against enumeration ---------------------------------------------

def test_criterion_05_knapsack_oracle():
    r = derive_stream(5, 0)
    for trial in range(200):
        n = 1 + int(r.integers(16, 1)[0])
        u = np.round(r.uniform(n) * 10.0, 1)
        if trial % 4 == 0:
            p = np.full(n, 0.4)  # equal powers stress the tie-break
        else:
            p = 0.2 + np.round(r.uniform(n) * 2.0, 2)
        budget = float(r.uniform(1)[0] * p.sum())
        got = antenna_select_exact(u, p, budget)
        ref = antenna_select_exhaustive(u, p, budget)
        assert got.indices == ref.indices, trial
        assert got.value == ref.value


# --- 6: hybrid with a full RF stage -----------------------------------------------

def test_criterion_06_hybrid_equivalence():
    r = derive_stream(6, 0)
    for _ in range(50):
        N = 2 + int(r.integers(63, 1)[0])
        K = 1 + int(r.integers(min(N, 16), 1)[0])
        H_hat = r.complex_normal((N, K))
        H = H_hat + 0.2 * r.complex_normal((N, K))
        hybrid = Receiver("hybrid", N, 0.2, 1e-3, n_rf=N)(H_hat, H)[0]
        digital = Receiver("zf", N, 0.2, 1e-3)(H_hat, H)[0]
        assert np.allclose(hybrid, digital, rtol=1e-9, atol=0)


# --- 7: Q-learning sanity -----------------------------------------------------------

NOISE_W = 4e-13


def test_criterion_07_qlearning_optimum_k4():
    devs = drop_devices(4, 250, 10, 0.5, derive_stream(70, 0))
    betas = [d.beta for d in devs]
    a = assign_qlearning(devs, 4, 500, derive_stream(70, 1))
    assert pci(a, betas, 0.1, NOISE_W) == 0.0


def test_criterion_07_qlearning_beats_random_k8():
    p = 1e-3
    nt = noise_term(p, NOISE_W, 2)
    q, rnd = [], []
    for s in range(100):
        devs = drop_devices(8, 250, 10, 0.5, derive_stream(s, 0))
        b = [d.beta for d in devs]
        q.append(pci(assign_qlearning(devs, 2, 500, derive_stream(s, 1), noise_term=nt), b, p, NOISE_W))
        rnd.append(pci(assign_random(8, 2, derive_stream(s, 2)), b, p, NOISE_W))
    assert np.mean(q) < np.mean(rnd)


# --- 8: statistics kernels ---------------------------------------------------------

def test_criterion_08_statistics_kernels():
    groups = [[1, 2, 3], [2, 3, 4], [3, 4, 5]]
    F, p = anova_oneway(groups)
    assert abs(F - float(Fraction(3))) < 1e-12
    assert abs(p - 0.125) <= 0.002
    assert abs(confidence_interval([1, 2, 3, 4])[1] - 2.0540) <= 1e-3

    mpmath.mp.dps = 30
    xs = np.linspace(0.0, 50.0, 1000)
    assert max(abs(bessel_j0(x) - float(mpmath.besselj(0, x))) for x in xs) < 1e-7

    grid = [(a, b, x) for a, b in itertools.product((0.5, 1.0, 2.5, 10.0, 60.0), repeat=2)
            for x in np.linspace(0.0, 1.0, 21)]
    err = max(abs(reg_incomplete_beta(a, b, x) - float(mpmath.betainc(a, b, 0, x, regularized=True)))
              for a, b, x in grid)
    assert err < 1e-8
    for a, b in ((0.5, 0.5), (2.0, 7.0), (30.0, 3.0)):
        vals = [reg_incomplete_beta(a, b, x) for x in np.linspace(0, 1, 100)]
        assert all(v2 >= v1 for v1, v2 in zip(vals, vals[1:]))


# --- 9: determinism --------------------------------------------------------------

def test_criterion_09_determinism(gate_run, tmp_path):
    first, code, _ = gate_run
    assert code == 0
    again, _ = run_compare(tmp_path / "again", 100, workers=1)
    wide, _ = run_compare(tmp_path / "wide", 100, workers=8)
    assert again == wide == 0
    files = ["compare.csv", "anova.json", "summary.json"] + [f"metrics_{n}.csv" for n in PRESET_ORDER]
    for name in files:
        ref = (first / name).read_bytes()
        assert (tmp_path / "again" / name).read_bytes() == ref, name
        assert (tmp_path / "wide" / name).read_bytes() == ref, name
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "wide" / "manifest.json").read_text())
    assert [s["config_digest"] for s in m1["scenarios"]] == [s["config_digest"] for s in m2["scenarios"]]


# --- 10: density sweep -----------------------------------------------------------

def test_criterion_10_sweep_breaking_point():
    counts = [250, 500, 1000, 2000]
    base = sweep(preset("baseline"), counts, n_drops=20, workers=1)
    ai = sweep(preset("ai_assisted"), counts, n_drops=20, workers=1)
    succ_base = [r.means["success_pct"] for r in base.reports]
    succ_ai = [r.means["success_pct"] for r in ai.reports]
    print(f"baseline success {succ_base} bp={base.breaking_point}; ai {succ_ai} bp={ai.breaking_point}")
    assert all(b <= a for a, b in zip(succ_base, succ_base[1:]))
    assert base.breaking_point is not None
    assert ai.breaking_point is None or ai.breaking_point > base.breaking_point
