"""Scenario presets, the Monte Carlo driver and KPI statistics."""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .beamform import Receiver
from .channel import draw_channel, drop_devices
from .mac import MacParams, SchedulerKind, generate_traffic, latency_stats, simulate_frames, success_rate
from .mac import device_success_rate
from .pilot import assign_greedy, assign_qlearning, assign_random, noise_term
from .powermodel import PowerParams, energy_efficiency
from .randcore import derive_stream, reg_incomplete_beta

KPIS = ("se_cell", "ee", "mean_latency_ms", "pci", "success_pct", "pilot_overhead")
BREAKING_POINT_PCT = 90.0
Z_975 = 1.959964

# child stream ids under a drop's stream
GEOMETRY, CHANNEL, PILOTS, TRAFFIC, FRAMES = range(5)


class PilotStrategy(str, enum.Enum):
    RANDOM = "random"
    GREEDY = "greedy"
    QLEARNING = "qlearning"


class Combiner(str, enum.Enum):
    MRC = "mrc"
    ZF = "zf"
    HYBRID = "hybrid"


class DropError(RuntimeError):
    def __init__(self, drop_index: int, cause: BaseException):
        self.drop_index = drop_index
        super().__init__(f"drop {drop_index} failed: {cause!r}")


def thermal_noise_w(bandwidth_hz: float, noise_figure_db: float) -> float:
    return 10.0 ** ((-174.0 + 10.0 * math.log10(bandwidth_hz) + noise_figure_db - 30.0) / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one Monte Carlo campaign needs; all randomness derives from ``master_seed``."""

    name: str = "custom"
    n_antennas: int = 128
    n_devices: int = 500
    mobile: bool = True
    mobile_fraction: float = 0.5
    tau_p: int = 60
    tau_c: int = 200
    pilot_strategy: PilotStrategy = PilotStrategy.RANDOM
    qlearning_episodes: int = 10
    combiner: Combiner = Combiner.MRC
    n_rf: int = 128
    antenna_selection: bool = False
    antenna_budget_w: float = 0.0
    scheduler: SchedulerKind = SchedulerKind.ROUND_ROBIN
    pilot_aware: bool = False
    dynamic_pilots: bool = False
    learned_weight: float = 0.7
    power: PowerParams = field(default_factory=PowerParams)
    tx_power_w: float = 0.1
    noise_figure_db: float = 7.0
    cell_radius_m: float = 250.0
    min_distance_m: float = 10.0
    shadow_sigma_db: float = 8.0
    corr_r: float = 0.5
    delay_sensitive_fraction: float = 0.3
    horizon_ms: float = 200.0
    frame_ms: float = 1.0
    pilot_period: int = 10
    sinr_min_db: float = 0.0
    max_streams: int = 16
    drops: int = 1000
    master_seed: int = 42

    def __post_init__(self):
        for name, enum_type in (
            ("pilot_strategy", PilotStrategy),
            ("combiner", Combiner),
            ("scheduler", SchedulerKind),
        ):
            object.__setattr__(self, name, enum_type(getattr(self, name)))
        if isinstance(self.power, dict):
            object.__setattr__(self, "power", PowerParams(**self.power))
        if self.n_antennas < 1 or self.n_devices < 1:
            raise ValueError("n_antennas and n_devices must be >= 1")
        if not (1 <= self.tau_p < self.tau_c):
            raise ValueError("need 1 <= tau_p < tau_c")
        if not (1 <= self.n_rf <= self.n_antennas):
            raise ValueError("n_rf must lie in [1, n_antennas]")
        if self.drops < 1:
            raise ValueError("drops must be >= 1")
        if self.antenna_selection and self.antenna_budget_w <= 0:
            raise ValueError("antenna selection needs a positive antenna_budget_w")
        if self.tx_power_w <= 0 or self.horizon_ms <= 0 or self.frame_ms <= 0:
            raise ValueError("tx_power_w, horizon_ms and frame_ms must be positive")
        if not (0.0 <= self.mobile_fraction <= 1.0) or not (0.0 <= self.delay_sensitive_fraction <= 1.0):
            raise ValueError("fractions must lie in [0, 1]")
        if self.qlearning_episodes < 1 or self.max_streams < 1 or self.pilot_period < 1:
            raise ValueError("qlearning_episodes, max_streams and pilot_period must be >= 1")

    @property
    def pilot_overhead(self) -> float:
        return self.tau_p / self.tau_c

    @property
    def noise_var(self) -> float:
        return thermal_noise_w(self.power.bandwidth_hz, self.noise_figure_db)

    @property
    def spatial_streams(self) -> int:
        chains = self.n_rf if self.combiner is Combiner.HYBRID else self.n_antennas
        return min(self.n_devices, chains, self.max_streams)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, PowerParams):
                v = v.to_dict()
            out[f.name] = v
        return out

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


PRESETS = ("baseline", "optimized", "ai_assisted")


def preset(name: str) -> ScenarioConfig:
    """The three reference scenarios at N=128, K=500 with a half-mobile population."""
    N = 128
    p_ant = PowerParams().p_antenna_w
    # shared operating point: small cell, 8 dB decoding threshold
    shared = dict(cell_radius_m=135.0, sinr_min_db=8.0, tx_power_w=0.2)
    if name == "baseline":
        return ScenarioConfig(
            **shared, name=name, n_antennas=N, tau_p=60, pilot_strategy=PilotStrategy.RANDOM,
            combiner=Combiner.MRC, n_rf=N, scheduler=SchedulerKind.ROUND_ROBIN,
        )
    if name == "optimized":
        return ScenarioConfig(
            **shared, name=name, n_antennas=N, tau_p=40, pilot_strategy=PilotStrategy.GREEDY,
            combiner=Combiner.ZF, n_rf=N, antenna_selection=True, antenna_budget_w=0.4 * N * p_ant,
            scheduler=SchedulerKind.DELAY_AWARE, pilot_aware=True,
        )
    if name == "ai_assisted":
        return ScenarioConfig(
            **shared, name=name, n_antennas=N, tau_p=30, pilot_strategy=PilotStrategy.QLEARNING,
            combiner=Combiner.HYBRID, n_rf=N // 4, antenna_selection=True,
            antenna_budget_w=0.75 * N * p_ant, scheduler=SchedulerKind.LEARNED, pilot_aware=True,
            dynamic_pilots=True,
        )
    raise ValueError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")


@dataclass(frozen=True)
class DropMetrics:
    drop_index: int
    se_cell: float
    ee: float
    mean_latency_ms: float
    pci: float
    success_pct: float
    pilot_overhead: float
    device_success_pct: float = 0.0
    latency_p50_ms: float = 0.0
    latency_p95_ms: float = 0.0
    jitter_ms: float = 0.0
    delivered: int = 0
    packets: int = 0

    def kpis(self) -> tuple:
        return tuple(getattr(self, k) for k in KPIS)


def _assign_pilots(cfg: ScenarioConfig, devices, rng):
    if cfg.pilot_strategy is PilotStrategy.RANDOM:
        return assign_random(len(devices), cfg.tau_p, rng)
    if cfg.pilot_strategy is PilotStrategy.GREEDY:
        return assign_greedy(devices, cfg.tau_p)
    n = noise_term(cfg.tx_power_w, cfg.noise_var, cfg.tau_p)
    return assign_qlearning(devices, cfg.tau_p, cfg.qlearning_episodes, rng, noise_term=n)


def _receiver(cfg: ScenarioConfig) -> Receiver:
    return Receiver(
        cfg.combiner.value,
        cfg.n_antennas,
        cfg.tx_power_w,
        cfg.noise_var,
        n_rf=cfg.n_rf,
        antenna_budget_w=cfg.antenna_budget_w if cfg.antenna_selection else None,
        antenna_powers_w=np.full(cfg.n_antennas, cfg.power.p_antenna_w),
    )


def simulate_drop(cfg: ScenarioConfig, drop_index: int):
    """Full pipeline for one drop; returns ``(metrics, simulation result)``."""
    rng = derive_stream(cfg.master_seed, drop_index)
    devices = drop_devices(
        cfg.n_devices, cfg.cell_radius_m, cfg.min_distance_m,
        cfg.mobile_fraction if cfg.mobile else 0.0, rng.child(GEOMETRY),
        shadow_sigma_db=cfg.shadow_sigma_db, delay_sensitive_fraction=cfg.delay_sensitive_fraction,
    )
    channel = draw_channel(devices, cfg.n_antennas, rng.child(CHANNEL), corr_r=cfg.corr_r)
    assignment = _assign_pilots(cfg, devices, rng.child(PILOTS))
    packets = generate_traffic(devices, cfg.horizon_ms, rng.child(TRAFFIC), cfg.frame_ms)
    params = MacParams(
        scheduler=cfg.scheduler, spatial_streams=cfg.spatial_streams, frame_ms=cfg.frame_ms,
        pilot_period=cfg.pilot_period, sinr_min_db=cfg.sinr_min_db, learned_weight=cfg.learned_weight,
        pilot_overhead=cfg.pilot_overhead, tx_power_w=cfg.tx_power_w, noise_var=cfg.noise_var,
        pilot_aware=cfg.pilot_aware, dynamic_pilots=cfg.dynamic_pilots,
    )
    result = simulate_frames(
        channel, devices, assignment, packets, _receiver(cfg), cfg.horizon_ms,
        rng.child(FRAMES), params, cfg.power,
    )
    st = result.stats
    measured = result.measured or result.packets
    delivered = [p for p in measured if p.delivered_ms is not None]
    if delivered:
        lat = latency_stats(delivered, (50, 95))
        mean_lat, p50, p95, jitter = lat.mean_ms, lat.percentiles[50], lat.percentiles[95], lat.jitter_iqr_ms
    else:
        # nothing got through: charge the longest deadline
        worst = max((p.deadline_ms for p in measured), default=0.0)
        mean_lat = p50 = p95 = worst
        jitter = 0.0
    total_energy = math.fsum(st.per_frame_power)
    ee = energy_efficiency(math.fsum(st.per_frame_se), cfg.power.bandwidth_hz, total_energy) if total_energy > 0 else 0.0
    metrics = DropMetrics(
        drop_index=drop_index,
        se_cell=st.mean_se,
        ee=ee,
        mean_latency_ms=mean_lat,
        pci=st.pci,
        success_pct=success_rate(measured) if measured else 0.0,
        pilot_overhead=cfg.pilot_overhead,
        device_success_pct=device_success_rate(measured) if measured else 0.0,
        latency_p50_ms=p50,
        latency_p95_ms=p95,
        jitter_ms=jitter,
        delivered=len(delivered),
        packets=len(measured),
    )
    return metrics, result


def run_drop(cfg: ScenarioConfig, drop_index: int) -> DropMetrics:
    try:
        return simulate_drop(cfg, drop_index)[0]
    except Exception as exc:  # attach the drop index, keep the original as cause
        raise DropError(drop_index, exc) from exc


def _run_chunk(args):
    cfg, indices = args
    return [run_drop(cfg, i) for i in indices]


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


# --- statistics -------------------------------------------------------------

def student_t_quantile(prob: float, dof: float) -> float:
    """Upper quantile of Student's t by bisection on its incomplete-beta CDF."""
    if not (0.5 <= prob < 1.0):
        raise ValueError("prob must lie in [0.5, 1)")
    if dof <= 0:
        raise ValueError("dof must be positive")
    if prob == 0.5:
        return 0.0

    def cdf(t):
        return 1.0 - 0.5 * reg_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))

    lo, hi = 0.0, 1.0
    while cdf(hi) < prob:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < prob:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def confidence_interval(samples, level: float = 0.95):
    """``(mean, half_width)`` of the two-sided Student-t interval (normal for n >= 200)."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("confidence interval needs at least two samples")
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    mean = math.fsum(x) / n
    s = math.sqrt(math.fsum((x - mean) ** 2) / (n - 1))
    if n >= 200 and level == 0.95:
        q = Z_975
    else:
        q = student_t_quantile(0.5 + level / 2.0, n - 1)
    return mean, q * s / math.sqrt(n)


def f_survival(F: float, d1: float, d2: float) -> float:
    if F <= 0:
        return 1.0
    return reg_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * F))


def anova_oneway(groups):
    """One-way ANOVA ``(F, p)`` across ``groups``."""
    gs = [np.asarray(g, dtype=float) for g in groups]
    if len(gs) < 2 or any(g.size < 2 for g in gs):
        raise ValueError("ANOVA needs at least two groups of at least two samples")
    n_total = sum(g.size for g in gs)
    grand = math.fsum(math.fsum(g) for g in gs) / n_total
    means = [math.fsum(g) / g.size for g in gs]
    ssb = math.fsum(g.size * (m - grand) ** 2 for g, m in zip(gs, means))
    ssw = math.fsum(math.fsum((g - m) ** 2) for g, m in zip(gs, means))
    d1 = len(gs) - 1
    d2 = n_total - len(gs)
    if ssw == 0.0:
        if ssb == 0.0:
            return 0.0, 1.0
        raise ValueError("zero within-group variance: F is undefined")
    F = (ssb / d1) / (ssw / d2)
    return F, f_survival(F, d1, d2)


def pearson_matrix(table: np.ndarray) -> np.ndarray:
    """Pearson correlations between columns; constant columns correlate as 0 (1 on the diagonal)."""
    X = np.asarray(table, dtype=float)
    Xc = X - X.mean(axis=0)
    norm = np.sqrt(np.sum(Xc ** 2, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        C = (Xc.T @ Xc) / np.outer(norm, norm)
    C = np.where(np.isfinite(C), C, 0.0)
    np.fill_diagonal(C, 1.0)
    return np.clip(C, -1.0, 1.0)


# --- campaigns --------------------------------------------------------------

@dataclass
class CampaignReport:
    config: ScenarioConfig
    drops: list[DropMetrics]
    means: dict
    ci95: dict
    minimum: dict
    maximum: dict
    correlation: np.ndarray

    @property
    def name(self) -> str:
        return self.config.name

    def column(self, kpi: str) -> np.ndarray:
        return np.array([getattr(d, kpi) for d in self.drops], dtype=float)

    def summary(self) -> dict:
        return {
            "scenario": self.name,
            "drops": len(self.drops),
            "means": self.means,
            "ci95_half_width": self.ci95,
            "min": self.minimum,
            "max": self.maximum,
            "correlation": {"kpis": list(KPIS), "matrix": self.correlation.tolist()},
        }


def aggregate(cfg: ScenarioConfig, drops: list[DropMetrics]) -> CampaignReport:
    table = np.array([d.kpis() for d in drops], dtype=float)
    means, ci, lo, hi = {}, {}, {}, {}
    for j, k in enumerate(KPIS):
        col = table[:, j]
        if col.size >= 2:
            means[k], ci[k] = confidence_interval(col)
        else:
            means[k], ci[k] = float(col[0]), 0.0
        lo[k] = float(col.min())
        hi[k] = float(col.max())
        # fsum mean can stray outside [min, max] by an ulp for constant columns
        means[k] = min(max(means[k], lo[k]), hi[k])
    return CampaignReport(cfg, drops, means, ci, lo, hi, pearson_matrix(table))


def run_campaign(cfg: ScenarioConfig, n_drops: int | None = None, workers: int | None = None) -> CampaignReport:
    """Evaluate drops ``0 .. n_drops-1`` (serially or across processes) and aggregate in index order."""
    n = cfg.drops if n_drops is None else n_drops
    if n < 1:
        raise ValueError("n_drops must be >= 1")
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or n == 1:
        drops = [run_drop(cfg, i) for i in range(n)]
    else:
        chunk = max(1, math.ceil(n / (workers * 4)))
        jobs = [(cfg, range(s, min(n, s + chunk))) for s in range(0, n, chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            drops = [d for part in pool.map(_run_chunk, jobs) for d in part]
    return aggregate(cfg, drops)


def compare(configs, n_drops: int | None = None, workers: int | None = None):
    """Run several scenarios; returns ``(reports, anova)`` with ANOVA per KPI."""
    if len(configs) < 2:
        raise ValueError("comparison needs at least two scenarios")
    reports = [run_campaign(c, n_drops, workers) for c in configs]
    anova = {}
    for k in KPIS:
        groups = [r.column(k) for r in reports]
        try:
            F, p = anova_oneway(groups)
        except ValueError:
            F, p = None, None
        anova[k] = {"F": F, "p": p}
    return reports, anova


@dataclass
class SweepResult:
    counts: list[int]
    reports: list[CampaignReport]
    breaking_point: int | None
    threshold_pct: float = BREAKING_POINT_PCT

    def rows(self):
        for K, r in zip(self.counts, self.reports):
            yield K, r.means


def breaking_point(counts, success, threshold: float = BREAKING_POINT_PCT):
    hits = [K for K, s in zip(counts, success) if s < threshold]
    return min(hits) if hits else None


def sweep(cfg: ScenarioConfig, device_counts, n_drops: int | None = None, workers: int | None = None) -> SweepResult:
    counts = [int(c) for c in device_counts]
    if not counts or any(c < 1 for c in counts):
        raise ValueError("device counts must be >= 1")
    reports = [run_campaign(cfg.with_(n_devices=K), n_drops, workers) for K in counts]
    bp = breaking_point(counts, [r.means["success_pct"] for r in reports])
    return SweepResult(counts, reports, bp)


def drop_table(report: CampaignReport) -> list[dict]:
    return [asdict(d) for d in report.drops]
