"""IoT traffic, per-frame uplink scheduling and the delivery simulation."""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization, TrafficClass, aging_coefficient
from .pilot import PilotAssignment, estimate, pci_per_device
from .powermodel import PowerParams, total_power
from .randcore import RngStream, rank_norm

PACKET_BITS = 1600
PERIODIC_INTERVAL_MS = 100.0
PERIODIC_DEADLINE_MS = 100.0
POISSON_RATE_PER_S = 5.0
POISSON_DEADLINE_MS = 50.0


class SchedulerKind(str, enum.Enum):
    ROUND_ROBIN = "round_robin"
    DELAY_AWARE = "delay_aware"
    LEARNED = "learned"


class NoDeliveriesError(ValueError):
    """Latency statistics were requested but no packet was delivered."""


@dataclass
class Packet:
    device_id: int
    arrival_ms: float
    size_bits: int
    deadline_ms: float
    delivered_ms: float | None = None

    def waiting(self, now_ms: float) -> float:
        return now_ms - self.arrival_ms

    @property
    def latency_ms(self) -> float | None:
        return None if self.delivered_ms is None else self.delivered_ms - self.arrival_ms

    @property
    def in_time(self) -> bool:
        return self.delivered_ms is not None and self.delivered_ms - self.arrival_ms <= self.deadline_ms


@dataclass
class FrameSchedule:
    frame_index: int
    granted_devices: list[int]
    spatial_streams: int
    next_cursor: int = 0

    def __post_init__(self):
        if len(set(self.granted_devices)) != len(self.granted_devices):
            raise ValueError("duplicate grant")
        if len(self.granted_devices) > self.spatial_streams:
            raise ValueError("more grants than spatial streams")


def _snap(t: np.ndarray, frame_ms: float) -> np.ndarray:
    # arrivals become visible at the next frame boundary
    return np.ceil(t / frame_ms - 1e-9) * frame_ms


def generate_traffic(devices, horizon_ms: float, rng: RngStream, frame_ms: float = 1.0) -> list[Packet]:
    """Packets over ``[0, horizon_ms)``, sorted by (arrival, device id).

    Periodic sensors send every 100 ms from a uniform phase; delay-sensitive
    devices follow a 5 packet/s Poisson process.  Arrival times are rounded up
    to the frame grid.  One phase uniform per device is drawn first, then the
    Poisson gaps device by device.
    """
    if horizon_ms <= 0:
        raise ValueError("horizon must be positive")
    K = len(devices)
    phases = _snap(rng.uniform(K) * PERIODIC_INTERVAL_MS, frame_ms)
    packets: list[Packet] = []
    mean_gap = 1000.0 / POISSON_RATE_PER_S
    for d, phase in zip(devices, phases):
        if d.traffic_class is TrafficClass.DELAY_SENSITIVE:
            # enough exponential gaps to pass the horizon with overwhelming probability
            n = int(horizon_ms / mean_gap * 2 + 20)
            times = np.cumsum(-mean_gap * np.log1p(-rng.uniform(n)))
            while times[-1] < horizon_ms:
                more = np.cumsum(-mean_gap * np.log1p(-rng.uniform(n)))
                times = np.concatenate([times, times[-1] + more])
            times = _snap(times[times < horizon_ms], frame_ms)
            deadline = POISSON_DEADLINE_MS
        else:
            times = np.arange(phase, horizon_ms, PERIODIC_INTERVAL_MS)
            deadline = PERIODIC_DEADLINE_MS
        packets.extend(Packet(d.id, float(t), PACKET_BITS, deadline) for t in times if t < horizon_ms)
    packets.sort(key=lambda p: (p.arrival_ms, p.device_id))
    return packets


def schedule_round_robin(queues, spatial_streams: int, frame_index: int, cursor: int = 0) -> FrameSchedule:
    """Grant backlogged devices in ascending id order starting at ``cursor``.

    ``next_cursor`` on the result is one past the last granted id.
    """
    if spatial_streams < 1:
        raise ValueError("spatial_streams must be >= 1")
    ids = sorted(k for k, q in queues.items() if q)
    start = next((i for i, k in enumerate(ids) if k >= cursor), 0)
    rotated = ids[start:] + ids[:start]
    granted = rotated[:spatial_streams]
    next_cursor = granted[-1] + 1 if granted else cursor
    return FrameSchedule(frame_index, granted, spatial_streams, next_cursor)


def _pick(ranked, spatial_streams: int, conflict_key) -> list[int]:
    # devices sharing a conflict key are deferred behind non-conflicting ones,
    # but still fill spare streams so no stream idles while work is queued
    if conflict_key is None:
        return ranked[:spatial_streams]
    first, spill, seen = [], [], set()
    for k in ranked:
        key = conflict_key.get(k)
        if key is not None and key in seen:
            spill.append(k)
        else:
            first.append(k)
            if key is not None:
                seen.add(key)
    return (first + spill)[:spatial_streams]


def schedule_delay_aware(
    queues, spatial_streams: int, now_ms: float, frame_index: int = 0, conflict_key=None
) -> FrameSchedule:
    """Earliest-deadline-first on head-of-line packets.

    Slack is ``deadline - (now - arrival)``; ties go to the longer wait, then
    the lower device id.  With ``conflict_key`` (device id -> hashable), devices
    whose key was already granted this frame move behind all others.
    """
    if spatial_streams < 1:
        raise ValueError("spatial_streams must be >= 1")
    keyed = []
    for k, q in queues.items():
        if q:
            head = q[0]
            wait = now_ms - head.arrival_ms
            keyed.append((head.deadline_ms - wait, -wait, k))
    keyed.sort()
    return FrameSchedule(frame_index, _pick([k for _, _, k in keyed], spatial_streams, conflict_key), spatial_streams)


def schedule_learned(
    queues,
    spatial_streams: int,
    now_ms: float,
    channel_quality,
    w: float = 0.7,
    frame_index: int = 0,
    conflict_key=None,
) -> FrameSchedule:
    """Top priorities of ``w * wait/deadline + (1 - w) * rank_norm(quality)``.

    ``channel_quality`` maps device id to a real score (higher is better);
    ranks are taken over the backlogged devices only.  Ties go to lower ids.
    ``conflict_key`` works as in :func:`schedule_delay_aware`.
    """
    if spatial_streams < 1:
        raise ValueError("spatial_streams must be >= 1")
    if not (0.0 <= w <= 1.0):
        raise ValueError("w must lie in [0, 1]")
    ids = sorted(k for k, q in queues.items() if q)
    if not ids:
        return FrameSchedule(frame_index, [], spatial_streams)
    quality = rank_norm([channel_quality[k] for k in ids])
    prio = []
    for k, qn in zip(ids, quality):
        head = queues[k][0]
        prio.append((-(w * (now_ms - head.arrival_ms) / head.deadline_ms + (1.0 - w) * qn), k))
    prio.sort()
    return FrameSchedule(frame_index, _pick([k for _, k in prio], spatial_streams, conflict_key), spatial_streams)


@dataclass
class MacParams:
    scheduler: SchedulerKind = SchedulerKind.ROUND_ROBIN
    spatial_streams: int = 16
    frame_ms: float = 1.0
    pilot_period: int = 10
    sinr_min_db: float = 0.0
    learned_weight: float = 0.7
    pilot_overhead: float = 0.0
    tx_power_w: float = 0.01
    noise_var: float = 1e-13
    estimator: str = "MMSE"
    measure_from_ms: float = 0.0
    pilot_aware: bool = False
    dynamic_pilots: bool = False


def resolve_pilot_collisions(assignment: PilotAssignment) -> PilotAssignment:
    """Move colliding trainees onto pilots nobody in this training round uses.

    The first device (in the given order) keeps its pilot; later devices on an
    occupied pilot take the lowest free pilot while any remain.
    """
    a = assignment.assignment
    taken = np.zeros(assignment.tau_p, dtype=bool)
    taken[a] = True
    free = iter(np.flatnonzero(~taken).tolist())
    seen = set()
    out = a.copy()
    for i, t in enumerate(a.tolist()):
        if t in seen:
            nxt = next(free, None)
            if nxt is not None:
                out[i] = nxt
        else:
            seen.add(t)
    return PilotAssignment(assignment.tau_p, out)


@dataclass
class FrameStats:
    se_sum: float = 0.0
    n_frames: int = 0
    grants: int = 0
    failed_grants: int = 0
    pci_sum: float = 0.0
    pci_count: int = 0
    trainings: int = 0
    per_frame_se: list = field(default_factory=list)
    per_frame_power: list = field(default_factory=list)

    @property
    def mean_se(self) -> float:
        return self.se_sum / self.n_frames if self.n_frames else 0.0

    @property
    def mean_power_w(self) -> float:
        return float(np.mean(self.per_frame_power)) if self.per_frame_power else 0.0

    @property
    def pci(self) -> float:
        return self.pci_sum / self.pci_count if self.pci_count else 0.0


@dataclass
class SimulationResult:
    packets: list[Packet]
    stats: FrameStats
    measured: list[Packet]


class _ChannelClock:
    """True channels aged lazily: a column is advanced only when it is observed.

    Gauss-Markov steps compose, so ``n`` skipped frames become one step with
    ``rho ** n``; the law of the sampled channels is unchanged.
    """

    def __init__(self, channel: ChannelRealization, rho: np.ndarray, rng: RngStream):
        self.channel = channel
        self.H = channel.H.copy()
        self.rho = rho
        self.last = np.zeros(channel.n_devices, dtype=np.int64)
        self.rng = rng

    def at(self, columns, frame: int) -> np.ndarray:
        cols = np.asarray(columns, dtype=np.intp)
        gap = frame - self.last[cols]
        r = self.rho[cols] ** gap
        move = (gap > 0) & (r != 1.0)
        if np.any(move):
            idx = cols[move]
            rr = r[move]
            fresh = self.channel.fresh_columns(idx, self.rng)
            self.H[:, idx] = rr[None, :] * self.H[:, idx] + np.sqrt(1.0 - rr ** 2)[None, :] * fresh
        self.last[cols] = frame
        return self.H[:, cols]


def simulate_frames(
    channel: ChannelRealization,
    devices,
    assignment: PilotAssignment,
    packets: list[Packet],
    receiver,
    horizon_ms: float,
    rng: RngStream,
    params: MacParams,
    power: PowerParams | None = None,
) -> SimulationResult:
    """Run the uplink frame loop and stamp delivery times onto ``packets``.

    Each frame: release arrivals, drop packets that can no longer meet their
    deadline, train devices (a device pilots in the frame its queue becomes
    non-empty and re-pilots ``pilot_period`` frames after its last training
    while it stays backlogged), schedule, evaluate SINR on the aged true channels and deliver the
    head-of-line packet of every grant with SINR >= ``sinr_min_db``.
    Contamination arises among devices that pilot in the same frame.
    """
    K = len(devices)
    if channel.n_devices != K or assignment.n_devices != K:
        raise ValueError("channel, assignment and device list disagree on K")
    if receiver.n_antennas != channel.n_antennas:
        raise ValueError("receiver and channel disagree on the antenna count")
    if params.spatial_streams < 1 or params.pilot_period < 1 or params.frame_ms <= 0:
        raise ValueError("invalid MAC parameters")
    power = power or PowerParams()
    T = params.frame_ms
    n_frames = int(math.ceil(horizon_ms / T - 1e-9))
    sinr_min = math.inf if math.isinf(params.sinr_min_db) and params.sinr_min_db > 0 else 10.0 ** (params.sinr_min_db / 10.0)
    rho = np.array([aging_coefficient(d.doppler_hz, T / 1000.0) for d in devices])
    clock = _ChannelClock(channel, rho, rng.child(0))
    est_rng = rng.child(1)
    N = channel.n_antennas
    H_hat = np.zeros((N, K), dtype=np.complex128)
    quality = np.zeros(K)
    queues: dict[int, deque] = {}
    trained_on: dict[int, tuple] = {}
    conflicts = trained_on if params.pilot_aware else None
    stats = FrameStats()
    cursor = 0
    ptr = 0
    n_packets = len(packets)
    betas = channel.beta
    kind = SchedulerKind(params.scheduler)

    for f in range(n_frames):
        now = f * T
        fresh: list[int] = []
        while ptr < n_packets and packets[ptr].arrival_ms <= now + 1e-9:
            pk = packets[ptr]
            q = queues.get(pk.device_id)
            if q is None:
                q = queues[pk.device_id] = deque()
                fresh.append(pk.device_id)
            q.append(pk)
            ptr += 1
        for k in list(queues):
            q = queues[k]
            while q and now + T - q[0].arrival_ms > q[0].deadline_ms + 1e-9:
                q.popleft()
            if not q:
                del queues[k]

        fresh_set = set(fresh)
        train = sorted(
            k for k in queues
            if k in fresh_set or f - trained_on.get(k, (-math.inf,))[0] >= params.pilot_period
        )
        if train:
            cols = np.array(train, dtype=np.intp)
            sub = ChannelRealization(clock.at(cols, f), betas[cols], channel.r[cols], channel.theta[cols])
            sub_assign = assignment.subset(cols)
            if params.dynamic_pilots:
                sub_assign = resolve_pilot_collisions(sub_assign)
            est = estimate(sub, sub_assign, params.tx_power_w, params.noise_var, params.estimator, est_rng)
            H_hat[:, cols] = est.H_hat
            quality[cols] = np.sum(np.abs(est.H_hat) ** 2, axis=0)
            per = pci_per_device(sub_assign, betas[cols], params.tx_power_w, params.noise_var)
            stats.pci_sum += float(per.sum())
            stats.pci_count += per.size
            stats.trainings += per.size
            for k, t in zip(train, sub_assign.assignment):
                trained_on[k] = (f, int(t))

        if kind is SchedulerKind.ROUND_ROBIN:
            sched = schedule_round_robin(queues, params.spatial_streams, f, cursor)
            cursor = sched.next_cursor
        elif kind is SchedulerKind.DELAY_AWARE:
            sched = schedule_delay_aware(queues, params.spatial_streams, now, f, conflicts)
        else:
            sched = schedule_learned(
                queues, params.spatial_streams, now, quality, params.learned_weight, f, conflicts
            )
        granted = sched.granted_devices

        se_frame = 0.0
        if granted:
            cols = np.array(granted, dtype=np.intp)
            sinr, chains = receiver(H_hat[:, cols], clock.at(cols, f))
            ok = sinr >= sinr_min
            for k, good in zip(granted, ok):
                if good:
                    pk = queues[k].popleft()
                    pk.delivered_ms = now + T
                    if not queues[k]:
                        del queues[k]
            if np.any(ok):
                se_frame = float(np.sum((1.0 - params.pilot_overhead) * np.log2(1.0 + sinr[ok])))
            stats.grants += len(granted)
            stats.failed_grants += int(np.sum(~ok))
            p_frame = total_power(power, chains, np.full(len(granted), params.tx_power_w), len(granted))
        else:
            p_frame = total_power(power, receiver.idle_chains(), (), 0)
        stats.se_sum += se_frame
        stats.per_frame_se.append(se_frame)
        stats.per_frame_power.append(p_frame)
        stats.n_frames += 1

    measured = [
        p for p in packets
        if p.arrival_ms >= params.measure_from_ms - 1e-9 and p.arrival_ms + p.deadline_ms <= n_frames * T + 1e-9
    ]
    return SimulationResult(packets=packets, stats=stats, measured=measured)


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    percentiles: dict
    jitter_iqr_ms: float
    delivered: int


def latency_stats(packets, percentiles=(5, 25, 50, 75, 95)) -> LatencyStats:
    """Statistics over delivered packets (linear-interpolated percentiles)."""
    packets = list(packets)
    if not packets:
        raise ValueError("no packets")
    lat = np.array([p.latency_ms for p in packets if p.delivered_ms is not None], dtype=float)
    if lat.size == 0:
        raise NoDeliveriesError("no delivered packets")
    pct = {q: float(np.percentile(lat, q)) for q in sorted(set(percentiles) | {25, 75})}
    return LatencyStats(
        mean_ms=float(lat.mean()),
        percentiles=pct,
        jitter_iqr_ms=pct[75] - pct[25],
        delivered=int(lat.size),
    )


def success_rate(packets) -> float:
    """Percentage of packets delivered within their deadline."""
    packets = list(packets)
    if not packets:
        raise ValueError("success rate of an empty packet list")
    return 100.0 * sum(1 for p in packets if p.in_time) / len(packets)


def device_success_rate(packets) -> float:
    """Percentage of devices whose packets were all delivered in time."""
    per: dict[int, bool] = {}
    for p in packets:
        per[p.device_id] = per.get(p.device_id, True) and p.in_time
    if not per:
        raise ValueError("success rate of an empty packet list")
    return 100.0 * sum(per.values()) / len(per)
