"""Pilot books, pilot assignment strategies, contaminated channel estimation and PCI."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization
from .randcore import RngStream, rank_norm


class EstimationMethod(str, enum.Enum):
    LS = "LS"
    MMSE = "MMSE"


@dataclass(frozen=True)
class PilotAssignment:
    tau_p: int
    assignment: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if self.tau_p < 1:
            raise ValueError("tau_p must be >= 1")
        if a.size and (a.min() < 0 or a.max() >= self.tau_p):
            raise ValueError("pilot indices must lie in [0, tau_p)")
        object.__setattr__(self, "assignment", a)

    @property
    def n_devices(self) -> int:
        return self.assignment.size

    def reuse_counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.tau_p)

    def subset(self, devices) -> "PilotAssignment":
        return PilotAssignment(self.tau_p, self.assignment[np.asarray(devices, dtype=np.intp)])


@dataclass
class EstimationResult:
    H_hat: np.ndarray
    nmse: np.ndarray
    method: EstimationMethod


def build_pilot_book(tau_p: int) -> np.ndarray:
    """Unitary DFT book; column t is pilot sequence t."""
    if tau_p < 1:
        raise ValueError("tau_p must be >= 1")
    n = np.arange(tau_p)
    return np.exp(2j * np.pi * np.outer(n, n) / tau_p) / np.sqrt(tau_p)


def assign_random(K: int, tau_p: int, rng: RngStream) -> PilotAssignment:
    if K < 1 or tau_p < 1:
        raise ValueError("need K >= 1 and tau_p >= 1")
    return PilotAssignment(tau_p, rng.integers(tau_p, K))


def greedy_scores(devices) -> np.ndarray:
    beta = np.array([d.beta for d in devices], dtype=float)
    doppler = np.array([d.doppler_hz for d in devices], dtype=float)
    return 0.5 * rank_norm(beta) + 0.5 * rank_norm(doppler)


def assign_greedy(devices, tau_p: int) -> PilotAssignment:
    """Deal devices round-robin over pilots in descending score order.

    The score mixes rank-normalised large-scale gain and Doppler equally, so
    the ``tau_p`` strongest/fastest devices all land on distinct pilots.
    """
    if len(devices) < 1 or tau_p < 1:
        raise ValueError("need at least one device and tau_p >= 1")
    scores = greedy_scores(devices)
    ids = np.array([d.id for d in devices])
    order = np.lexsort((ids, -scores))
    assignment = np.empty(len(devices), dtype=np.int64)
    assignment[order] = np.arange(len(devices)) % tau_p
    return PilotAssignment(tau_p, assignment)


def _group_pci_sum(count, total, noise_term):
    # sum over a pilot group of PCI_k = (S - beta_k) / (S + n) is (m - 1) S / (S + n)
    count = np.asarray(count, dtype=float)
    total = np.asarray(total, dtype=float)
    denom = total + noise_term
    out = np.zeros(np.broadcast(count, total).shape)
    np.divide((count - 1.0) * total, denom, out=out, where=(count > 1) & (denom > 0))
    return out


def _interference_bucket(sums: np.ndarray, beta: float, noise_term: float) -> np.ndarray:
    # co-pilot gain sum as the interference share the device would see, in quarter bins
    share = sums / (sums + beta + noise_term)
    return np.minimum(3, (4.0 * share).astype(np.int64))


def _load_bucket(counts: np.ndarray) -> np.ndarray:
    # load above the least-loaded pilot, so the buckets stay informative when K >> tau_p
    return np.minimum(3, counts - counts.min())


class PilotQLearner:
    """Tabular Q-learning over sequential pilot placement.

    Devices are placed one at a time in descending large-scale gain.  Each
    candidate pilot is described by the state (load bucket 0..3, quarter bin of
    the share ``S_t / (S_t + beta_k + noise)`` that the pilot's accumulated
    gain ``S_t`` would take from the device being placed).  The action picks a
    pilot; its value is the table entry of that pilot's state, so one 4 x 4
    table serves every pilot index.  The reward is the drop in summed PCI
    caused by the placement.
    """

    alpha = 0.1
    gamma = 0.9
    eps_start = 1.0
    eps_end = 0.05

    def __init__(self, betas, tau_p: int, noise_term: float = 0.0):
        self.betas = np.asarray(betas, dtype=float)
        self.tau_p = tau_p
        self.noise_term = float(noise_term)
        self.order = np.lexsort((np.arange(self.betas.size), -self.betas))
        self.q = np.zeros((4, 4))

    def _values(self, counts, sums, beta):
        load = _load_bucket(counts)
        interf = _interference_bucket(sums, beta, self.noise_term)
        return load, interf, self.q[load, interf]

    def episode(self, epsilon: float, rng: RngStream | None, learn: bool = True) -> np.ndarray:
        K = self.betas.size
        tau = self.tau_p
        counts = np.zeros(tau, dtype=np.int64)
        sums = np.zeros(tau)
        assignment = np.empty(K, dtype=np.int64)
        if rng is not None:
            explore = rng.uniform(K) < epsilon
            random_pilot = rng.integers(tau, K)
        else:
            explore = np.zeros(K, dtype=bool)
            random_pilot = np.zeros(K, dtype=np.int64)
        betas = self.betas[self.order]
        n = self.noise_term
        load, interf, values = self._values(counts, sums, betas[0])
        for step, k in enumerate(self.order):
            a = int(random_pilot[step]) if explore[step] else int(np.argmax(values))
            s_load, s_interf = load[a], interf[a]
            m = int(counts[a])
            total = float(sums[a])
            before = (m - 1) * total / (total + n) if m > 1 else 0.0
            total += float(betas[step])
            counts[a] = m + 1
            sums[a] = total
            reward = before - m * total / (total + n) if m > 0 else 0.0
            assignment[k] = a
            if step + 1 < K:
                load, interf, values = self._values(counts, sums, betas[step + 1])
            if learn:
                target = reward if step == K - 1 else reward + self.gamma * float(values.max())
                self.q[s_load, s_interf] += self.alpha * (target - self.q[s_load, s_interf])
                if step + 1 < K:
                    values = self.q[load, interf]
        return assignment

    def train(self, episodes: int, rng: RngStream) -> None:
        for e in range(episodes):
            frac = e / (episodes - 1) if episodes > 1 else 0.0
            eps = self.eps_start + (self.eps_end - self.eps_start) * frac
            self.episode(eps, rng)

    def rollout(self) -> np.ndarray:
        return self.episode(0.0, None, learn=False)


def assign_qlearning(
    devices, tau_p: int, episodes: int, rng: RngStream, noise_term: float = 0.0
) -> PilotAssignment:
    """Pilot assignment from a tabular Q-learner; ``noise_term`` is ``noise_var / (p tau_p)``."""
    if len(devices) < 1 or episodes < 1:
        raise ValueError("need at least one device and episodes >= 1")
    learner = PilotQLearner([d.beta for d in devices], tau_p, noise_term)
    learner.train(episodes, rng)
    return PilotAssignment(tau_p, learner.rollout())


def noise_term(pilot_power: float, noise_var: float, tau_p: int) -> float:
    return noise_var / (pilot_power * tau_p)


def pci_per_device(assignment: PilotAssignment, betas, pilot_power: float, noise_var: float, tau_p=None):
    """``PCI_k = S_copilot / (beta_k + S_copilot + noise_var / (p tau_p))``."""
    betas = np.asarray(betas, dtype=float)
    if np.any(betas <= 0):
        raise ValueError("betas must be positive")
    tau = assignment.tau_p if tau_p is None else tau_p
    a = assignment.assignment
    group_sum = np.bincount(a, weights=betas, minlength=assignment.tau_p)[a]
    others = group_sum - betas
    counts = np.bincount(a, minlength=assignment.tau_p)[a]
    others = np.where(counts > 1, np.maximum(others, 0.0), 0.0)
    return others / (betas + others + noise_term(pilot_power, noise_var, tau))


def pci(assignment: PilotAssignment, betas, pilot_power: float, noise_var: float, tau_p=None) -> float:
    """Pilot Contamination Index: mean interference share of the co-pilot gains."""
    per = pci_per_device(assignment, betas, pilot_power, noise_var, tau_p)
    return float(per.mean()) if per.size else 0.0


def mmse_coefficients(assignment: PilotAssignment, betas, pilot_power: float, noise_var: float) -> np.ndarray:
    betas = np.asarray(betas, dtype=float)
    a = assignment.assignment
    group_sum = np.bincount(a, weights=betas, minlength=assignment.tau_p)[a]
    return betas / (group_sum + noise_term(pilot_power, noise_var, assignment.tau_p))


def estimate(
    channel: ChannelRealization,
    assignment: PilotAssignment,
    pilot_power: float,
    noise_var: float,
    method,
    rng: RngStream,
) -> EstimationResult:
    """Despread pilot observations and estimate every column of ``channel.H``.

    For pilot t, ``y_t = sum_{k on t} h_k + n / sqrt(p tau_p)`` with per-antenna
    noise CN(0, noise_var).  Noise is drawn only for pilots in use, in
    ascending pilot order.  LS returns ``y_t``; scalar MMSE scales it by
    ``beta_k / (sum_{co-pilot incl. k} beta_j + noise_var / (p tau_p))``.
    """
    try:
        method = EstimationMethod(method.upper() if isinstance(method, str) else method)
    except ValueError:
        raise ValueError(f"unknown estimation method {method!r}") from None
    H = channel.H
    N, K = H.shape
    if assignment.n_devices != K:
        raise ValueError("assignment does not match channel width")
    if pilot_power <= 0 or noise_var < 0:
        raise ValueError("need pilot_power > 0 and noise_var >= 0")
    tau = assignment.tau_p
    a = assignment.assignment
    # only pilots that carry a device are observed; noise is drawn per used pilot, ascending
    used, slot = np.unique(a, return_inverse=True)
    Y = np.zeros((N, used.size), dtype=np.complex128)
    np.add.at(Y.T, slot, H.T)
    noise = rng.complex_normal((used.size, N)).T
    Y += noise * np.sqrt(noise_var / (pilot_power * tau))
    H_hat = Y[:, slot]
    if method is EstimationMethod.MMSE:
        H_hat = H_hat * mmse_coefficients(assignment, channel.beta, pilot_power, noise_var)[None, :]
    err = np.sum(np.abs(H_hat - H) ** 2, axis=0)
    nmse = err / (N * channel.beta)
    return EstimationResult(H_hat=H_hat, nmse=nmse, method=method)
