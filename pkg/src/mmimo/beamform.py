"""Receive combining, hybrid beam selection, exact antenna selection and SINR."""
from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

GRAM_COND_LIMIT = 1e12


class CombinerMethod(str, enum.Enum):
    MRC = "MRC"
    ZF = "ZF"
    HYBRID = "HYBRID"


class ZeroColumnError(ValueError):
    """A combiner or channel column that must be non-zero is all zeros."""

    def __init__(self, columns):
        self.columns = [int(c) for c in columns]
        super().__init__(f"all-zero column for device(s) {self.columns}")


@dataclass
class CombinerMatrix:
    V: np.ndarray
    method: CombinerMethod


@dataclass
class AntennaSelection:
    active: np.ndarray
    utilities: np.ndarray
    powers_w: np.ndarray
    budget_w: float

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.active))

    @property
    def value(self) -> float:
        return math.fsum(self.utilities[self.active])

    @property
    def power_w(self) -> float:
        return math.fsum(self.powers_w[self.active])


def _zero_columns(M: np.ndarray) -> np.ndarray:
    return np.flatnonzero(~np.any(M != 0, axis=0))


def mrc(H_hat: np.ndarray) -> CombinerMatrix:
    zero = _zero_columns(H_hat)
    if zero.size:
        raise ZeroColumnError(zero)
    return CombinerMatrix(np.array(H_hat, dtype=np.complex128), CombinerMethod.MRC)


def zf(H_hat: np.ndarray, ridge: float = 0.0) -> CombinerMatrix:
    """``V = H (H^H H + ridge I)^-1``.

    A zero ``ridge`` is raised to ``1e-10 trace(G) / K`` when the Gram matrix
    ``G`` has condition number above 1e12.
    """
    N, K = H_hat.shape
    if K > N:
        raise ValueError(f"zero-forcing needs K <= N (K={K}, N={N})")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    G = H_hat.conj().T @ H_hat
    if ridge == 0.0 and np.linalg.cond(G) > GRAM_COND_LIMIT:
        ridge = 1e-10 * np.trace(G).real / K
    if ridge:
        G = G + ridge * np.eye(K)
    V = np.linalg.solve(G.T, H_hat.T).T  # H G^-1 without forming the inverse
    return CombinerMatrix(V, CombinerMethod.ZF)


def uplink_sinr(H_true: np.ndarray, V, tx_powers, noise_var: float) -> np.ndarray:
    """``p_k |v_k^H h_k|^2 / (sum_{j != k} p_j |v_k^H h_j|^2 + noise_var ||v_k||^2)``."""
    V = V.V if isinstance(V, CombinerMatrix) else np.asarray(V)
    p = np.asarray(tx_powers, dtype=float)
    if V.shape != H_true.shape or p.size != H_true.shape[1]:
        raise ValueError("combiner, channel and power shapes disagree")
    zero = _zero_columns(V)
    if zero.size:
        raise ZeroColumnError(zero)
    gains = np.abs(V.conj().T @ H_true) ** 2 * p[None, :]
    desired = np.diag(gains).copy()
    interference = gains.sum(axis=1) - desired
    noise = noise_var * np.sum(np.abs(V) ** 2, axis=0)
    return desired / (np.maximum(interference, 0.0) + noise)


def spectral_efficiency(sinr, pilot_overhead: float):
    """Per-device ``(1 - overhead) log2(1 + SINR)`` and their cell sum, in bps/Hz."""
    if not (0.0 <= pilot_overhead < 1.0):
        raise ValueError("pilot_overhead must lie in [0, 1)")
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0):
        raise ValueError("SINR must be non-negative")
    per = (1.0 - pilot_overhead) * np.log2(1.0 + sinr)
    return per, float(per.sum())


@lru_cache(maxsize=16)
def _dft(N: int) -> np.ndarray:
    n = np.arange(N)
    F = np.exp(2j * np.pi * np.outer(n, n) / N) / np.sqrt(N)
    F.setflags(write=False)
    return F


def dft_codebook(N: int) -> np.ndarray:
    """Unitary N x N DFT beams, constant modulus ``1/sqrt(N)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return _dft(N).copy()


def hybrid_select(H_hat: np.ndarray, codebook: np.ndarray, n_rf: int):
    """Pick ``n_rf`` codebook beams greedily by captured channel energy.

    Returns ``(F, H_eff, beams)`` with ``H_eff = F^H H_hat``.  Orthogonal beams
    make the marginal gain of a beam its own energy, so the greedy sequence is
    the energy ranking (ties to the lower beam index).
    """
    N = H_hat.shape[0]
    if not (1 <= n_rf <= N):
        raise ValueError(f"n_rf must lie in [1, N={N}], got {n_rf}")
    if n_rf > codebook.shape[1]:
        raise ValueError("codebook has fewer beams than n_rf")
    proj = codebook.conj().T @ H_hat
    energy = np.sum(proj.real ** 2 + proj.imag ** 2, axis=1)
    beams = np.lexsort((np.arange(energy.size), -energy))[:n_rf]
    F = codebook[:, beams]
    return F, proj[beams], beams


def antenna_utilities(H_hat: np.ndarray) -> np.ndarray:
    """Channel energy captured per antenna, ``sum_k |h_km|^2``."""
    return np.sum(np.abs(H_hat) ** 2, axis=1)


def _better(cand, best) -> bool:
    # cand/best: (value, power, indices); more value, then less power, then smaller index tuple
    if best is None:
        return True
    if cand[0] != best[0]:
        return cand[0] > best[0]
    if cand[1] != best[1]:
        return cand[1] < best[1]
    return cand[2] < best[2]


def antenna_select_exact(utilities, powers_w, budget_w: float) -> AntennaSelection:
    """Exact 0/1 knapsack: maximise total utility under the power budget.

    Depth-first branch and bound over items sorted by utility/power, bounded
    by the fractional relaxation.  Among optimal sets the one with lower total
    power wins, then the lexicographically smallest sorted index tuple.
    """
    u = np.asarray(utilities, dtype=float)
    p = np.asarray(powers_w, dtype=float)
    if u.shape != p.shape:
        raise ValueError("utilities and powers must have equal length")
    if budget_w < 0:
        raise ValueError("budget must be >= 0")
    if np.any(u < 0) or np.any(p <= 0):
        raise ValueError("need utilities >= 0 and powers > 0")

    if p.size and np.all(p == p[0]):
        return _select_equal_power(u, p, float(budget_w))

    # zero-utility antennas only add power, so no tie-broken optimum contains them
    items = [i for i in np.lexsort((np.arange(u.size), -(u / p))) if u[i] > 0]
    n = len(items)
    iu = [float(u[i]) for i in items]
    ip = [float(p[i]) for i in items]
    cum_p = [0.0]
    cum_u = [0.0]
    for a, b in zip(ip, iu):
        cum_p.append(cum_p[-1] + a)
        cum_u.append(cum_u[-1] + b)
    suffix_min_p = [math.inf] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix_min_p[i] = min(ip[i], suffix_min_p[i + 1])
    tol = 1e-12 * max(cum_u[-1], 1e-300)

    def bound(level: int, cap: float) -> float:
        # fractional fill of items[level:] into capacity cap
        j = bisect.bisect_right(cum_p, cum_p[level] + cap, lo=level) - 1
        val = cum_u[j] - cum_u[level]
        if j < n:
            val += (cap - (cum_p[j] - cum_p[level])) * iu[j] / ip[j]
        return val

    best = None
    chosen: list[int] = []

    def leaf():
        nonlocal best
        idx = tuple(sorted(int(items[c]) for c in chosen))
        cand = (math.fsum(u[list(idx)]), math.fsum(p[list(idx)]), idx)
        if cand[1] <= budget_w and _better(cand, best):
            best = cand

    def visit(level: int, cap: float, value: float):
        if level == n or suffix_min_p[level] > cap:
            leaf()
            return
        if best is not None and value + bound(level, cap) < best[0] - tol:
            return
        if ip[level] <= cap:
            chosen.append(level)
            visit(level + 1, cap - ip[level], value + iu[level])
            chosen.pop()
        visit(level + 1, cap, value)

    visit(0, float(budget_w), 0.0)
    active = np.zeros(u.size, dtype=bool)
    active[list(best[2])] = True
    return AntennaSelection(active=active, utilities=u, powers_w=p, budget_w=float(budget_w))


def _select_equal_power(u: np.ndarray, p: np.ndarray, budget_w: float) -> AntennaSelection:
    # equal weights: the optimum is the M largest positive utilities, lower index first on ties
    M = int(budget_w // p[0]) if p[0] > 0 else u.size
    while M > 0 and math.fsum([p[0]] * M) > budget_w:  # guard the floor against rounding
        M -= 1
    order = np.lexsort((np.arange(u.size), -u))
    take = [i for i in order[:M] if u[i] > 0]
    active = np.zeros(u.size, dtype=bool)
    active[take] = True
    return AntennaSelection(active=active, utilities=u, powers_w=p, budget_w=budget_w)


def antenna_select_exhaustive(utilities, powers_w, budget_w: float) -> AntennaSelection:
    """Reference enumeration over all 2^N subsets (small N only)."""
    u = np.asarray(utilities, dtype=float)
    p = np.asarray(powers_w, dtype=float)
    n = u.size
    best = None
    for mask in range(1 << n):
        idx = tuple(i for i in range(n) if mask >> i & 1)
        power = math.fsum(p[list(idx)])
        if power > budget_w:
            continue
        cand = (math.fsum(u[list(idx)]), power, idx)
        if _better(cand, best):
            best = cand
    active = np.zeros(n, dtype=bool)
    active[list(best[2])] = True
    return AntennaSelection(active=active, utilities=u, powers_w=p, budget_w=float(budget_w))


class Receiver:
    """Per-frame uplink receive chain: optional antenna selection, then combining.

    ``__call__`` takes estimates and true channels of the granted devices and
    returns ``(sinr, n_chains)`` where ``n_chains`` counts powered receive chains
    (selected antennas for digital combiners, RF chains for hybrid).
    """

    def __init__(
        self,
        combiner: str,
        n_antennas: int,
        tx_power_w: float,
        noise_var: float,
        n_rf: int | None = None,
        antenna_budget_w: float | None = None,
        antenna_powers_w=None,
    ):
        self.method = CombinerMethod(combiner.upper())
        self.n_antennas = n_antennas
        self.tx_power_w = tx_power_w
        self.noise_var = noise_var
        self.n_rf = n_rf if n_rf is not None else n_antennas
        if self.method is CombinerMethod.HYBRID and not (1 <= self.n_rf <= n_antennas):
            raise ValueError("n_rf must lie in [1, n_antennas]")
        self.antenna_budget_w = antenna_budget_w
        if antenna_powers_w is None:
            antenna_powers_w = np.full(n_antennas, 1.0)
        self.antenna_powers_w = np.asarray(antenna_powers_w, dtype=float)

    @property
    def selects_antennas(self) -> bool:
        return self.antenna_budget_w is not None

    def idle_chains(self) -> int:
        if self.selects_antennas:
            return 0
        return self.n_rf if self.method is CombinerMethod.HYBRID else self.n_antennas

    def combine(self, H_hat: np.ndarray):
        """Combiner for ``H_hat`` plus the active antenna rows and chain count."""
        rows = np.arange(H_hat.shape[0])
        if self.selects_antennas:
            sel = antenna_select_exact(antenna_utilities(H_hat), self.antenna_powers_w, self.antenna_budget_w)
            rows = np.flatnonzero(sel.active)
            H_hat = H_hat[rows]
        if rows.size == 0:
            return None, rows, 0
        if self.method is CombinerMethod.MRC:
            return mrc(H_hat).V, rows, rows.size
        if self.method is CombinerMethod.ZF:
            return zf(H_hat).V, rows, rows.size
        # analog beams stay those of the full array, thinned to the active elements
        n_rf = min(self.n_rf, rows.size)
        F, H_eff, _ = hybrid_select(H_hat, _dft(self.n_antennas)[rows], n_rf)
        return F @ zf(H_eff).V, rows, n_rf

    def __call__(self, H_hat: np.ndarray, H_true: np.ndarray):
        V, rows, chains = self.combine(H_hat)
        k = H_hat.shape[1]
        if V is None:
            return np.zeros(k), 0
        p = np.full(k, self.tx_power_w)
        return uplink_sinr(H_true[rows], V, p, self.noise_var), chains
