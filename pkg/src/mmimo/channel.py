"""Single-cell uplink geometry, large-scale fading and correlated Rayleigh channels."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .randcore import RngStream, bessel_j0, cholesky_psd

MIN_DOPPLER_HZ = 5.0
MAX_DOPPLER_HZ = 50.0


class TrafficClass(str, enum.Enum):
    PERIODIC_SENSOR = "periodic_sensor"
    DELAY_SENSITIVE = "delay_sensitive"


@dataclass(frozen=True)
class DeviceProfile:
    id: int
    position: tuple[float, float]
    distance_m: float
    beta: float
    doppler_hz: float
    mobile: bool
    pilot: int | None = None
    traffic_class: TrafficClass = TrafficClass.PERIODIC_SENSOR

    @property
    def azimuth(self) -> float:
        return math.atan2(self.position[1], self.position[0])


@dataclass
class ChannelRealization:
    """``H`` is N x K; column k is device k's channel."""

    H: np.ndarray
    beta: np.ndarray
    r: np.ndarray
    theta: np.ndarray

    @property
    def n_antennas(self) -> int:
        return self.H.shape[0]

    @property
    def n_devices(self) -> int:
        return self.H.shape[1]

    def fresh_columns(self, columns, rng: RngStream) -> np.ndarray:
        """Independent draws for ``columns`` with the same beta_k and R_k."""
        columns = np.asarray(columns, dtype=np.intp)
        if getattr(self, "_phase", None) is None:
            self._phase = _steering_columns(self.n_antennas, self.theta)
        return correlated_columns(
            self.n_antennas, self.beta[columns], self.r[columns], self.theta[columns], rng,
            phase=self._phase[:, columns],
        )


def path_loss_db(distance_m):
    """Distance-dependent path gain in dB: ``-30.5 - 36.7 log10(d)``."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d < 1.0):
        raise ValueError("path loss model needs distance >= 1 m")
    out = -30.5 - 36.7 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def large_scale_gain(distance_m, shadow_sigma_db: float, rng: RngStream):
    """Linear gain with log-normal shadowing; one normal draw per distance."""
    if shadow_sigma_db < 0:
        raise ValueError("shadow_sigma_db must be >= 0")
    pl = np.asarray(path_loss_db(distance_m), dtype=float)
    x = shadow_sigma_db * rng.std_normal(pl.size).reshape(pl.shape)
    beta = 10.0 ** ((pl + x) / 10.0)
    return float(beta) if beta.ndim == 0 else beta


def drop_devices(
    K: int,
    cell_radius_m: float,
    min_distance_m: float,
    mobile_fraction: float,
    rng: RngStream,
    shadow_sigma_db: float = 8.0,
    delay_sensitive_fraction: float = 0.0,
) -> list[DeviceProfile]:
    """Place K devices uniformly over the annulus ``[min_distance_m, cell_radius_m]``.

    Exactly ``round(mobile_fraction * K)`` devices are mobile, with Doppler
    uniform in [5, 50] Hz; the same counting rule picks delay-sensitive devices.
    Draw order: radii, azimuths, mobility permutation, Doppler, shadowing,
    traffic permutation.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not (0 < min_distance_m < cell_radius_m):
        raise ValueError("need 0 < min_distance_m < cell_radius_m")
    if not (0.0 <= mobile_fraction <= 1.0) or not (0.0 <= delay_sensitive_fraction <= 1.0):
        raise ValueError("fractions must lie in [0, 1]")
    if min_distance_m < 1.0:
        raise ValueError("min_distance_m must be >= 1 m for the path-loss model")

    u = rng.uniform(K)
    dist = np.sqrt(u * (cell_radius_m ** 2 - min_distance_m ** 2) + min_distance_m ** 2)
    phi = 2.0 * math.pi * rng.uniform(K)
    n_mobile = int(round(mobile_fraction * K))
    mobile = np.zeros(K, dtype=bool)
    mobile[rng.permutation(K)[:n_mobile]] = True
    doppler = MIN_DOPPLER_HZ + (MAX_DOPPLER_HZ - MIN_DOPPLER_HZ) * rng.uniform(K)
    doppler = np.where(mobile, doppler, 0.0)
    beta = np.atleast_1d(large_scale_gain(dist, shadow_sigma_db, rng))
    n_ds = int(round(delay_sensitive_fraction * K))
    delay_sensitive = np.zeros(K, dtype=bool)
    delay_sensitive[rng.permutation(K)[:n_ds]] = True

    devices = []
    for k in range(K):
        devices.append(
            DeviceProfile(
                id=k,
                position=(float(dist[k] * math.cos(phi[k])), float(dist[k] * math.sin(phi[k]))),
                distance_m=float(dist[k]),
                beta=float(beta[k]),
                doppler_hz=float(doppler[k]),
                mobile=bool(mobile[k]),
                traffic_class=(
                    TrafficClass.DELAY_SENSITIVE if delay_sensitive[k] else TrafficClass.PERIODIC_SENSOR
                ),
            )
        )
    return devices


def correlation_matrix(N: int, r: float, theta: float) -> np.ndarray:
    """Exponential ULA correlation ``[R]_{mn} = r^|m-n| exp(i theta (m-n))``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not (0.0 <= r < 1.0):
        raise ValueError(f"correlation r must lie in [0, 1), got {r}")
    m = np.arange(N)
    diff = m[:, None] - m[None, :]
    return (r ** np.abs(diff)) * np.exp(1j * theta * diff)


@lru_cache(maxsize=32)
def _base_factor(N: int, r: float) -> np.ndarray:
    L = cholesky_psd(correlation_matrix(N, r, 0.0))
    L.setflags(write=False)
    return L


def _steering_columns(N: int, theta) -> np.ndarray:
    return np.exp(1j * np.asarray(theta, dtype=float)[None, :] * np.arange(N)[:, None])


def correlated_columns(N: int, beta, r, theta, rng: RngStream, phase=None) -> np.ndarray:
    """Columns ``sqrt(beta_k) L_k g_k`` with ``L_k = cholesky_psd(R_k)``.

    ``R_k = D R_0 D^H`` with ``D = diag(exp(i theta_k m))``, so its Cholesky
    factor is ``D L_0 D^H`` and one factor per distinct ``r`` suffices.
    """
    beta = np.asarray(beta, dtype=float)
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    K = beta.size
    g = rng.complex_normal((K, N)).T
    out = np.empty((N, K), dtype=np.complex128)
    if K == 0:
        return out
    if phase is None:
        phase = _steering_columns(N, theta)
    levels = np.unique(r) if r.size > 1 and np.any(r != r[0]) else r[:1]
    for rv in levels:
        sel = np.flatnonzero(r == rv) if levels.size > 1 else slice(None)
        if rv == 0.0:
            out[:, sel] = g[:, sel]
            continue
        L0 = _base_factor(N, float(rv))
        out[:, sel] = phase[:, sel] * (L0 @ (np.conj(phase[:, sel]) * g[:, sel]))
    return out * np.sqrt(beta)[None, :]


def steering_phase(devices) -> np.ndarray:
    """Per-device ``theta = pi sin(azimuth)`` for the half-wavelength ULA."""
    return np.array([math.pi * math.sin(d.azimuth) for d in devices])


def draw_channel(devices, N: int, rng: RngStream, corr_r: float = 0.5) -> ChannelRealization:
    if N < 1:
        raise ValueError("N must be >= 1")
    beta = np.array([d.beta for d in devices], dtype=float)
    if np.any(beta <= 0):
        raise ValueError("all large-scale gains must be positive")
    if not (0.0 <= corr_r < 1.0):
        raise ValueError(f"correlation r must lie in [0, 1), got {corr_r}")
    r = np.full(beta.size, float(corr_r))
    theta = steering_phase(devices)
    H = correlated_columns(N, beta, r, theta, rng)
    return ChannelRealization(H=H, beta=beta, r=r, theta=theta)


def aging_coefficient(doppler_hz: float, slot_seconds: float) -> float:
    """Jakes temporal correlation ``J0(2 pi f_D T)`` across one slot."""
    if doppler_hz < 0 or slot_seconds <= 0:
        raise ValueError("need doppler_hz >= 0 and slot_seconds > 0")
    if doppler_hz == 0:
        return 1.0
    return bessel_j0(2.0 * math.pi * doppler_hz * slot_seconds)


def age_channel(
    channel: ChannelRealization, rho_per_device, rng: RngStream, columns=None
) -> ChannelRealization:
    """Gauss-Markov step ``h <- rho h + sqrt(1 - rho^2) h_fresh``.

    ``columns`` restricts the update (``rho_per_device`` then lines up with it).
    Columns with ``rho == 1`` are copied through without consuming draws.
    """
    rho = np.atleast_1d(np.asarray(rho_per_device, dtype=float))
    if np.any(np.abs(rho) > 1.0):
        raise ValueError("|rho| must be <= 1")
    cols = np.arange(channel.n_devices) if columns is None else np.asarray(columns, dtype=np.intp)
    if rho.size != cols.size:
        raise ValueError("rho_per_device must match the aged columns")
    H = channel.H.copy()
    moving = rho != 1.0
    if np.any(moving):
        idx = cols[moving]
        rr = rho[moving]
        fresh = channel.fresh_columns(idx, rng)
        H[:, idx] = rr[None, :] * H[:, idx] + np.sqrt(1.0 - rr ** 2)[None, :] * fresh
    return ChannelRealization(H=H, beta=channel.beta, r=channel.r, theta=channel.theta)
