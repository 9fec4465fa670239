"""Affine base-station power model and the energy-efficiency KPI."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class PowerParams:
    p_fixed_w: float = 10.0
    p_antenna_w: float = 0.4
    pa_efficiency: float = 0.39
    p_proc_coeff_w: float = 0.01
    bandwidth_hz: float = 20e6

    def __post_init__(self):
        if self.p_fixed_w < 0 or self.p_antenna_w < 0 or self.p_proc_coeff_w < 0:
            raise ValueError("power terms must be non-negative")
        if not (0.0 < self.pa_efficiency <= 1.0):
            raise ValueError("pa_efficiency must lie in (0, 1]")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def total_power(params: PowerParams, n_active_antennas: int, tx_powers_w, n_scheduled: int) -> float:
    """Fixed + per-chain circuit + PA-scaled radiated + processing power, in W."""
    if n_active_antennas < 0 or n_scheduled < 0:
        raise ValueError("counts must be non-negative")
    tx = float(np.sum(tx_powers_w)) if np.size(tx_powers_w) else 0.0
    return (
        params.p_fixed_w
        + n_active_antennas * params.p_antenna_w
        + tx / params.pa_efficiency
        + params.p_proc_coeff_w * n_active_antennas * n_scheduled
    )


def energy_efficiency(cell_se_bpshz: float, bandwidth_hz: float, total_power_w: float) -> float:
    """Bits per Joule."""
    if total_power_w <= 0:
        raise ValueError("total power must be positive")
    return cell_se_bpshz * bandwidth_hz / total_power_w
