"""Deterministic single-cell massive MIMO uplink simulator for dense IoT populations."""

__version__ = "0.1.0"
