"""Domain dataclasses: service types, KPI specs, users, resource grid, system parameters."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class ServiceType(enum.Enum):
    COMM = "comm"
    POS = "pos"
    SENSE = "sense"


class Direction(enum.Enum):
    HIGH = "high"  # larger achieved value is better (rate, detection probability)
    LOW = "low"    # smaller achieved value is better (latency, estimation variance)


@dataclass(frozen=True)
class KpiSpec:
    """Target and elasticity of a single KPI.

    target is the desired KPI level in that KPI's native unit; alpha steers how
    steeply value degrades with performance loss, beta sets the relative level
    beyond which the value is exactly zero.
    """

    direction: Direction
    target: float
    alpha: float
    beta: float
    weight: float

    def __post_init__(self):
        if not self.target > 0:
            raise ValueError(f"KPI target must be positive, got {self.target}")
        if not self.alpha > 0:
            raise ValueError(f"slope elasticity alpha must be positive, got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ValueError(f"range elasticity beta must lie in (0,1), got {self.beta}")
        if self.weight < 0:
            raise ValueError(f"fairness weight must be nonnegative, got {self.weight}")


@dataclass(frozen=True)
class UserService:
    """One user and its requested service.

    Geometry is relative to the base station at the origin. velocity_mps is kept
    for positioning users for data-model completeness only; no implemented
    formula reads its value. sense_range_m / false_alarm / sense_power_w apply
    to sensing users only.
    """

    index: int
    service: ServiceType
    angle_rad: float
    distance_m: float
    velocity_mps: float
    rcs_m2: float
    noise_w: float
    kpis: tuple[KpiSpec, ...]
    sense_range_m: float = 0.0
    false_alarm: float = 0.0
    sense_power_w: float = 0.0


@dataclass(frozen=True)
class RbGrid:
    """Time-frequency grid: M sub-bands by N sub-frames of B subcarriers x L symbols."""

    m_subbands: int
    n_subframes: int
    b_subcarriers: int
    l_symbols: int
    subcarrier_spacing_hz: float
    symbol_duration_s: float
    carrier_freq_hz: float

    def __post_init__(self):
        for name in ("m_subbands", "n_subframes", "b_subcarriers", "l_symbols"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("subcarrier_spacing_hz", "symbol_duration_s", "carrier_freq_hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def band_freq_hz(self, m):
        """Center frequency of sub-band m (1-based), offset from the carrier."""
        if not 1 <= m <= self.m_subbands:
            raise ValueError(f"sub-band index {m} outside 1..{self.m_subbands}")
        return m * self.b_subcarriers * self.subcarrier_spacing_hz + self.carrier_freq_hz


@dataclass(frozen=True)
class SystemParams:
    """Base-station wide constants."""

    n_tx_antennas: int
    p_max_w: float
    a_max: int
    bs_noise_w: float
    rician_factor: float
    speed_of_light: float = 299792458.0
    # Evaluate the positioning SNR with a doubled noise denominator (the
    # problem statement's literal constraint form) instead of the
    # estimation-theoretic convention used by default.
    pos_snr_halved: bool = False

    def __post_init__(self):
        if self.n_tx_antennas < 1:
            raise ValueError("need at least one transmit antenna")
        if not self.p_max_w > 0:
            raise ValueError("power budget must be positive")
        if self.a_max < 1:
            raise ValueError("per-RB service cap must be at least 1")

    @property
    def pos_noise_w(self) -> float:
        return (2.0 if self.pos_snr_halved else 1.0) * self.bs_noise_w
