"""Superframe timing and backoff arithmetic for the TDMA MAC.

Each WBAN hub opens a superframe of length ``T_s`` with a beacon, the
sensor sends its payload in the scheduled slots, the hub ACKs, and the rest
of the superframe is idle.  A failed transmission (no ACK) puts the sensor
into a random backoff of ``w`` slots drawn from ``{1..W}`` with
``W = lambda**b * CW_min`` at backoff stage ``b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# Supported rates (bit/s); only these carry PDR coefficients.
RATE_SET_BPS = (25_600.0, 51_200.0, 76_800.0, 102_400.0, 128_000.0)


class InvalidRateError(ValueError):
    """Raised when a data rate outside the configured rate set is used."""


@dataclass(frozen=True)
class MacParams:
    """Protocol timing and backoff constants.

    Durations are seconds, ``cw_min`` is in slots, rates are bit/s and the
    power range is in watts.
    """

    superframe_len: float = 0.080
    slot_len: float = 0.312e-3
    beacon_len: float = 20 * 8 / 25_600.0
    payload_len_bytes: int = 175
    ack_len: float = 10 * 8 / 25_600.0
    cw_min: int = 140
    max_backoff_stage: int = 4
    persistence: int = 2
    max_retry_limit: int | None = None
    rate_set: tuple[float, ...] = RATE_SET_BPS
    power_range: tuple[float, float] = (1e-5, 1e-3)

    def __post_init__(self):
        if self.max_retry_limit is None:
            object.__setattr__(self, "max_retry_limit", self.max_backoff_stage)
        object.__setattr__(self, "rate_set", tuple(float(r) for r in self.rate_set))
        object.__setattr__(self, "power_range", tuple(float(p) for p in self.power_range))
        if self.superframe_len <= 0 or self.slot_len <= 0:
            raise ValueError("superframe and slot lengths must be positive")
        if self.cw_min < 1:
            raise ValueError("cw_min must be a positive slot count")
        if self.max_backoff_stage < 0:
            raise ValueError("max_backoff_stage must be non-negative")
        if self.persistence < 2:
            raise ValueError("persistence must be >= 2")
        if self.max_retry_limit < self.max_backoff_stage:
            raise ValueError("max_retry_limit must be >= max_backoff_stage")
        if self.payload_len_bytes < 0:
            raise ValueError("payload length must be non-negative")
        if not self.rate_set:
            raise ValueError("rate_set is empty")
        if any(b <= a for a, b in zip(self.rate_set, self.rate_set[1:])):
            raise ValueError("rate_set must be strictly increasing")
        if any(r <= 0 for r in self.rate_set):
            raise ValueError("rates must be positive")
        p_min, p_max = self.power_range
        if not 0 < p_min <= p_max:
            raise ValueError("power_range must satisfy 0 < P_min <= P_max")
        for rate in self.rate_set:
            if idle_duration(rate, self) < -1e-12:
                raise ValueError(
                    f"beacon + payload + ACK exceed the superframe at rate {rate:g} bit/s"
                )

    @property
    def cw_max(self) -> int:
        return self.persistence**self.max_backoff_stage * self.cw_min

    @property
    def slots_per_superframe(self) -> float:
        return self.superframe_len / self.slot_len

    def with_(self, **changes) -> "MacParams":
        return replace(self, **changes)


@dataclass
class BackoffState:
    """Backoff stage ``b``, counter ``w`` (slots) and retries spent on the current packet."""

    stage: int = 0
    counter: int = 0
    retries_used: int = 0


def default_params(**overrides) -> MacParams:
    """MAC constants of the crowded-scenario evaluation (80 ms superframe)."""
    return MacParams(**overrides)


def validation_params(**overrides) -> MacParams:
    """Constants of the analytical-model validation run: 64 ms superframe of
    256 slots of 250 us, 32 kbit/s, beacon/payload/ACK of 30/110/10 bytes,
    CW_min = 64 and m = 4."""
    rate = 32_000.0
    base = dict(
        superframe_len=0.064,
        slot_len=250e-6,
        beacon_len=30 * 8 / rate,
        payload_len_bytes=110,
        ack_len=10 * 8 / rate,
        cw_min=64,
        max_backoff_stage=4,
        rate_set=(rate,),
    )
    base.update(overrides)
    return MacParams(**base)


def contention_window(stage: int, params: MacParams, cw_min: int | None = None) -> int:
    """Backoff window (slots) at a given stage; 0 on the first attempt.

    ``cw_min`` overrides ``params.cw_min`` (the backoff game adapts it).
    """
    if stage < 0:
        raise ValueError("stage must be >= 0")
    if stage == 0:
        return 0
    cw = params.cw_min if cw_min is None else cw_min
    return params.persistence ** min(stage, params.max_backoff_stage) * cw


def draw_backoff(window: int, rng: np.random.Generator) -> int:
    """Uniform draw from ``{1..window}``; zero for an empty window."""
    if window < 0:
        raise ValueError("window must be >= 0")
    if window == 0:
        return 0
    return int(rng.integers(1, window + 1))


def payload_duration(rate: float, params: MacParams) -> float:
    """Airtime of the payload at ``rate`` (seconds)."""
    if not any(math.isclose(rate, r, rel_tol=1e-12) for r in params.rate_set):
        raise InvalidRateError(f"rate {rate!r} not in rate set {params.rate_set}")
    return 8.0 * params.payload_len_bytes / rate


def idle_duration(rate: float, params: MacParams) -> float:
    """Inactive remainder of the superframe, T_s - T_beacon - T_payload - T_ack."""
    t_payload = 8.0 * params.payload_len_bytes / rate
    return params.superframe_len - params.beacon_len - t_payload - params.ack_len
