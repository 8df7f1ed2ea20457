"""Event-driven simulation of N unsynchronised WBAN superframe schedules.

Every WBAN runs its own superframe grid with a random initial phase.  A
superframe carries beacon, payload and ACK; the payload outcome is drawn
from the PDR at the SINR seen over the payload, where each interferer's
received power is weighted by the fraction of the payload it overlaps.
After a failure the next superframe starts ``w`` backoff slots after the
current one ends, so a backoff shifts the WBAN's grid; after a success or a
discard the next superframe follows immediately.

Optional games: the link game re-optimises (P, R) after every transmission
against the current gains; the backoff game re-optimises CW_min after every
failure from the hub's own counters.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from wbancoex.backoffgame import (
    BackoffGameConfig,
    ContentionEstimate,
    best_response_cw,
    update_estimates,
)
from wbancoex.channel import GainMatrix, SyntheticChannel, SyntheticChannelConfig, TraceFormatError
from wbancoex.linkgame import ActionProfile, LinkGameConfig, PdrModel, best_response_link, pdr, sinr
from wbancoex.mac import BackoffState, MacParams, contention_window, draw_backoff, payload_duration

log = logging.getLogger(__name__)

MODES = ("baseline-tdma", "link-game", "backoff-game", "both")


@dataclass(frozen=True)
class PowerModel:
    """Affine circuit power: ``P_tx / efficiency + fixed`` (watts)."""

    efficiency: float = 0.25
    fixed: float = 3e-3

    def circuit_power(self, p_tx):
        return np.asarray(p_tx) / self.efficiency + self.fixed


@dataclass
class SimConfig:
    n: int
    superframes: int = 10_000
    seed: int = 0
    mode: str = "baseline-tdma"
    outcome: str = "sinr"  # or "collision": PDR 0 on any overlap, 1 otherwise
    interference: str = "average"  # or "min-sinr"
    mac: MacParams = field(default_factory=MacParams)
    link: LinkGameConfig = field(default_factory=LinkGameConfig)
    backoff: BackoffGameConfig = field(default_factory=BackoffGameConfig)
    pdr_model: PdrModel = field(default_factory=PdrModel)
    power_model: PowerModel = field(default_factory=PowerModel)
    baseline_power: float | None = None
    baseline_rate: float | None = None
    estimator_window: int | None = None
    record_series: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.superframes < 1:
            raise ValueError("superframes must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.outcome not in ("sinr", "collision"):
            raise ValueError("outcome must be 'sinr' or 'collision'")
        if self.interference not in ("average", "min-sinr"):
            raise ValueError("interference must be 'average' or 'min-sinr'")

    @property
    def link_active(self) -> bool:
        return self.mode in ("link-game", "both")

    @property
    def backoff_active(self) -> bool:
        return self.mode in ("backoff-game", "both")


@dataclass
class Payload:
    wban: int
    start: float
    end: float
    power: float
    rate: float


@dataclass
class TxResult:
    success: bool
    overlapped: bool
    sinr: float
    pdr: float


@dataclass
class WbanSimState:
    mac: BackoffState
    power: float
    rate: float
    cw: int
    phase_offset: float
    estimate: ContentionEstimate
    packet_attempts: int = 0
    packet_delay: float = 0.0
    recent: deque = field(default_factory=lambda: deque(maxlen=3))


def overlap_fraction(own: Payload, other: Payload) -> float:
    span = min(own.end, other.end) - max(own.start, other.start)
    return max(0.0, span) / (own.end - own.start)


def _peak_interference(own: Payload, others, gains: GainMatrix) -> float:
    """Largest instantaneous interference over the payload."""
    edges = []
    for o in others:
        s, e = max(own.start, o.start), min(own.end, o.end)
        if e > s:
            p = gains.gains[own.wban, o.wban] * o.power
            edges.append((s, p))
            edges.append((e, -p))
    edges.sort(key=lambda x: (x[0], x[1]))
    level = peak = 0.0
    for _, d in edges:
        level += d
        peak = max(peak, level)
    return peak


def resolve_transmission(own: Payload, others, gains: GainMatrix, model: PdrModel, rng,
                         outcome: str = "sinr", interference: str = "average") -> TxResult:
    """Decide one payload: SINR from overlap-weighted interference, then a
    Bernoulli draw at the PDR of that SINR."""
    i = own.wban
    fracs = [(o, overlap_fraction(own, o)) for o in others if o.wban != i]
    fracs = [(o, f) for o, f in fracs if f > 0]
    overlapped = bool(fracs)
    if outcome == "collision":
        return TxResult(not overlapped, overlapped, math.nan, 0.0 if overlapped else 1.0)
    if interference == "min-sinr":
        interf = _peak_interference(own, [o for o, _ in fracs], gains)
    else:
        interf = sum(f * gains.gains[i, o.wban] * o.power for o, f in fracs)
    signal = gains.gains[i, i] * own.power
    gamma = signal / (interf + gains.noise_power) if interf + gains.noise_power > 0 else math.inf
    prob = 1.0 if math.isinf(gamma) else float(pdr(gamma, own.rate, model))
    return TxResult(bool(rng.random() < prob), overlapped, gamma, prob)


@dataclass
class ScenarioMetrics:
    n: int
    mode: str
    seed: int
    duration: float
    attempts: np.ndarray
    successes: np.ndarray
    overlaps: np.ndarray
    drops: np.ndarray
    delivered_bits: np.ndarray
    delivered_airtime: np.ndarray
    energy: np.ndarray
    delay_sum: np.ndarray
    delay_count: np.ndarray
    generated: np.ndarray
    in_flight: np.ndarray
    backoff_slots: np.ndarray
    series: list = field(default_factory=list)

    @property
    def delivered(self) -> np.ndarray:
        return self.successes

    def goodput(self) -> np.ndarray:
        """Per-WBAN fraction of time spent delivering payload."""
        return self.delivered_airtime / self.duration

    def throughput(self) -> np.ndarray:
        """Per-WBAN delivered payload bits per second."""
        return self.delivered_bits / self.duration

    def pdr(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.successes / self.attempts

    def mean_delay(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.delay_sum / self.delay_count

    def drop_rate(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.drops / (self.successes + self.drops)

    def tau(self) -> np.ndarray:
        """Transmissions per chain step (a step is a superframe or a backoff slot)."""
        return self.attempts / (self.attempts + self.backoff_slots)

    def collision_prob(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.overlaps / self.attempts

    def summary(self) -> dict:
        bits = self.delivered_bits.sum()
        return dict(
            mode=self.mode,
            n=self.n,
            seed=self.seed,
            duration_s=self.duration,
            goodput=float(self.goodput().sum()),
            throughput_bps=float(self.throughput().sum()),
            tau=_ratio(self.attempts.sum(), self.attempts.sum() + self.backoff_slots.sum()),
            pdr=_ratio(self.successes.sum(), self.attempts.sum()),
            mean_delay_s=_ratio(self.delay_sum.sum(), self.delay_count.sum()),
            drop_rate=_ratio(self.drops.sum(), self.successes.sum() + self.drops.sum()),
            collision_prob=_ratio(self.overlaps.sum(), self.attempts.sum()),
            energy_per_bit=float(self.energy.sum() / bits) if bits > 0 else None,
            generated=int(self.generated.sum()),
            delivered=int(self.successes.sum()),
            dropped=int(self.drops.sum()),
            in_flight=int(self.in_flight.sum()),
        )


def _ratio(a, b):
    return float(a / b) if b > 0 else None


def energy_per_bit(metrics: ScenarioMetrics, power_model: PowerModel | None = None, powers=None):
    """Circuit energy per delivered bit (J/bit); None when nothing was delivered.

    With ``power_model`` and per-transmission ``powers``/airtimes in the
    series, energy is recomputed under that model; otherwise the energy
    accumulated during the run is used.
    """
    bits = metrics.delivered_bits.sum()
    if bits <= 0:
        return None
    if power_model is None:
        return float(metrics.energy.sum() / bits)
    if not metrics.series:
        raise ValueError("recomputing energy needs the per-transmission series")
    tx_power = np.array([r["power"] for r in metrics.series])
    airtime = np.array([r["airtime"] for r in metrics.series])
    return float(np.sum(power_model.circuit_power(tx_power) * airtime) / bits)


def default_channel(cfg: SimConfig, **overrides) -> SyntheticChannel:
    kw = dict(n=cfg.n, seed=cfg.seed + 7_919, superframe_len=cfg.mac.superframe_len)
    kw.update(overrides)
    return SyntheticChannel(SyntheticChannelConfig(**kw))


class _NoiseOnly:
    """Constant unit gains, zero noise: used by the pure collision model."""

    def __init__(self, n):
        self.gm = GainMatrix(np.ones((n, n)), 0.0, 0)

    def matrix(self, k):
        return self.gm


SERIES_FIELDS = (
    "sf", "wban_id", "start", "power", "rate", "cw", "stage", "success", "overlapped",
    "sinr_db", "airtime", "tau_est", "p_est", "cw_star",
)


def run_scenario(cfg: SimConfig, channel=None) -> ScenarioMetrics:
    """Simulate ``cfg.superframes`` superframe durations of wall time."""
    mac = cfg.mac
    n = cfg.n
    rng = np.random.default_rng(cfg.seed)
    if channel is None:
        channel = _NoiseOnly(n) if cfg.outcome == "collision" else default_channel(cfg)
    if getattr(channel, "n", n) != n:
        raise TraceFormatError(f"channel has {channel.n} WBANs, scenario has {n}")
    t_s, t_slot, t_b = mac.superframe_len, mac.slot_len, mac.beacon_len
    horizon = cfg.superframes * t_s
    p0 = mac.power_range[1] if cfg.baseline_power is None else cfg.baseline_power
    r0 = mac.rate_set[0] if cfg.baseline_rate is None else cfg.baseline_rate
    payload_duration(r0, mac)

    states = []
    for i in range(n):
        states.append(
            WbanSimState(
                mac=BackoffState(),
                power=p0,
                rate=r0,
                cw=mac.cw_min,
                phase_offset=float(rng.uniform(0.0, t_s)),
                estimate=ContentionEstimate(window_len=cfg.estimator_window),
            )
        )

    z = lambda: np.zeros(n)  # noqa: E731
    attempts, successes, overlaps, drops = z(), z(), z(), z()
    bits, airtime_ok, energy, delay_sum, delay_count, slots = z(), z(), z(), z(), z(), z()
    generated = np.ones(n)
    series = []
    pm = cfg.power_model
    payload_bits = 8.0 * mac.payload_len_bytes

    heap = [(s.phase_offset, i, 0) for i, s in enumerate(states)]
    heapq.heapify(heap)
    current: dict[int, Payload] = {}

    def gains_at(t):
        return channel.matrix(int(t // t_s))

    while heap:
        t, i, kind = heapq.heappop(heap)
        st = states[i]
        if kind == 0:
            if t + t_s > horizon:
                continue
            t_p = payload_duration(st.rate, mac)
            pay = Payload(i, t + t_b, t + t_b + t_p, st.power, st.rate)
            current[i] = pay
            st.recent.append(pay)
            heapq.heappush(heap, (t + t_s, i, 1))
            continue

        pay = current.pop(i)
        gm = gains_at(pay.start)
        others = [p for j, s in enumerate(states) if j != i for p in s.recent]
        res = resolve_transmission(pay, others, gm, cfg.pdr_model, rng, cfg.outcome, cfg.interference)
        t_p = pay.end - pay.start
        attempts[i] += 1
        overlaps[i] += res.overlapped
        energy[i] += float(pm.circuit_power(pay.power)) * t_p
        update_estimates(st.estimate, "tx_success" if res.success else "tx_fail")

        if cfg.link_active:
            _update_link(i, states, gm, cfg)

        w = 0
        cw_star = None
        if res.success:
            successes[i] += 1
            bits[i] += payload_bits
            airtime_ok[i] += t_p
            if st.packet_attempts > 0:
                delay_sum[i] += st.packet_delay + t_s
            delay_count[i] += 1
            st.mac = BackoffState()
            st.packet_attempts, st.packet_delay = 0, 0.0
            generated[i] += 1
        else:
            st.packet_attempts += 1
            st.packet_delay += t_s
            if cfg.backoff_active:
                cw_star = _update_cw(i, states, gm, cfg)
            stage = st.mac.stage + 1
            if stage > mac.max_retry_limit:
                drops[i] += 1
                delay_sum[i] += st.packet_delay
                delay_count[i] += 1
                st.mac = BackoffState()
                st.packet_attempts, st.packet_delay = 0, 0.0
                generated[i] += 1
            else:
                w = draw_backoff(contention_window(stage, mac, st.cw), rng)
                st.mac = BackoffState(stage, w, st.mac.retries_used + 1)
                st.packet_delay += w * t_slot
                slots[i] += w
                update_estimates(st.estimate, "slot_tick", w)

        if cfg.record_series:
            series.append(
                dict(
                    sf=int(t // t_s), wban_id=i, start=pay.start - t_b, power=pay.power, rate=pay.rate,
                    cw=st.cw, stage=st.mac.stage, success=int(res.success), overlapped=int(res.overlapped),
                    sinr_db=10 * math.log10(res.sinr) if res.sinr > 0 and math.isfinite(res.sinr) else None,
                    airtime=t_p, tau_est=st.estimate.tau_est, p_est=st.estimate.p_est, cw_star=cw_star,
                )
            )
        heapq.heappush(heap, (t + w * t_slot, i, 0))

    return ScenarioMetrics(
        n=n, mode=cfg.mode, seed=cfg.seed, duration=horizon,
        attempts=attempts, successes=successes, overlaps=overlaps, drops=drops,
        delivered_bits=bits, delivered_airtime=airtime_ok, energy=energy,
        delay_sum=delay_sum, delay_count=delay_count, generated=generated,
        in_flight=np.ones(n), backoff_slots=slots, series=series,
    )


def _profile(states) -> ActionProfile:
    return ActionProfile(np.array([s.power for s in states]), np.array([s.rate for s in states]))


def _update_link(i, states, gm, cfg: SimConfig):
    try:
        p, r = best_response_link(i, _profile(states), gm, cfg.link, cfg.pdr_model)
    except (ValueError, FloatingPointError) as exc:  # keep the previous action
        log.warning("link best response failed for WBAN %d: %s", i, exc)
        return
    if math.isfinite(p):
        states[i].power, states[i].rate = p, r


def _update_cw(i, states, gm, cfg: SimConfig) -> int:
    st = states[i]
    prof = _profile(states)
    ctx = float(pdr(sinr(i, prof, gm), st.rate, cfg.pdr_model))
    st.cw = best_response_cw(st.estimate, cfg.mac, cfg.backoff, ctx, rate=st.rate)
    return st.cw
