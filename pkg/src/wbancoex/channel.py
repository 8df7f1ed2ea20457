"""Channel gains between co-located WBANs.

Two sources of per-superframe gain matrices: a measured trace in CSV form,
and a synthetic model with path loss, fixed shadowing, Jakes small-scale
fading between networks, Gamma on-body fading, and random-walk mobility of
the wearers inside a square room.  Gains are linear power gains, held
constant for a whole superframe.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MIN_DISTANCE = 0.01


class TraceFormatError(ValueError):
    """Malformed or inconsistent gain trace."""


class TraceTooShortError(RuntimeError):
    """The run needs more superframes than the trace provides."""


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class GainMatrix:
    """``gains[i, j]``: power gain from WBAN j's transmitter to WBAN i's hub.

    The diagonal holds the on-body gains.
    """

    gains: np.ndarray
    noise_power: float = 1e-13
    timestamp: int = 0

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        if self.gains.ndim != 2 or self.gains.shape[0] != self.gains.shape[1]:
            raise ValueError("gain matrix must be square")
        if not np.all(np.isfinite(self.gains)) or np.any(self.gains <= 0):
            raise ValueError("gains must be finite and positive")
        if self.noise_power < 0:
            raise ValueError("noise power must be non-negative")

    @property
    def n(self) -> int:
        return self.gains.shape[0]


# -- trace files -------------------------------------------------------------

TRACE_FIELDS = ("superframe", "i", "j", "attenuation_db")


def load_trace(path, noise_power: float = 1e-13) -> list[GainMatrix]:
    """Read a gain trace: one CSV row per ``(superframe, i, j, attenuation_db)``.

    Indices ``i, j`` are 1-based; ``attenuation_db`` A becomes ``10**(-A/10)``.
    A ``gain_linear`` column may replace ``attenuation_db``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trace file not found: {path}")
    entries: dict[int, dict[tuple[int, int], float]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in row]
                if header[:3] != ["superframe", "i", "j"] or len(header) != 4 or header[3] not in (
                    "attenuation_db",
                    "gain_linear",
                ):
                    raise TraceFormatError(
                        f"line {lineno}: expected header superframe,i,j,attenuation_db"
                    )
                continue
            if len(row) != 4:
                raise TraceFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                sf, i, j = (int(c) for c in row[:3])
                value = float(row[3])
            except ValueError as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from None
            if sf < 0 or i < 1 or j < 1:
                raise TraceFormatError(f"line {lineno}: negative superframe or index < 1")
            if not math.isfinite(value):
                raise TraceFormatError(f"line {lineno}: non-finite value")
            if header[3] == "gain_linear":
                if value <= 0:
                    raise TraceFormatError(f"line {lineno}: non-positive gain {value}")
                gain = value
            else:
                gain = 10.0 ** (-value / 10.0)
            entries.setdefault(sf, {})[(i - 1, j - 1)] = gain

    if not entries:
        return []
    n = 1 + max(max(max(k) for k in d) for d in entries.values())
    frames = sorted(entries)
    if frames != list(range(frames[0], frames[0] + len(frames))):
        raise TraceFormatError("superframe indices are not contiguous")
    out = []
    for sf in frames:
        d = entries[sf]
        if len(d) != n * n:
            raise TraceFormatError(f"superframe {sf}: expected {n * n} entries, got {len(d)}")
        g = np.empty((n, n))
        for (i, j), v in d.items():
            g[i, j] = v
        out.append(GainMatrix(g, noise_power, sf))
    return out


def write_trace(path, matrices) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for gm in matrices:
            n = gm.n
            for i in range(n):
                for j in range(n):
                    w.writerow([gm.timestamp, i + 1, j + 1, repr(float(-linear_to_db(gm.gains[i, j])))])


class TraceChannel:
    """Replays a measured trace, one matrix per superframe."""

    def __init__(self, matrices: list[GainMatrix]):
        if not matrices:
            raise TraceFormatError("empty trace")
        self.matrices = matrices
        self.n = matrices[0].n

    def __len__(self):
        return len(self.matrices)

    def matrix(self, k: int) -> GainMatrix:
        if k >= len(self.matrices):
            raise TraceTooShortError(
                f"trace holds {len(self.matrices)} superframes, superframe {k} requested"
            )
        return self.matrices[k]


# -- mobility -----------------------------------------------------------------


@dataclass
class MobilityState:
    positions: np.ndarray
    headings: np.ndarray
    speeds: np.ndarray
    side: float = 6.0
    time: float = 0.0

    @property
    def n(self) -> int:
        return len(self.headings)


def draw_speeds(rng, size, mean=0.5, std=0.1):
    """Walking speeds from a normal law truncated to positive values."""
    v = rng.normal(mean, std, size)
    bad = v <= 0
    while np.any(bad):
        v[bad] = rng.normal(mean, std, int(bad.sum()))
        bad = v <= 0
    return v


def initial_mobility(n: int, rng, side: float = 6.0, speed_mean=0.5, speed_std=0.1) -> MobilityState:
    return MobilityState(
        positions=rng.uniform(0.0, side, (n, 2)),
        headings=rng.uniform(0.0, 2 * np.pi, n),
        speeds=draw_speeds(rng, n, speed_mean, speed_std),
        side=side,
    )


def _fold(x, side):
    """Reflect unfolded coordinates into [0, side]; also the direction sign."""
    y = np.mod(x, 2 * side)
    inside = y <= side
    return np.where(inside, y, 2 * side - y), np.where(inside, 1.0, -1.0)


def step_mobility(
    state: MobilityState,
    dt: float,
    rng,
    update_interval: float = 1e-3,
    turn_interval: float | None = 1.0,
    speed_mean: float = 0.5,
    speed_std: float = 0.1,
) -> MobilityState:
    """Advance every wearer by ``dt`` seconds.

    Speeds are redrawn every ``update_interval``; headings are redrawn
    uniformly at multiples of ``turn_interval``.  Walls reflect.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = state.n
    k = max(1, int(round(dt / update_interval)))
    h = dt / k
    speeds = np.empty((k, n))
    speeds[0] = state.speeds
    if k > 1:
        speeds[1:] = draw_speeds(rng, (k - 1, n), speed_mean, speed_std)
    times = state.time + h * np.arange(k)

    pos = state.positions.copy()
    headings = state.headings.copy()
    start = 0
    while start < k:
        stop = k
        if turn_interval:
            epoch = math.floor(times[start] / turn_interval + 1e-12)
            nxt = (epoch + 1) * turn_interval
            crossing = np.nonzero(times[start:] >= nxt - 1e-12)[0]
            if crossing.size:
                stop = start + int(crossing[0])
        if stop == start:
            headings = rng.uniform(0.0, 2 * np.pi, n)
            stop = start + 1
            if turn_interval:
                epoch = math.floor(times[start] / turn_interval + 1e-12)
                crossing = np.nonzero(times[start + 1 :] >= (epoch + 1) * turn_interval - 1e-12)[0]
                stop = start + 1 + (int(crossing[0]) if crossing.size else k - start - 1)
        travel = speeds[start:stop].sum(axis=0) * h
        ux, uy = np.cos(headings), np.sin(headings)
        x, sx = _fold(pos[:, 0] + travel * ux, state.side)
        y, sy = _fold(pos[:, 1] + travel * uy, state.side)
        pos = np.column_stack([x, y])
        headings = np.mod(np.arctan2(sy * uy, sx * ux), 2 * np.pi)
        start = stop

    last = draw_speeds(rng, n, speed_mean, speed_std)
    return MobilityState(pos, headings, last, state.side, state.time + dt)


# -- gain models ----------------------------------------------------------------


def inter_gain(
    distance,
    fading_power=1.0,
    shadow_db: float = 42.0,
    ref_db: float = 50.0,
    ref_distance: float = 5.0,
    exponent: float = 2.5,
):
    """Inter-WBAN power gain ``A_t (d0/d)**(n/2) A_SE |A_SC|**2``.

    ``A_t`` is the reference attenuation at ``d0``; ``A_SE`` the shadowing.
    """
    d = np.maximum(np.asarray(distance, dtype=float), MIN_DISTANCE)
    return (
        10.0 ** (-ref_db / 10.0)
        * (ref_distance / d) ** (exponent / 2.0)
        * 10.0 ** (-shadow_db / 10.0)
        * np.asarray(fading_power, dtype=float)
    )


class JakesFader:
    """Sum-of-sinusoids Rayleigh fader, unit mean power, one per link.

    Each link gets ``oscillators`` arrival angles with a random rotation and
    random phases, so the ensemble autocorrelation is ``J0(2 pi f_D tau)``.
    """

    def __init__(self, shape, doppler_hz: float, rng, oscillators: int = 16):
        self.shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
        self.doppler = float(doppler_hz)
        self.m = oscillators
        n = np.arange(1, oscillators + 1)
        theta = rng.uniform(0.0, 1.0, self.shape + (1,))
        self._alpha = 2 * np.pi * (n - 0.5 + theta) / oscillators
        self._phi = rng.uniform(0.0, 2 * np.pi, self.shape + (oscillators,))
        self._omega = 2 * np.pi * self.doppler * np.cos(self._alpha)

    def coefficients(self, t):
        """Complex coefficients at time ``t`` (scalar), shape ``self.shape``."""
        arg = self._omega * t + self._phi
        return np.exp(1j * arg).sum(axis=-1) / math.sqrt(self.m)

    def series(self, times):
        """Coefficients at many times; shape ``(len(times),) + self.shape``."""
        t = np.asarray(times, dtype=float)
        arg = self._omega[None] * t.reshape((-1,) + (1,) * (len(self.shape) + 1)) + self._phi[None]
        return np.exp(1j * arg).sum(axis=-1) / math.sqrt(self.m)


def synth_inter_gain(distance, rng=None, shadow_db: float = 42.0, jakes_coeff=1.0, **kw):
    """Inter-WBAN gain for one link, with a given small-scale coefficient.

    ``rng`` is only used when ``jakes_coeff`` is None, in which case an
    independent CN(0,1) draw stands in for the Jakes process.
    """
    if jakes_coeff is None:
        jakes_coeff = (rng.normal() + 1j * rng.normal()) / math.sqrt(2)
    return inter_gain(distance, abs(jakes_coeff) ** 2, shadow_db, **kw)


def onbody_fading(rng, size=None, shape: float = 1.31, scale: float = 0.562):
    return rng.gamma(shape, scale, size)


def synth_onbody_gain(rng, size=None, mean_db: float = 65.0, shape: float = 1.31, scale: float = 0.562):
    """On-body gain: Gamma fading normalised to unit mean, at ``mean_db`` attenuation."""
    g = onbody_fading(rng, size, shape, scale)
    return 10.0 ** (-mean_db / 10.0) * g / (shape * scale)


@dataclass
class SyntheticChannelConfig:
    n: int
    seed: int = 0
    doppler_hz: float = 1.1
    shadow_db: float = 42.0
    shadow_sigma_db: float = 0.0
    ref_db: float = 50.0
    ref_distance: float = 5.0
    exponent: float = 2.5
    onbody_mean_db: float = 65.0
    onbody_shape: float = 1.31
    onbody_scale: float = 0.562
    noise_dbm: float = -100.0
    side: float = 6.0
    speed_mean: float = 0.5
    speed_std: float = 0.1
    turn_interval: float = 1.0
    oscillators: int = 16
    superframe_len: float = 0.080


@dataclass
class SyntheticChannel:
    """Per-superframe gain matrices from the statistical model.

    Matrices must be requested in non-decreasing superframe order; the
    last few are cached.
    """

    cfg: SyntheticChannelConfig
    clamped: int = 0
    _cache: dict = field(default_factory=dict)

    def __post_init__(self):
        c = self.cfg
        self.rng = np.random.default_rng(c.seed)
        self.mobility = initial_mobility(c.n, self.rng, c.side, c.speed_mean, c.speed_std)
        self.fader = JakesFader((c.n, c.n), c.doppler_hz, self.rng, c.oscillators)
        self.noise_power = dbm_to_watts(c.noise_dbm)
        self._next = 0

    @property
    def n(self) -> int:
        return self.cfg.n

    def _generate(self, k: int) -> GainMatrix:
        c = self.cfg
        if k > 0:
            self.mobility = step_mobility(
                self.mobility, c.superframe_len, self.rng,
                turn_interval=c.turn_interval, speed_mean=c.speed_mean, speed_std=c.speed_std,
            )
        pos = self.mobility.positions
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        off = ~np.eye(c.n, dtype=bool)
        self.clamped += int(np.sum(dist[off] < MIN_DISTANCE))
        shadow = np.full((c.n, c.n), c.shadow_db)
        if c.shadow_sigma_db > 0:
            shadow = shadow + self.rng.normal(0.0, c.shadow_sigma_db, (c.n, c.n))
        fading = np.abs(self.fader.coefficients(k * c.superframe_len)) ** 2
        g = inter_gain(np.where(off, dist, 1.0), fading, shadow, c.ref_db, c.ref_distance, c.exponent)
        onbody = synth_onbody_gain(self.rng, c.n, c.onbody_mean_db, c.onbody_shape, c.onbody_scale)
        g[np.diag_indices(c.n)] = onbody
        return GainMatrix(g, self.noise_power, k)

    def matrix(self, k: int) -> GainMatrix:
        if k in self._cache:
            return self._cache[k]
        if k < self._next:
            raise ValueError(f"superframe {k} already discarded from the cache")
        while self._next <= k:
            gm = self._generate(self._next)
            self._cache[self._next] = gm
            self._next += 1
        for old in [key for key in self._cache if key < k - 4]:
            del self._cache[old]
        return self._cache[k]


def make_channel(kind: str, n: int, **kw):
    """Build a channel source: ``synthetic`` or ``trace``."""
    if kind == "synthetic":
        return SyntheticChannel(SyntheticChannelConfig(n=n, **kw))
    if kind == "trace":
        matrices = load_trace(kw["trace_path"], kw.get("noise_power", 1e-13))
        ch = TraceChannel(matrices)
        if ch.n != n:
            raise TraceFormatError(f"trace has {ch.n} WBANs, config asks for {n}")
        return ch
    raise ValueError(f"unknown channel mode {kind!r}")
