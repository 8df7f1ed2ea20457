"""Adaptive minimum-contention-window game.

Each hub estimates its attempt probability and failure probability from
its own counters, then picks the ``CW_min`` maximising

    V(CW) = d * S(CW) - l * D(CW) - tau(CW) * p**(m+1)

with ``tau(CW) ~ 1 / (p CW + 1)``.  ``S`` is the goodput airtime fraction,
``D`` the mean backoff/retry delay (linear in CW).  The coupled model used
for equilibrium and welfare studies lets each player's failure probability
depend on the others' windows.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from wbancoex.mac import MacParams, payload_duration
from wbancoex.markov import goodput, mean_delay


def tau_approx(p_f, cw_min):
    """Attempt probability approximated as ``1 / (p_f CW_min + 1)``."""
    p = np.asarray(p_f, dtype=float)
    out = 1.0 / (p * np.asarray(cw_min, dtype=float) + 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class ContentionEstimate:
    """Counter-based estimates over a sliding window of chain steps.

    A chain step is either a transmission superframe or one backoff slot.
    ``window_len=None`` keeps the whole history.
    """

    window_len: int | None = None
    prior_p: float = 0.0
    steps_total: int = 0
    _tx: deque = field(default_factory=deque, repr=False)
    _fails: int = field(default=0, repr=False)

    def _trim(self):
        if self.window_len is None:
            return
        cut = self.steps_total - self.window_len
        while self._tx and self._tx[0][0] < cut:
            self._fails -= self._tx.popleft()[1]

    @property
    def slots(self) -> int:
        return self.steps_total if self.window_len is None else min(self.steps_total, self.window_len)

    @property
    def transmitted_fragments(self) -> int:
        return len(self._tx)

    @property
    def ack_failures(self) -> int:
        return self._fails

    @property
    def tau_est(self) -> float:
        return self.transmitted_fragments / self.slots if self.slots else 0.0

    @property
    def p_est(self) -> float:
        n = self.transmitted_fragments
        return self.ack_failures / n if n else self.prior_p


def update_estimates(est: ContentionEstimate, event: str, count: int = 1) -> ContentionEstimate:
    """Record ``tx_success``, ``tx_fail`` or ``count`` backoff ``slot_tick`` events.

    Mutates and returns ``est``.
    """
    if event in ("tx_success", "tx_fail"):
        for _ in range(count):
            failed = event == "tx_fail"
            est._tx.append((est.steps_total, failed))
            est._fails += failed
            est.steps_total += 1
    elif event == "slot_tick":
        if count < 0:
            raise ValueError("slot count must be non-negative")
        est.steps_total += count
    else:
        raise ValueError(f"unknown event {event!r}")
    est._trim()
    return est


def fixed_estimate(p_est: float) -> ContentionEstimate:
    """Estimator frozen at a given failure probability (no history)."""
    return ContentionEstimate(prior_p=float(p_est))


@dataclass(frozen=True)
class BackoffGameConfig:
    d: float = 1e-3
    l: float = 5e-3
    cw_lo: int = 8
    cw_hi: int = 1024
    rate: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.d) and np.isfinite(self.l)) or self.d < 0 or self.l < 0:
            raise ValueError("weights must be finite and non-negative")
        if self.cw_lo < 1 or self.cw_hi < self.cw_lo:
            raise ValueError("need 1 <= cw_lo <= cw_hi")

    @property
    def cw_range(self) -> np.ndarray:
        return np.arange(self.cw_lo, self.cw_hi + 1)


def _failure_of(est: ContentionEstimate, pdr_context: float) -> float:
    if est.transmitted_fragments:
        return est.p_est
    # no observations: fall back to the loss implied by the link context
    return max(est.prior_p, 1.0 - pdr_context) if pdr_context < 1.0 else est.prior_p


def backoff_value(cw, p_f, params: MacParams, cfg: BackoffGameConfig, rate=None):
    """``d S - l D - P_drop`` at failure probability ``p_f``; vectorised in ``cw``."""
    cw = np.asarray(cw, dtype=float)
    rate = cfg.rate if rate is None else rate
    rate = params.rate_set[0] if rate is None else rate
    tau = tau_approx(p_f, cw)
    s = goodput(tau, p_f, params, rate)
    delay = _delay_linear(p_f, params, cw)
    drop = tau * p_f ** (params.max_backoff_stage + 1)
    out = cfg.d * s - cfg.l * delay - drop
    return float(out) if np.ndim(out) == 0 else out


def _delay_linear(p_f, params, cw):
    """Mean delay as ``D0 + D1 * CW`` (it is affine in CW)."""
    d0 = mean_delay(p_f, params, 0)
    d1 = mean_delay(p_f, params, 1) - d0
    return d0 + d1 * np.asarray(cw, dtype=float)


def utility_backoff(cw_min, est: ContentionEstimate, params: MacParams, cfg: BackoffGameConfig,
                    pdr_context: float = 1.0, rate=None):
    return backoff_value(cw_min, _failure_of(est, pdr_context), params, cfg, rate)


def best_response_cw(est: ContentionEstimate, params: MacParams, cfg: BackoffGameConfig,
                     pdr_context: float = 1.0, rate=None) -> int:
    """Integer argmax of V by ternary search (V is unimodal); ties go to smaller CW."""
    p = _failure_of(est, pdr_context)
    lo, hi = cfg.cw_lo, cfg.cw_hi

    def v(x):
        return backoff_value(x, p, params, cfg, rate)

    while hi - lo > 2:
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        if v(m1) >= v(m2):
            hi = m2 - 1 if v(m1) > v(m2) else m2
        else:
            lo = m1 + 1
    cands = np.arange(lo, hi + 1)
    vals = backoff_value(cands, p, params, cfg, rate)
    return int(cands[np.argmax(vals)])


def best_response_cw_scan(est: ContentionEstimate, params: MacParams, cfg: BackoffGameConfig,
                          pdr_context: float = 1.0, rate=None) -> int:
    """Exhaustive argmax over the whole range (reference for the ternary search)."""
    cws = cfg.cw_range
    vals = backoff_value(cws, _failure_of(est, pdr_context), params, cfg, rate)
    return int(cws[np.argmax(vals)])


# -- coupled model for equilibrium and welfare ----------------------------------------


@dataclass
class BackoffGameModel:
    """Failure probabilities coupled through the others' attempt rates.

    ``p_i = (1 - PDR_i) (1 - prod_{j != i} (1 - o_ij))`` with
    ``o_ij = (T_p,i + T_p,j) tau_j / (tau_j T_s + (1 - tau_j) T_slot)``
    clipped to [0, 1] and ``tau_j = 1 / (p_j CW_j + 1)``.
    """

    params: MacParams
    cfg: BackoffGameConfig
    pdr: np.ndarray
    rates: np.ndarray | None = None

    def __post_init__(self):
        self.pdr = np.asarray(self.pdr, dtype=float)
        n = len(self.pdr)
        if self.rates is None:
            self.rates = np.full(n, self.params.rate_set[0])
        self.rates = np.asarray(self.rates, dtype=float)
        self.t_p = np.array([payload_duration(r, self.params) for r in self.rates])

    @property
    def n(self) -> int:
        return len(self.pdr)

    def failure_probs(self, cws, tol: float = 1e-12, max_iter: int = 2000):
        """Solve the coupled failure probabilities for one or many CW profiles.

        ``cws`` has shape ``(..., N)``; so does the result.
        """
        cw = np.asarray(cws, dtype=float)
        t_s, t_slot = self.params.superframe_len, self.params.slot_len
        span = self.t_p[:, None] + self.t_p[None, :]
        loss = 1.0 - self.pdr
        p = np.full(cw.shape, 0.5)
        for _ in range(max_iter):
            tau = 1.0 / (p * cw + 1.0)
            rate = tau / (tau * t_s + (1.0 - tau) * t_slot)
            o = np.clip(span * rate[..., None, :], 0.0, 1.0)
            eye = np.eye(self.n, dtype=bool)
            o = np.where(eye, 0.0, o)
            p_new = loss * (1.0 - np.prod(1.0 - o, axis=-1))
            step = np.max(np.abs(p_new - p)) if p.size else 0.0
            p = 0.5 * p + 0.5 * p_new
            if step < tol:
                break
        return p

    def values(self, cws):
        """Per-player utility V_i for CW profiles of shape ``(..., N)``."""
        cw = np.asarray(cws, dtype=float)
        p = self.failure_probs(cw)
        params, cfg = self.params, self.cfg
        tau = 1.0 / (p * cw + 1.0)
        t_s, t_slot = params.superframe_len, params.slot_len
        s = (1.0 - p) * tau * self.t_p / (tau * t_s + (1.0 - tau) * t_slot)
        d0 = mean_delay(p, params, 0)
        d1 = mean_delay(p, params, 1) - d0
        delay = d0 + d1 * cw
        drop = tau * p ** (params.max_backoff_stage + 1)
        return cfg.d * s - cfg.l * delay - drop

    def welfare(self, cws):
        return self.values(cws).sum(axis=-1)

    def _best_of(self, i, cws, grid):
        prof = np.repeat(np.asarray(cws, dtype=float)[None, :], len(grid), axis=0)
        prof[:, i] = grid
        vals = self.values(prof)[:, i]
        k = int(np.argmax(vals))
        return int(grid[k]), k

    def best_response(self, i: int, cws, exhaustive: bool = False) -> int:
        """Best response of player ``i``; ties to the smaller CW.

        The fast path scans a log lattice and then every integer between the
        neighbours of the best lattice point; ``exhaustive`` scans the range.
        """
        if exhaustive:
            return self._best_of(i, cws, self.cfg.cw_range)[0]
        lattice = self.lattice()
        _, k = self._best_of(i, cws, lattice)
        lo = lattice[max(k - 1, 0)]
        hi = lattice[min(k + 1, len(lattice) - 1)]
        return self._best_of(i, cws, np.arange(lo, hi + 1))[0]

    def lattice(self, points: int = 48) -> np.ndarray:
        c = self.cfg
        return np.unique(np.round(np.geomspace(c.cw_lo, c.cw_hi, points)).astype(int))


def nash_equilibrium_cw(model: BackoffGameModel, start=None, max_sweeps: int = 200, exhaustive: bool = False):
    """Sequential best-response iteration on the coupled model.

    Returns ``(cws, converged, sweeps)``.
    """
    n = model.n
    cws = np.full(n, model.cfg.cw_lo, dtype=int) if start is None else np.asarray(start, dtype=int).copy()
    for sweep in range(1, max_sweeps + 1):
        old = cws.copy()
        for i in range(n):
            cws[i] = model.best_response(i, cws, exhaustive)
        if np.array_equal(cws, old):
            return cws, True, sweep
    return cws, False, max_sweeps
