"""Discrete-time Markov chain of the superframe backoff MAC.

State ``(i, j)`` is backoff stage ``i`` with counter ``j``.  ``(i, 0)`` is a
transmission superframe; ``(i, j>0)`` is one backoff slot.  From ``(i, 0)``
a failure (probability ``p_f``) moves to ``(i+1, w)`` with ``w`` uniform over
``{1..W_{i+1}}``; success, or any outcome at stage ``m``, returns to
``(0, 0)``.  Counters decrement deterministically.

With ``a_i = p_f**i * b00`` the stationary mass of stage ``i`` backoff
states is ``a_i * (W_i + 1) / 2``, so every quantity below is a short sum.
The printed closed forms are kept only for comparison; see
:func:`closed_form_report`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from wbancoex.mac import MacParams, contention_window, payload_duration


class SolverError(RuntimeError):
    """Fixed-point solver did not converge."""

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


@dataclass(frozen=True)
class MarkovSolution:
    n: int
    b00: float
    tau: float
    pf: float
    eta: float
    goodput: float
    mean_delay: float
    drop_prob: float
    collision_prob: float
    iterations: int = 0
    residual: float = 0.0


def _windows(cw_min: int, m: int, persistence: int = 2) -> np.ndarray:
    return np.array([persistence**i * cw_min for i in range(1, m + 1)], dtype=float)


def _normaliser(p_f, cw_min: int, m: int, persistence: int = 2):
    """Sum of stationary masses divided by b00."""
    p = np.asarray(p_f, dtype=float)
    w = _windows(cw_min, m, persistence)
    powers = p[..., None] ** np.arange(m + 1)
    total = powers.sum(axis=-1)
    if m:
        total = total + (powers[..., 1:] * (w + 1.0) / 2.0).sum(axis=-1)
    return total


def stationary_b00(p_f, cw_min: int, m: int, persistence: int = 2):
    """Stationary probability of state (0, 0), by direct summation."""
    _check_pf(p_f)
    out = 1.0 / _normaliser(p_f, cw_min, m, persistence)
    return float(out) if np.ndim(out) == 0 else out


def tx_probability(p_f, cw_min: int, m: int, persistence: int = 2):
    """Probability that a chain step is a transmission, sum of b_{k,0}."""
    _check_pf(p_f)
    p = np.asarray(p_f, dtype=float)
    attempts = (p[..., None] ** np.arange(m + 1)).sum(axis=-1)
    out = attempts / _normaliser(p, cw_min, m, persistence)
    return float(out) if np.ndim(out) == 0 else out


def stationary_distribution(p_f: float, cw_min: int, m: int, persistence: int = 2):
    """Full stationary law as a list; entry ``i`` holds ``b_{i,0..W_i}``."""
    _check_pf(p_f)
    b00 = stationary_b00(p_f, cw_min, m, persistence)
    dist = [np.array([b00])]
    for i in range(1, m + 1):
        w_i = persistence**i * cw_min
        a_prev = p_f ** (i - 1) * b00
        j = np.arange(1, w_i + 1)
        stage = np.empty(w_i + 1)
        stage[1:] = a_prev * p_f * (w_i - j + 1) / w_i
        stage[0] = stage[1]
        dist.append(stage)
    return dist


def _check_pf(p_f):
    p = np.asarray(p_f, dtype=float)
    if np.any(p < 0) or np.any(p > 1) or np.any(~np.isfinite(p)):
        raise ValueError("p_f must lie in [0, 1]")


def b00_closed_form(p_f: float, cw_min: int, m: int) -> float:
    """Closed form of b00 for the chain above (persistence 2).

    Singular at ``p_f = 0.5``; use :func:`stationary_b00` there.
    """
    p = p_f
    num = 2 * (1 - p) * (1 - 2 * p)
    den = 2 * cw_min * p * (1 - (2 * p) ** m) * (1 - p) + (1 - 2 * p) * (2 + p - 3 * p ** (m + 1))
    return num / den


def tau_closed_form(p_f: float, cw_min: int, m: int) -> float:
    p = p_f
    num = 2 * (1 - 2 * p) * (1 - p ** (m + 1))
    den = 2 * cw_min * p * (1 - (2 * p) ** m) * (1 - p) + (1 - 2 * p) * (2 + p - 3 * p ** (m + 1))
    return num / den


def b00_printed(p_f: float, cw_min: int, m: int) -> float:
    """b00 exactly as typeset in the source derivation (kept for comparison)."""
    p = p_f
    num = 2 * (1 - p) * (1 - 2 * p)
    den = 2 * cw_min * p * (1 - (2 * p) ** m) * (1 - p) + (2 + p) * (1 - p**m) * (1 - 2 * p)
    return num / den


def tau_printed(p_f: float, cw_min: int, m: int) -> float:
    """tau exactly as typeset in the source derivation (kept for comparison)."""
    p = p_f
    num = 2 * (1 - 2 * p) * (1 - p ** (m + 1))
    den = 2 * cw_min * p * (2 - (2 * p) ** m) * (1 - p) + (1 - 2 * p) * (2 + p) * (1 - p**m)
    return num / den


def closed_form_report(p_grid, cw_values=(16, 64, 256), m_values=(2, 4), tol=1e-9):
    """Compare closed forms against direct summation.

    Returns one dict per (p_f, CW_min, m) with relative errors of the derived
    and printed forms; ``*_ok`` flags agreement within ``tol``.
    """
    rows = []
    for cw in cw_values:
        for m in m_values:
            for p in p_grid:
                p = float(p)
                b_direct = stationary_b00(p, cw, m)
                t_direct = tx_probability(p, cw, m)
                row = dict(pf=p, cw_min=cw, m=m, b00_direct=b_direct, tau_direct=t_direct)
                for tag, bf, tf in (
                    ("derived", b00_closed_form, tau_closed_form),
                    ("printed", b00_printed, tau_printed),
                ):
                    if abs(p - 0.5) < 1e-12:
                        b_val = t_val = math.nan
                    else:
                        b_val, t_val = bf(p, cw, m), tf(p, cw, m)
                    eb = abs(b_val - b_direct) / b_direct
                    et = abs(t_val - t_direct) / t_direct
                    row[f"b00_{tag}"] = b_val
                    row[f"tau_{tag}"] = t_val
                    row[f"b00_relerr_{tag}"] = eb
                    row[f"tau_relerr_{tag}"] = et
                    row[f"{tag}_ok"] = bool(eb <= tol and et <= tol)
                rows.append(row)
    return rows


def failure_probability(tau, n: int, pdr, eta) -> float:
    """Probability a transmission attempt fails: ``(1 - PDR)(1 - (1 - eta*tau)**(N-1))``.

    ``eta * tau`` is the chance that one other network overlaps the attempt
    and is clipped to [0, 1].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    overlap = np.clip(np.asarray(eta, dtype=float) * np.asarray(tau, dtype=float), 0.0, 1.0)
    out = (1.0 - np.asarray(pdr, dtype=float)) * (1.0 - (1.0 - overlap) ** (n - 1))
    return float(out) if np.ndim(out) == 0 else out


def mean_state_duration(tau, params: MacParams) -> float:
    """Mean wall time of one chain step: T_s for a transmission, T_slot otherwise."""
    return tau * params.superframe_len + (1.0 - tau) * params.slot_len


def overlap_coefficient(tau, params: MacParams, rate: float | None = None, other_payload=None):
    """Normaliser ``eta`` turning the per-step attempt probability into the
    probability that another network's payload overlaps ours.

    Attempts happen at rate ``tau / E[step duration]``; a payload of length
    ``T_p`` is hit by any other payload starting within ``T_p + T_p'``.
    """
    rate = params.rate_set[0] if rate is None else rate
    t_p = payload_duration(rate, params)
    t_other = t_p if other_payload is None else other_payload
    return (t_p + t_other) / mean_state_duration(tau, params)


def goodput(tau, pf, params: MacParams, rate: float | None = None):
    """Fraction of time spent delivering payload successfully."""
    rate = params.rate_set[0] if rate is None else rate
    t_p = payload_duration(rate, params)
    return (1.0 - pf) * tau * t_p / mean_state_duration(tau, params)


def mean_delay(p_f, params: MacParams, cw_min: int | None = None):
    """Mean extra delay (s) of a packet from the backoff/retry structure.

    A packet that succeeds after ``i`` failures pays ``sum_{j<=i}((W_j+1)/2
    T_slot + T_s)``; success at the first attempt contributes nothing, and
    stage ``m`` (success or drop) carries weight ``p_f**m``.  Linear in
    ``cw_min``.
    """
    m = params.max_backoff_stage
    t_slot, t_s = params.slot_len, params.superframe_len
    w = np.array([contention_window(j, params, cw_min) for j in range(m + 1)], dtype=float)
    per_stage = (w + 1.0) / 2.0 * t_slot + t_s
    cum = np.cumsum(per_stage)
    p = np.asarray(p_f, dtype=float)
    total = np.zeros_like(p)
    for i in range(1, m):
        total = total + p**i * (1.0 - p) * cum[i]
    if m >= 1:
        total = total + p**m * cum[m]
    return float(total) if np.ndim(total) == 0 else total


def drop_probability(tau, p_f, m: int):
    """Probability a packet is discarded at the retry limit, ``tau * p_f**(m+1)``."""
    return tau * p_f ** (m + 1)


def solve_fixed_point(
    n: int,
    params: MacParams,
    pdr: float = 0.0,
    rate: float | None = None,
    eta: float | None = None,
    tau0: float = 0.5,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> MarkovSolution:
    """Joint solution of the transmit-probability and failure-probability equations.

    ``eta=None`` uses :func:`overlap_coefficient` evaluated at the current
    ``tau``; a number fixes it.  Damped iteration first, bracketing root
    search on the failure probability if that stalls.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cw, m, lam = params.cw_min, params.max_backoff_stage, params.persistence
    rate = params.rate_set[0] if rate is None else rate

    def eta_of(tau):
        return overlap_coefficient(tau, params, rate) if eta is None else eta

    def pf_of(tau):
        return failure_probability(tau, n, pdr, eta_of(tau))

    def g(p):
        return pf_of(tx_probability(p, cw, m, lam)) - p

    tau = float(tau0)
    pf = pf_of(tau)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        tau_new = tx_probability(pf, cw, m, lam)
        tau = damping * tau + (1 - damping) * tau_new
        pf_new = pf_of(tau)
        step = max(abs(pf_new - pf), abs(tau - tau_new))
        pf = pf_new
        if step < tol * 1e-2:
            break

    tau = tx_probability(pf, cw, m, lam)
    residual = abs(g(pf))
    if residual > tol:
        # g is strictly decreasing in p_f: one sign change on [0, 1]
        if g(1.0) >= 0:
            pf = 1.0
        else:
            try:
                pf = brentq(g, 0.0, 1.0, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
            except (ValueError, RuntimeError) as exc:
                raise SolverError(
                    "fixed point did not converge", last_iterate=(tau, pf), residual=residual
                ) from exc
        tau = tx_probability(pf, cw, m, lam)
        residual = abs(g(pf))
        if residual > tol:
            raise SolverError("fixed point residual above tolerance", (tau, pf), residual)

    e = eta_of(tau)
    collision = failure_probability(tau, n, 0.0, e)
    return MarkovSolution(
        n=n,
        b00=stationary_b00(pf, cw, m, lam),
        tau=tau,
        pf=pf,
        eta=e,
        goodput=goodput(tau, pf, params, rate),
        mean_delay=mean_delay(pf, params),
        drop_prob=drop_probability(tau, pf, m),
        collision_prob=collision,
        iterations=iterations,
        residual=residual,
    )
