"""Joint power and rate adaptation game between co-located WBANs.

Each WBAN ``i`` picks a transmit power ``P_i`` and a data rate ``R_i`` to
maximise

    U_i = -c P_i**g + ln(1 + PDR(gamma_i, R_i)) - q / R_i

where ``gamma_i`` is its SINR and ``PDR(gamma, R) = exp(alpha_R * gamma**beta_R)``.
Also here: the first-order (Taylor) utility ``U_P`` with its candidate
potential ``F``, and numerical checks of concavity and of the midpoint
property over the rate lattice.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from wbancoex.channel import GainMatrix
from wbancoex.mac import RATE_SET_BPS, InvalidRateError

LN2 = math.log(2.0)
_EXP_FLOOR = -700.0


class DomainError(ValueError):
    """SINR outside the domain of the PDR fit."""


@dataclass(frozen=True)
class PdrModel:
    """Sigmoid PDR fit, one ``(alpha, beta)`` pair per rate (both negative)."""

    rates: tuple[float, ...] = RATE_SET_BPS
    alpha: tuple[float, ...] = (-100.02, -214.95, -663.69, -1182.7, -1433.5)
    beta: tuple[float, ...] = (-3.66, -2.82, -2.79, -2.73, -2.58)

    def __post_init__(self):
        if not len(self.rates) == len(self.alpha) == len(self.beta):
            raise ValueError("rates, alpha and beta must have equal length")
        if any(a >= 0 for a in self.alpha) or any(b >= 0 for b in self.beta):
            raise ValueError("alpha and beta must be negative")

    def index(self, rate: float) -> int:
        for k, r in enumerate(self.rates):
            if math.isclose(rate, r, rel_tol=1e-12):
                return k
        raise InvalidRateError(f"no PDR coefficients for rate {rate!r}")

    def coefficients(self, rate: float) -> tuple[float, float]:
        k = self.index(rate)
        return self.alpha[k], self.beta[k]

    def arrays(self, rates) -> tuple[np.ndarray, np.ndarray]:
        idx = [self.index(r) for r in np.atleast_1d(rates)]
        return np.asarray(self.alpha)[idx], np.asarray(self.beta)[idx]


def load_pdr_model(path) -> PdrModel:
    """Read ``rate,alpha,beta`` rows from a CSV file."""
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((float(rec["rate"]), float(rec["alpha"]), float(rec["beta"])))
    rows.sort()
    r, a, b = zip(*rows)
    return PdrModel(tuple(r), tuple(a), tuple(b))


@dataclass(frozen=True)
class LinkGameConfig:
    c: float = 1e5
    g: float = 2.0
    q: float = 2560.0
    p_min: float = 1e-5
    p_max: float = 1e-3
    rates: tuple[float, ...] = RATE_SET_BPS
    grid_points: int = 48

    def __post_init__(self):
        if self.c <= 0 or self.g <= 1 or self.q < 0:
            raise ValueError("need c > 0, g > 1 and q >= 0")
        if not 0 < self.p_min <= self.p_max:
            raise ValueError("need 0 < p_min <= p_max")


@dataclass
class ActionProfile:
    powers: np.ndarray
    rates: np.ndarray
    cws: np.ndarray | None = None

    def __post_init__(self):
        self.powers = np.asarray(self.powers, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        if self.cws is not None:
            self.cws = np.asarray(self.cws, dtype=int)
        if self.powers.shape != self.rates.shape:
            raise ValueError("powers and rates must have the same length")

    @property
    def n(self) -> int:
        return len(self.powers)

    def copy(self) -> "ActionProfile":
        return ActionProfile(
            self.powers.copy(), self.rates.copy(), None if self.cws is None else self.cws.copy()
        )

    def with_action(self, i: int, power: float, rate: float) -> "ActionProfile":
        out = self.copy()
        out.powers[i] = power
        out.rates[i] = rate
        return out

    def validate(self, cfg: LinkGameConfig) -> None:
        tol = 1e-12
        if np.any(self.powers < cfg.p_min * (1 - tol)) or np.any(self.powers > cfg.p_max * (1 + tol)):
            raise ValueError("power outside [p_min, p_max]")
        for r in self.rates:
            if not any(math.isclose(r, x, rel_tol=1e-12) for x in cfg.rates):
                raise InvalidRateError(f"rate {r!r} not in the rate set")


# -- channel quantities ---------------------------------------------------------


def interference(i: int, powers, gains: GainMatrix) -> float:
    """Interference plus noise at hub ``i``: ``sum_{j != i} h_ij P_j + sigma^2``."""
    p = np.asarray(powers, dtype=float)
    row = gains.gains[i]
    return float(row @ p - row[i] * p[i] + gains.noise_power)


def sinr_all(powers, gains: GainMatrix) -> np.ndarray:
    p = np.asarray(powers, dtype=float)
    h = gains.gains
    signal = np.diag(h) * p
    return signal / (h @ p - signal + gains.noise_power)


def sinr(i: int, profile: ActionProfile, gains: GainMatrix) -> float:
    return gains.gains[i, i] * profile.powers[i] / interference(i, profile.powers, gains)


def pdr(gamma, rate: float, model: PdrModel):
    """``exp(alpha * gamma**beta)`` for linear SINR ``gamma > 0``."""
    a, b = model.coefficients(rate)
    return _pdr(gamma, a, b)


def _pdr(gamma, a, b):
    g = np.asarray(gamma, dtype=float)
    if np.any(~(g > 0)):
        raise DomainError("SINR must be positive")
    with np.errstate(over="ignore"):
        u = a * g**b
    out = np.exp(np.maximum(u, _EXP_FLOOR))
    out = np.where(u < _EXP_FLOOR, 0.0, out)
    return float(out) if out.ndim == 0 else out


# -- utility and derivatives in own power -------------------------------------------


def _exponent(power, h_ii, interf, a, b):
    """``u = alpha * gamma**beta`` with ``gamma = h_ii P / I``."""
    gamma = h_ii * np.asarray(power, dtype=float) / interf
    with np.errstate(over="ignore", divide="ignore"):
        return a * gamma**b


def own_utility(power, rate, h_ii, interf, cfg: LinkGameConfig, model: PdrModel):
    """U of one player as a function of its own action, interference fixed."""
    a, b = model.arrays(rate) if np.ndim(rate) else model.coefficients(rate)
    return _own_utility(power, np.asarray(rate, dtype=float), h_ii, interf, a, b, cfg)


def _own_utility(power, rate, h_ii, interf, a, b, cfg):
    u = _exponent(power, h_ii, interf, a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        val = -cfg.c * np.asarray(power) ** cfg.g + np.log1p(np.exp(np.maximum(u, _EXP_FLOOR))) - cfg.q / rate
    return np.where(np.isfinite(val), val, -np.inf)


def _du_dp(power, h_ii, interf, a, b, cfg):
    p = np.asarray(power, dtype=float)
    u = _exponent(p, h_ii, interf, a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        s = np.exp(np.maximum(u, _EXP_FLOOR))
        w = np.where(u < _EXP_FLOOR, 0.0, s / (1.0 + s) * u)
    return -cfg.c * cfg.g * p ** (cfg.g - 1) + w * b / p


def _d2u_dp2(power, h_ii, interf, a, b, cfg):
    p = np.asarray(power, dtype=float)
    u = _exponent(p, h_ii, interf, a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        s = np.exp(np.maximum(u, _EXP_FLOOR))
        frac = s / (1.0 + s)
        bu = b * u
        curv = np.where(u < _EXP_FLOOR, 0.0, frac * bu * ((b - 1.0) + bu / (1.0 + s)))
    return -cfg.c * cfg.g * (cfg.g - 1) * p ** (cfg.g - 2) + curv / p**2


def du_dp(power, rate, h_ii, interf, cfg: LinkGameConfig, model: PdrModel):
    """First derivative of U in own power:
    ``-c g P**(g-1) + PDR/(1+PDR) * alpha beta gamma**beta / P``."""
    a, b = model.coefficients(rate)
    return _du_dp(power, h_ii, interf, a, b, cfg)


def d2u_dp2(power, rate, h_ii, interf, cfg: LinkGameConfig, model: PdrModel):
    """Second derivative of U in own power.

    With ``u = alpha gamma**beta`` and ``s = PDR``:
    ``-c g (g-1) P**(g-2) + s/(1+s) * beta u * ((beta - 1) + beta u / (1 + s)) / P**2``.
    The last product is positive, so U is concave only while the power
    cost or the ``(beta - 1)`` term dominates (high-PDR operation).
    """
    a, b = model.coefficients(rate)
    return _d2u_dp2(power, h_ii, interf, a, b, cfg)


def utility_link(i: int, profile: ActionProfile, gains: GainMatrix, cfg: LinkGameConfig, model: PdrModel) -> float:
    interf = interference(i, profile.powers, gains)
    return float(own_utility(profile.powers[i], profile.rates[i], gains.gains[i, i], interf, cfg, model))


def utilities_link(profile: ActionProfile, gains: GainMatrix, cfg: LinkGameConfig, model: PdrModel) -> np.ndarray:
    g = sinr_all(profile.powers, gains)
    a, b = model.arrays(profile.rates)
    with np.errstate(over="ignore"):
        u = a * g**b
        val = -cfg.c * profile.powers**cfg.g + np.log1p(np.exp(np.maximum(u, _EXP_FLOOR))) - cfg.q / profile.rates
    return np.where(np.isfinite(val), val, -np.inf)


# -- best response ------------------------------------------------------------------


def _refine(lo, hi, h_ii, interf, a, b, cfg, rtol=1e-10, max_iter=80):
    """Root of dU/dP on brackets ``[lo, hi]`` with dU(lo) > 0 > dU(hi).

    Newton steps, falling back to bisection when a step leaves the bracket.
    Vectorised over brackets.
    """
    lo, hi = lo.copy(), hi.copy()
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f = _du_dp(x, h_ii, interf, a, b, cfg)
        fp = _d2u_dp2(x, h_ii, interf, a, b, cfg)
        lo = np.where(f > 0, x, lo)
        hi = np.where(f > 0, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - f / fp
        ok = (fp < 0) & (newton > lo) & (newton < hi)
        x_new = np.where(ok, newton, 0.5 * (lo + hi))
        done = np.abs(x_new - x) <= rtol * x
        x = x_new
        if np.all(done | (hi - lo <= rtol * x)):
            break
    return x


def best_response_from_context(h_ii: float, interf: float, cfg: LinkGameConfig, model: PdrModel):
    """Best (P, R, U) against a fixed interference-plus-noise level.

    Per rate: coarse log grid to locate the best region, then a root of
    dU/dP inside the neighbouring cells.  Ties go to lower P, then lower R.
    """
    rates = np.asarray(cfg.rates, dtype=float)
    a, b = model.arrays(rates)
    grid = np.geomspace(cfg.p_min, cfg.p_max, cfg.grid_points)
    vals = _own_utility(grid[None, :], rates[:, None], h_ii, interf, a[:, None], b[:, None], cfg)
    k = np.argmax(vals, axis=1)
    n_r = len(rates)
    rows = np.arange(n_r)
    best_p = grid[k]
    best_u = vals[rows, k]

    lo = grid[np.maximum(k - 1, 0)]
    hi = grid[np.minimum(k + 1, len(grid) - 1)]
    d_lo = _du_dp(lo, h_ii, interf, a, b, cfg)
    d_hi = _du_dp(hi, h_ii, interf, a, b, cfg)
    inner = (d_lo > 0) & (d_hi < 0)
    if np.any(inner):
        # the grid point itself may sit on either side of the root
        d_k = _du_dp(best_p, h_ii, interf, a, b, cfg)
        lo2 = np.where(d_k > 0, best_p, lo)
        hi2 = np.where(d_k > 0, hi, best_p)
        x = _refine(lo2[inner], hi2[inner], h_ii, interf, a[inner], b[inner], cfg)
        ux = _own_utility(x, rates[inner], h_ii, interf, a[inner], b[inner], cfg)
        better = ux >= best_u[inner]
        idx = rows[inner][better]
        best_p[idx] = x[better]
        best_u[idx] = ux[better]

    top = np.max(best_u)
    if not np.isfinite(top):
        return cfg.p_min, float(rates[0]), -math.inf
    tie = best_u >= top - 1e-13 * max(1.0, abs(top))
    cand = np.nonzero(tie)[0]
    j = cand[np.lexsort((rates[cand], best_p[cand]))[0]]
    return float(best_p[j]), float(rates[j]), float(best_u[j])


def best_response_link(i: int, profile: ActionProfile, gains: GainMatrix, cfg: LinkGameConfig, model: PdrModel):
    """Best (P*, R*) of player ``i`` against the others' actions in ``profile``."""
    interf = interference(i, profile.powers, gains)
    p, r, _ = best_response_from_context(gains.gains[i, i], interf, cfg, model)
    return p, r


@dataclass
class EquilibriumResult:
    profile: ActionProfile
    converged: bool
    sweeps: int
    history: list = field(default_factory=list)


def nash_equilibrium_link(
    gains: GainMatrix,
    cfg: LinkGameConfig,
    model: PdrModel,
    start: ActionProfile | None = None,
    max_sweeps: int = 500,
    power_tol: float = 1e-6,
    stable_sweeps: int = 2,
    simultaneous: bool = False,
) -> EquilibriumResult:
    """Best-response iteration, players in index order (or all at once).

    Stops once the largest power change is below ``power_tol`` with no rate
    change for ``stable_sweeps`` consecutive sweeps.
    """
    n = gains.n
    if start is None:
        start = ActionProfile(np.full(n, cfg.p_max), np.full(n, cfg.rates[0]))
    prof = start.copy()
    calm = 0
    seen = {}
    for sweep in range(1, max_sweeps + 1):
        # a revisited state means the dynamics cycle (no pure equilibrium reached)
        key = (prof.rates.tobytes(), np.round(prof.powers / power_tol).tobytes())
        if key in seen and sweep - seen[key] > 1:
            return EquilibriumResult(prof, False, sweep)
        seen[key] = sweep
        old = prof.copy()
        base = prof.copy() if simultaneous else prof
        for i in range(n):
            p, r = best_response_link(i, base, gains, cfg, model)
            prof.powers[i], prof.rates[i] = p, r
        dp = float(np.max(np.abs(prof.powers - old.powers)))
        same_rates = bool(np.all(prof.rates == old.rates))
        calm = calm + 1 if (dp < power_tol and same_rates) else 0
        if calm >= stable_sweeps:
            return EquilibriumResult(prof, True, sweep)
    return EquilibriumResult(prof, False, max_sweeps)


def grid_nash_equilibrium(
    gains: GainMatrix,
    cfg: LinkGameConfig,
    model: PdrModel,
    n_power: int = 400,
    start: ActionProfile | None = None,
    max_sweeps: int = 500,
):
    """Pure NE of the game restricted to a linear power grid times the rate set.

    Grid best-response dynamics; the returned flag certifies that no player
    gains from any unilateral grid deviation.
    """
    n = gains.n
    grid = np.linspace(cfg.p_min, cfg.p_max, n_power)
    rates = np.asarray(cfg.rates)
    a, b = model.arrays(rates)
    if start is None:
        pw, rt = np.full(n, grid[-1]), np.full(n, rates[0])
    else:
        pw = grid[np.abs(grid[None, :] - start.powers[:, None]).argmin(axis=1)]
        rt = start.rates.copy()

    def grid_best(i, pw):
        interf = interference(i, pw, gains)
        vals = _own_utility(grid[None, :], rates[:, None], gains.gains[i, i], interf, a[:, None], b[:, None], cfg)
        r, k = np.unravel_index(np.argmax(vals.T.ravel()), (len(grid), len(rates)))[::-1]
        return grid[k], rates[r], vals

    for _ in range(max_sweeps):
        changed = False
        for i in range(n):
            p, r, vals = grid_best(i, pw)
            k_cur = int(np.argmin(np.abs(grid - pw[i])))
            r_cur = int(np.argmin(np.abs(rates - rt[i])))
            if vals.max() > vals[r_cur, k_cur] + 1e-14 * max(1.0, abs(vals.max())):
                pw[i], rt[i] = p, r
                changed = True
        if not changed:
            return ActionProfile(pw.copy(), rt.copy()), True
    return ActionProfile(pw.copy(), rt.copy()), False


# -- first-order utility and its potential ----------------------------------------


def utility_potential(i: int, profile: ActionProfile, gains: GainMatrix, cfg: LinkGameConfig, model: PdrModel) -> float:
    """First-order utility ``U_P``: ``ln(1 + e**u)`` replaced by ``ln 2 + u/2``."""
    gamma = sinr(i, profile, gains)
    a, b = model.coefficients(profile.rates[i])
    return -cfg.c * profile.powers[i] ** cfg.g - cfg.q / profile.rates[i] + LN2 + a * gamma**b / 2.0


def potential_value(profile: ActionProfile, gains: GainMatrix, cfg: LinkGameConfig, model: PdrModel) -> float:
    """``F(A) = sum_i [-c P_i**g - q/R_i + alpha(R_i) gamma_i**beta(R_i) / 2]``."""
    gamma = sinr_all(profile.powers, gains)
    a, b = model.arrays(profile.rates)
    return float(np.sum(-cfg.c * profile.powers**cfg.g - cfg.q / profile.rates + a * gamma**b / 2.0))


def taylor_remainder_bound(u) -> float:
    """Bound on ``|ln(1+e**u) - ln 2 - u/2|``; the curvature never exceeds 1/4."""
    return np.asarray(u) ** 2 / 8.0


@dataclass(frozen=True)
class LmpWitness:
    holds: bool
    rate_indices: tuple[int, int, int]
    values: tuple[float, float, float]


def check_lmp(i: int, power: float, rate_indices, profile: ActionProfile, gains: GainMatrix,
              cfg: LinkGameConfig, model: PdrModel) -> LmpWitness:
    """Midpoint test of F along player ``i``'s rate lattice at fixed power.

    ``rate_indices = (x, z, y)`` with ``y - x = 2``.  Holds when
    ``F(z) > min(F(x), F(y))``, or ``F(z) >= F(x)`` if the endpoints tie.
    """
    x, z, y = rate_indices
    if abs(y - x) != 2 or z != (x + y) // 2:
        raise ValueError("need three consecutive rate indices")
    vals = tuple(
        potential_value(profile.with_action(i, power, cfg.rates[k]), gains, cfg, model) for k in (x, z, y)
    )
    fx, fz, fy = vals
    if fx == fy:
        ok = fz >= fx
    else:
        ok = fz > min(fx, fy)
    return LmpWitness(bool(ok), (x, z, y), vals)


def rate_profile_of_potential(i: int, power: float, profile: ActionProfile, gains: GainMatrix,
                              cfg: LinkGameConfig, model: PdrModel) -> np.ndarray:
    """F as a function of player ``i``'s rate index at fixed power."""
    return np.array(
        [potential_value(profile.with_action(i, power, r), gains, cfg, model) for r in cfg.rates]
    )


def local_maximizers(values) -> list[int]:
    """Indices that are no worse than their lattice neighbours."""
    v = np.asarray(values)
    out = []
    for k in range(len(v)):
        left = k == 0 or v[k] >= v[k - 1]
        right = k == len(v) - 1 or v[k] >= v[k + 1]
        if left and right:
            out.append(k)
    return out
