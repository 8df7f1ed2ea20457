"""Social welfare, centralised optimum and Price of Anarchy for both games.

Exact optimum search (grid plus local refinement) is used up to
``exact_cap`` players; above that a multi-start coordinate ascent gives a
lower bound on the optimum, so the reported PoA is a lower bound too.
Worst-case welfare is searched over the same space and is grid-relative.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize

from wbancoex.backoffgame import BackoffGameModel, nash_equilibrium_cw
from wbancoex.channel import GainMatrix
from wbancoex.linkgame import (
    ActionProfile,
    LinkGameConfig,
    PdrModel,
    nash_equilibrium_link,
    sinr_all,
    utilities_link,
)


@dataclass
class EfficiencyReport:
    n: int
    game_tag: str
    welfare_ne: float
    welfare_opt: float
    welfare_worst: float
    poa: float | None
    exp_inv_poa: float | None
    l_metric: float | None
    exact: bool
    notice: str = ""

    def row(self) -> dict:
        return asdict(self)


POA_FIELDS = ("n", "game_tag", "welfare_ne", "welfare_opt", "welfare_worst", "poa", "exp_inv_poa", "l_metric", "exact")


def social_welfare(profile, gains: GainMatrix | None = None, cfg=None, model=None, game_tag: str = "link") -> float:
    """Sum of utilities.  For ``backoff``, ``profile`` is a CW vector and
    ``model`` a :class:`BackoffGameModel`."""
    if game_tag == "link":
        return float(np.sum(utilities_link(profile, gains, cfg, model)))
    if game_tag == "backoff":
        return float(model.welfare(np.asarray(profile, dtype=float)))
    raise ValueError(f"unknown game tag {game_tag!r}")


# -- link game ------------------------------------------------------------------------


def _link_welfare_batch(powers, rate_idx, gains: GainMatrix, cfg: LinkGameConfig, model: PdrModel):
    """Welfare of many profiles; ``powers`` and ``rate_idx`` have shape (K, N)."""
    h = gains.gains
    sig = powers * np.diag(h)
    interf = powers @ h.T - sig + gains.noise_power
    gamma = sig / interf
    rates = np.asarray(cfg.rates)[rate_idx]
    a = np.asarray(model.alpha)[[model.index(r) for r in cfg.rates]][rate_idx]
    b = np.asarray(model.beta)[[model.index(r) for r in cfg.rates]][rate_idx]
    with np.errstate(over="ignore"):
        u = a * gamma**b
    val = -cfg.c * powers**cfg.g + np.log1p(np.exp(np.maximum(u, -700.0))) - cfg.q / rates
    return val.sum(axis=-1)


def _refine_powers(profile: ActionProfile, gains, cfg, model, sign=1.0) -> ActionProfile:
    """Continuous local optimisation of welfare over powers at fixed rates (log scale)."""
    lo, hi = math.log(cfg.p_min), math.log(cfg.p_max)
    rates = profile.rates

    def f(x):
        prof = ActionProfile(np.exp(x), rates)
        w = np.sum(utilities_link(prof, gains, cfg, model))
        return -sign * w if np.isfinite(w) else 1e300

    x0 = np.clip(np.log(profile.powers), lo, hi)
    res = minimize(f, x0, method="L-BFGS-B", bounds=[(lo, hi)] * len(x0))
    cand = ActionProfile(np.exp(np.clip(res.x, lo, hi)), rates.copy())
    better = sign * social_welfare(cand, gains, cfg, model) >= sign * social_welfare(profile, gains, cfg, model)
    return cand if better else profile


def _coordinate_ascent_link(profile, gains, cfg, model, grid, sign=1.0, max_rounds=50):
    """Player-by-player exhaustive improvement of ``sign * welfare`` on the grid."""
    n = gains.n
    prof = profile.copy()
    rates = np.asarray(cfg.rates)
    n_r = len(rates)
    cand_p = np.repeat(grid, n_r)
    cand_r = np.tile(np.arange(n_r), len(grid))
    idx_of = {r: k for k, r in enumerate(rates)}
    best = sign * social_welfare(prof, gains, cfg, model)
    for _ in range(max_rounds):
        improved = False
        for i in range(n):
            pw = np.repeat(prof.powers[None, :], len(cand_p), axis=0)
            ri = np.repeat(np.array([idx_of[r] for r in prof.rates])[None, :], len(cand_p), axis=0)
            pw[:, i] = cand_p
            ri[:, i] = cand_r
            w = sign * _link_welfare_batch(pw, ri, gains, cfg, model)
            k = int(np.argmax(w))
            if w[k] > best + 1e-12 * max(1.0, abs(best)):
                best = w[k]
                prof.powers[i], prof.rates[i] = cand_p[k], rates[cand_r[k]]
                improved = True
        if not improved:
            break
    return prof


def global_optimum_link(gains: GainMatrix, cfg: LinkGameConfig, model: PdrModel, exact_cap: int = 3,
                        n_power: int = 24, starts: int = 6, rng=None, seeds=(), worst: bool = False):
    """Welfare maximiser (``worst=False``) or minimiser over the action space.

    Returns ``(profile, welfare, exact)``.  ``seeds`` are extra starting
    profiles (the equilibrium, typically), so the search can never end below
    a known point.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n = gains.n
    sign = -1.0 if worst else 1.0
    grid = np.geomspace(cfg.p_min, cfg.p_max, n_power)
    rates = np.asarray(cfg.rates)
    actions = [(p, k) for p in grid for k in range(len(rates))]
    exact = n <= exact_cap and len(actions) ** n <= 2_000_000
    candidates = [s.copy() for s in seeds]
    if exact:
        best_w, best = -np.inf, None
        for chunk in _chunks(itertools.product(range(len(actions)), repeat=n), 200_000):
            a = np.array(chunk)
            pw = grid[a // len(rates)]
            ri = a % len(rates)
            w = sign * _link_welfare_batch(pw, ri, gains, cfg, model)
            k = int(np.argmax(w))
            if w[k] > best_w:
                best_w, best = w[k], ActionProfile(pw[k], rates[ri[k]])
        candidates.append(best)
    else:
        for _ in range(starts):
            candidates.append(ActionProfile(rng.choice(grid, n), rng.choice(rates, n)))
        candidates.append(ActionProfile(np.full(n, cfg.p_max), np.full(n, rates[0])))
        candidates.append(ActionProfile(np.full(n, cfg.p_min), np.full(n, rates[-1])))
    out_w, out = -np.inf, None
    for c in candidates:
        if not exact or worst:
            c = _coordinate_ascent_link(c, gains, cfg, model, grid, sign)
        if not worst:
            c = _refine_powers(c, gains, cfg, model, sign)
        w = sign * social_welfare(c, gains, cfg, model)
        if w > out_w:
            out_w, out = w, c
    return out, sign * out_w, exact


def _chunks(it, size):
    buf = []
    for x in it:
        buf.append(x)
        if len(buf) == size:
            yield buf
            buf = []
    if buf:
        yield buf


# -- backoff game -------------------------------------------------------------------


def global_optimum_cw(model: BackoffGameModel, exact_cap: int = 3, coarse: int = 48, starts: int = 4,
                      rng=None, seeds=(), worst: bool = False):
    """Welfare maximiser or minimiser over integer CW profiles.

    Exact mode scans a coarse log grid of the CW range jointly, then improves
    one coordinate at a time over the full integer range.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    cfg = model.cfg
    n = model.n
    sign = -1.0 if worst else 1.0
    lattice = np.unique(np.round(np.geomspace(cfg.cw_lo, cfg.cw_hi, coarse)).astype(int))
    exact = n <= exact_cap and len(lattice) ** n <= 200_000
    candidates = [np.asarray(s, dtype=int) for s in seeds]
    if exact:
        profs = np.array(list(itertools.product(lattice, repeat=n)), dtype=float)
        w = sign * model.welfare(profs)
        candidates.append(profs[int(np.argmax(w))].astype(int))
    else:
        for _ in range(starts):
            candidates.append(rng.integers(cfg.cw_lo, cfg.cw_hi + 1, n))
        candidates.append(np.full(n, cfg.cw_lo))
        candidates.append(np.full(n, cfg.cw_hi))
    lattice_full = model.lattice()
    out_w, out = -np.inf, None
    for c in candidates:
        c = c.copy()
        best = sign * model.welfare(c.astype(float))
        for _ in range(50):
            improved = False
            for i in range(n):
                if exact:
                    grid = cfg.cw_range
                else:
                    near = np.arange(c[i] - 8, c[i] + 9)
                    grid = np.unique(np.clip(np.concatenate([lattice_full, near]), cfg.cw_lo, cfg.cw_hi))
                prof = np.repeat(c[None, :].astype(float), len(grid), axis=0)
                prof[:, i] = grid
                w = sign * model.welfare(prof)
                k = int(np.argmax(w))
                if w[k] > best + 1e-15:
                    best, c[i], improved = w[k], grid[k], True
            if not improved:
                break
        if best > out_w:
            out_w, out = best, c
    return out, sign * out_w, exact


# -- reports ---------------------------------------------------------------------------


def _note(notice, extra):
    return (notice + "; " if notice else "") + extra


def _report(n, tag, w_ne, w_opt, w_worst, exact, notice=""):
    """PoA is W_opt/W_ne for positive welfare.  When both are negative the
    game is scored as a cost game, |W_ne|/|W_opt|, so PoA >= 1 keeps meaning
    "equilibrium is worse"; with mixed signs there is no meaningful ratio."""
    if w_ne == 0:
        return EfficiencyReport(n, tag, w_ne, w_opt, w_worst, None, None, None, exact,
                                _note(notice, "welfare at equilibrium is zero, PoA undefined"))
    if w_ne > 0 and w_opt > 0:
        poa = w_opt / w_ne
    elif w_ne < 0 and w_opt < 0:
        poa = w_ne / w_opt
        notice = _note(notice, "negative welfare, PoA taken as cost ratio")
    else:
        poa = None
        notice = _note(notice, "welfare changes sign between equilibrium and optimum, PoA undefined")
    eip = math.exp(1.0 / poa) if poa else None
    with np.errstate(over="ignore"):
        lm = float(np.exp(w_worst / w_ne))
    return EfficiencyReport(n, tag, w_ne, w_opt, w_worst, poa, eip, lm, exact, notice)


def price_of_anarchy_link(gains: GainMatrix, cfg: LinkGameConfig, model: PdrModel, exact_cap: int = 3,
                          rng=None, ne=None) -> EfficiencyReport:
    rng = np.random.default_rng(0) if rng is None else rng
    if ne is None:
        res = nash_equilibrium_link(gains, cfg, model)
        ne = res.profile
    w_ne = social_welfare(ne, gains, cfg, model)
    _, w_opt, exact = global_optimum_link(gains, cfg, model, exact_cap, rng=rng, seeds=[ne])
    _, w_worst, _ = global_optimum_link(gains, cfg, model, exact_cap, rng=rng, worst=True)
    notice = "" if exact else "approximate optimum search: PoA is a lower bound"
    return _report(gains.n, "link", w_ne, w_opt, w_worst, exact, notice)


def price_of_anarchy_cw(model: BackoffGameModel, exact_cap: int = 3, rng=None, ne=None) -> EfficiencyReport:
    rng = np.random.default_rng(0) if rng is None else rng
    if ne is None:
        ne, _, _ = nash_equilibrium_cw(model)
    w_ne = social_welfare(ne, model=model, game_tag="backoff")
    _, w_opt, exact = global_optimum_cw(model, exact_cap, rng=rng, seeds=[ne])
    _, w_worst, _ = global_optimum_cw(model, exact_cap, rng=rng, worst=True)
    notice = "" if exact else "approximate optimum search: PoA is a lower bound"
    return _report(model.n, "backoff", w_ne, w_opt, w_worst, exact, notice)


def price_of_anarchy(gains, cfg, model, game_tag="link", **kw) -> EfficiencyReport:
    """Dispatch on the game.  For ``backoff``, ``model`` is a BackoffGameModel."""
    if game_tag == "link":
        return price_of_anarchy_link(gains, cfg, model, **kw)
    if game_tag == "backoff":
        return price_of_anarchy_cw(model, **kw)
    raise ValueError(f"unknown game tag {game_tag!r}")


def equilibrium_pdr(profile: ActionProfile, gains: GainMatrix, model: PdrModel) -> np.ndarray:
    """Per-player PDR at a link-game profile, the context for the backoff game."""
    gamma = sinr_all(profile.powers, gains)
    a, b = model.arrays(profile.rates)
    with np.errstate(over="ignore"):
        return np.exp(np.maximum(a * gamma**b, -700.0))


def write_poa_csv(path, reports, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POA_FIELDS + ("config_hash",))
        for r in reports:
            d = r.row()
            w.writerow([_fmt(d[k]) for k in POA_FIELDS] + [config_hash])


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


@dataclass
class PoaExperiment:
    instances: list
    skipped: dict
    table: list


def poa_instance(n: int, seed: int, link_cfg: LinkGameConfig, model: PdrModel, mac_params, backoff_cfg,
                 exact_cap: int = 3, channel_kw=None):
    """Both reports for one synthetic-channel snapshot, or None when the
    link-game best-response dynamics do not settle on a pure equilibrium."""
    from wbancoex.channel import SyntheticChannel, SyntheticChannelConfig

    kw = dict(channel_kw or {})
    kw["seed"] = seed
    gains = SyntheticChannel(SyntheticChannelConfig(n=n, **kw)).matrix(0)
    ne = nash_equilibrium_link(gains, link_cfg, model)
    if not ne.converged:
        return None
    rng = np.random.default_rng(seed)
    link = price_of_anarchy_link(gains, link_cfg, model, exact_cap, rng=rng, ne=ne.profile)
    bm = BackoffGameModel(mac_params, backoff_cfg, equilibrium_pdr(ne.profile, gains, model), ne.profile.rates)
    cw_ne, ok, _ = nash_equilibrium_cw(bm)
    if not ok:
        return link, None
    return link, price_of_anarchy_cw(bm, exact_cap, rng=rng, ne=cw_ne)


def poa_experiment(ns, instances: int, seed: int, link_cfg: LinkGameConfig, model: PdrModel, mac_params,
                   backoff_cfg, exact_cap: int = 3, channel_kw=None, progress=None) -> PoaExperiment:
    """Monte-Carlo PoA over synthetic channels; one table row per (N, game)."""
    rows, skipped = [], {}
    for n in ns:
        for k in range(instances):
            inst_seed = seed * 1_000_003 + n * 10_007 + k
            out = poa_instance(n, inst_seed, link_cfg, model, mac_params, backoff_cfg, exact_cap, channel_kw)
            if out is None:
                skipped[(n, "link")] = skipped.get((n, "link"), 0) + 1
                skipped[(n, "backoff")] = skipped.get((n, "backoff"), 0) + 1
                continue
            for rep, tag in zip(out, ("link", "backoff")):
                if rep is None:
                    skipped[(n, tag)] = skipped.get((n, tag), 0) + 1
                else:
                    rows.append(rep)
        if progress:
            progress(n)
    table = []
    for n in ns:
        for tag in ("link", "backoff"):
            reps = [r for r in rows if r.n == n and r.game_tag == tag and r.poa is not None]
            if not reps:
                continue
            mean = lambda a: float(np.mean(a))  # noqa: E731
            poa = mean([r.poa for r in reps])
            table.append(
                dict(
                    n=n, game_tag=tag, welfare_ne=mean([r.welfare_ne for r in reps]),
                    welfare_opt=mean([r.welfare_opt for r in reps]),
                    welfare_worst=mean([r.welfare_worst for r in reps]),
                    poa=poa, exp_inv_poa=math.exp(1.0 / poa),
                    l_metric=mean([r.l_metric for r in reps if r.l_metric is not None]),
                    exact=all(r.exact for r in reps), instances=len(reps),
                    skipped=skipped.get((n, tag), 0),
                    min_poa_exact=min((r.poa for r in reps if r.exact), default=None),
                )
            )
    return PoaExperiment(rows, skipped, table)


POA_TABLE_FIELDS = ("n", "game_tag", "welfare_ne", "welfare_opt", "welfare_worst", "poa", "exp_inv_poa",
                    "l_metric", "exact", "instances", "skipped", "min_poa_exact")


def write_poa_table(path, table, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POA_TABLE_FIELDS + ("config_hash",))
        for row in table:
            w.writerow([_fmt(row[k]) for k in POA_TABLE_FIELDS] + [config_hash])
