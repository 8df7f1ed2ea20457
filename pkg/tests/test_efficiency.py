import csv
import math

import numpy as np
import pytest

from wbancoex.backoffgame import BackoffGameConfig, BackoffGameModel, nash_equilibrium_cw
from wbancoex.channel import GainMatrix, SyntheticChannel, SyntheticChannelConfig
from wbancoex.efficiency import (
    POA_FIELDS,
    EfficiencyReport,
    _report,
    equilibrium_pdr,
    global_optimum_cw,
    global_optimum_link,
    poa_experiment,
    price_of_anarchy,
    price_of_anarchy_cw,
    price_of_anarchy_link,
    social_welfare,
    write_poa_csv,
)
from wbancoex.linkgame import (
    ActionProfile,
    LinkGameConfig,
    PdrModel,
    best_response_link,
    nash_equilibrium_link,
    utility_link,
)
from wbancoex.mac import MacParams

CFG = LinkGameConfig()
MODEL = PdrModel()
MAC = MacParams()
BCFG = BackoffGameConfig()


def snapshot(n, seed):
    return SyntheticChannel(SyntheticChannelConfig(n=n, seed=seed)).matrix(0)


def test_welfare_single_and_symmetric():
    g1 = GainMatrix(np.array([[1e-6]]), 1e-13)
    p1 = ActionProfile([2e-4], [CFG.rates[1]])
    assert social_welfare(p1, g1, CFG, MODEL) == pytest.approx(utility_link(0, p1, g1, CFG, MODEL))
    g2 = GainMatrix(np.array([[1e-6, 1e-9], [1e-9, 1e-6]]), 1e-13)
    p2 = ActionProfile([2e-4, 2e-4], [CFG.rates[1]] * 2)
    assert social_welfare(p2, g2, CFG, MODEL) == pytest.approx(2 * utility_link(0, p2, g2, CFG, MODEL), rel=1e-12)


def test_welfare_equals_per_player_sum(rng):
    for seed in range(20):
        g = snapshot(4, seed)
        prof = ActionProfile(rng.uniform(CFG.p_min, CFG.p_max, 4), rng.choice(CFG.rates, 4))
        total = sum(utility_link(i, prof, g, CFG, MODEL) for i in range(4))
        assert social_welfare(prof, g, CFG, MODEL) == pytest.approx(total, rel=1e-12)
    bm = BackoffGameModel(MAC, BCFG, [0.9, 0.8, 0.95])
    cws = np.array([30, 200, 500])
    assert social_welfare(cws, model=bm, game_tag="backoff") == pytest.approx(bm.values(cws).sum())
    with pytest.raises(ValueError):
        social_welfare(cws, model=bm, game_tag="other")


def test_single_player_optimum_is_best_response():
    g = GainMatrix(np.array([[10**-6.5]]), 1e-13)
    opt, _, exact = global_optimum_link(g, CFG, MODEL)
    assert exact
    p, r = best_response_link(0, ActionProfile([CFG.p_max], [CFG.rates[0]]), g, CFG, MODEL)
    cell = np.geomspace(CFG.p_min, CFG.p_max, 24)
    ratio = cell[1] / cell[0]
    assert opt.rates[0] == r
    assert 1 / ratio <= opt.powers[0] / p <= ratio


def test_symmetric_pair_has_symmetric_optimum():
    g = GainMatrix(np.array([[10**-6.5, 1e-10], [1e-10, 10**-6.5]]), 1e-13)
    opt, _, _ = global_optimum_link(g, CFG, MODEL)
    assert opt.rates[0] == opt.rates[1]
    assert opt.powers[0] == pytest.approx(opt.powers[1], rel=1e-4)


def test_optimum_dominates_equilibrium_on_many_instances():
    for seed in range(1000):
        g = snapshot(2, 10_000 + seed)
        ne = nash_equilibrium_link(g, CFG, MODEL).profile
        _, w_opt, _ = global_optimum_link(g, CFG, MODEL, seeds=[ne])
        assert w_opt >= social_welfare(ne, g, CFG, MODEL)


def test_single_player_poa_is_one():
    g = GainMatrix(np.array([[10**-6.5]]), 1e-13)
    rep = price_of_anarchy_link(g, CFG, MODEL)
    assert rep.poa == pytest.approx(1.0, abs=1e-9)
    bm = BackoffGameModel(MAC, BCFG, [0.9])
    assert price_of_anarchy_cw(bm).poa == pytest.approx(1.0)


def test_zero_equilibrium_welfare_reports_absent_poa():
    rep = _report(2, "link", 0.0, 1.0, -1.0, True)
    assert rep.poa is None and rep.l_metric is None
    assert "undefined" in rep.notice


def test_negative_welfare_scored_as_cost_ratio():
    rep = _report(2, "backoff", -4.0, -2.0, -8.0, True)
    assert rep.poa == 2.0 and rep.exp_inv_poa == pytest.approx(math.exp(0.5))
    assert "cost ratio" in rep.notice
    assert _report(2, "backoff", -1.0, -1.0, -3.0, True).poa == 1.0
    mixed = _report(2, "backoff", -1.0, 0.5, -3.0, True)
    assert mixed.poa is None and "sign" in mixed.notice


@pytest.mark.parametrize("n", [2, 3])
def test_exact_poa_at_least_one_and_ordering(n):
    for seed in range(3):
        g = snapshot(n, seed)
        rep = price_of_anarchy(g, CFG, MODEL, "link")
        assert rep.exact
        assert rep.welfare_opt >= rep.welfare_ne >= rep.welfare_worst
        assert rep.poa >= 1.0
        assert 1.0 < rep.exp_inv_poa <= math.e
        ne = nash_equilibrium_link(g, CFG, MODEL).profile
        bm = BackoffGameModel(MAC, BCFG, equilibrium_pdr(ne, g, MODEL), ne.rates)
        rb = price_of_anarchy(g, CFG, bm, "backoff")
        assert rb.exact and rb.welfare_opt >= rb.welfare_ne >= rb.welfare_worst


def test_large_n_switches_to_lower_bound():
    g = snapshot(5, 1)
    rep = price_of_anarchy_link(g, CFG, MODEL, exact_cap=3)
    assert not rep.exact and "lower bound" in rep.notice
    _, _, exact = global_optimum_cw(BackoffGameModel(MAC, BCFG, np.full(5, 0.9)))
    assert not exact


def test_equilibrium_certificates(rng):
    # no unilateral deviation helps the deviator at an equilibrium
    for seed in range(5):
        g = snapshot(4, seed)
        res = nash_equilibrium_link(g, CFG, MODEL)
        if not res.converged:
            continue
        ne = res.profile
        for _ in range(100):
            i = int(rng.integers(4))
            dev = ne.with_action(i, rng.uniform(CFG.p_min, CFG.p_max), rng.choice(CFG.rates))
            assert utility_link(i, dev, g, CFG, MODEL) <= utility_link(i, ne, g, CFG, MODEL) + 1e-12
    bm = BackoffGameModel(MAC, BCFG, [0.9, 0.8, 0.95, 0.85])
    cws, ok, _ = nash_equilibrium_cw(bm)
    assert ok
    base = bm.values(cws.astype(float))
    for _ in range(100):
        i = int(rng.integers(4))
        dev = cws.copy()
        dev[i] = rng.integers(BCFG.cw_lo, BCFG.cw_hi + 1)
        assert bm.values(dev.astype(float))[i] <= base[i] + 1e-15


def test_poa_csv_layout(tmp_path):
    rep = EfficiencyReport(2, "link", 1.0, 1.1, 0.1, 1.1, math.exp(1 / 1.1), math.exp(0.1), True)
    f = tmp_path / "poa.csv"
    write_poa_csv(f, [rep], "abc")
    rows = list(csv.reader(f.open()))
    assert rows[0] == list(POA_FIELDS) + ["config_hash"]
    assert rows[1][0] == "2" and rows[1][-1] == "abc"


def test_small_experiment_table():
    exp = poa_experiment([2], 3, 7, CFG, MODEL, MAC, BCFG)
    tags = {row["game_tag"] for row in exp.table}
    assert tags == {"link", "backoff"}
    for row in exp.table:
        assert row["instances"] + row["skipped"] == 3
