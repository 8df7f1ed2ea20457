import math

import numpy as np
import pytest

from wbancoex.channel import GainMatrix, TraceChannel, TraceTooShortError
from wbancoex.linkgame import PdrModel, pdr
from wbancoex.mac import MacParams, payload_duration, validation_params
from wbancoex.markov import solve_fixed_point
from wbancoex.sim import (
    Payload,
    PowerModel,
    SimConfig,
    energy_per_bit,
    overlap_fraction,
    resolve_transmission,
    run_scenario,
)

MODEL = PdrModel()
R1 = MacParams().rate_set[0]


class ConstantChannel:
    def __init__(self, gains, noise=1e-13):
        self.gm = GainMatrix(np.asarray(gains, dtype=float), noise)
        self.n = self.gm.n

    def matrix(self, k):
        return self.gm


def test_single_network_is_loss_free():
    cfg = SimConfig(n=1, superframes=2000, seed=3)
    m = run_scenario(cfg, ConstantChannel([[1.0]]))
    t_p = payload_duration(R1, cfg.mac)
    assert m.pdr()[0] == 1.0
    assert m.drops.sum() == 0
    assert m.mean_delay()[0] == 0.0
    assert m.goodput()[0] == pytest.approx(t_p / cfg.mac.superframe_len, rel=1e-3)


def test_collision_model_matches_fixed_point_at_five_networks():
    params = validation_params()
    cfg = SimConfig(n=5, superframes=100_000, seed=11, outcome="collision", mac=params, record_series=False)
    m = run_scenario(cfg)
    sol = solve_fixed_point(5, params)
    s = m.summary()
    assert s["collision_prob"] == pytest.approx(sol.collision_prob, rel=0.10)
    # tau_est counts transmissions over chain steps, as in the chain
    assert s["tau"] == pytest.approx(sol.tau, rel=0.02)
    assert s["mean_delay_s"] == pytest.approx(sol.mean_delay, rel=0.10)


def test_identical_seeds_identical_metrics():
    cfg = SimConfig(n=4, superframes=300, seed=5, mode="both")
    a, b = run_scenario(cfg), run_scenario(cfg)
    assert a.summary() == b.summary()
    assert a.series == b.series
    c = run_scenario(SimConfig(n=4, superframes=300, seed=6, mode="both"))
    assert c.summary() != a.summary()


@pytest.mark.parametrize("mode", ["baseline-tdma", "link-game", "backoff-game", "both"])
def test_conservation_and_bounds(mode):
    m = run_scenario(SimConfig(n=5, superframes=400, seed=2, mode=mode))
    assert np.array_equal(m.generated, m.successes + m.drops + m.in_flight)
    assert np.all((m.goodput() >= 0) & (m.goodput() <= 1))
    stages = [r["stage"] for r in m.series]
    assert max(stages) <= MacParams().max_backoff_stage
    for r in m.series:
        assert 0 <= r["tau_est"] <= 1 and 0 <= r["p_est"] <= 1


def test_discard_resets_backoff_state():
    # every overlap fails, so packets run through all stages and get dropped
    params = validation_params()
    m = run_scenario(SimConfig(n=6, superframes=3000, seed=4, outcome="collision", mac=params))
    assert m.drops.sum() > 0
    by_wban = {}
    for r in m.series:
        by_wban.setdefault(r["wban_id"], []).append(r)
    limit = params.max_retry_limit
    for rows in by_wban.values():
        before = 0
        for r in rows:
            if r["success"]:
                assert r["stage"] == 0
            elif before == limit:
                assert r["stage"] == 0  # discarded: back to the initial state
            else:
                assert r["stage"] == before + 1
            before = r["stage"]


def test_resolve_without_overlap_uses_noise_only(rng):
    gm = GainMatrix(np.array([[1e-6, 1e-7], [1e-7, 1e-6]]), 1e-12)
    own = Payload(0, 0.0, 0.01, 1e-5, R1)
    far = Payload(1, 0.02, 0.03, 1e-3, R1)
    res = resolve_transmission(own, [far], gm, MODEL, rng)
    assert not res.overlapped
    assert res.sinr == pytest.approx(1e-6 * 1e-5 / 1e-12)
    assert res.pdr == pytest.approx(pdr(10.0, R1, MODEL))


def test_strong_full_overlap_mostly_fails(rng):
    gm = GainMatrix(np.array([[1e-7, 1e-6], [1e-6, 1e-7]]), 1e-13)
    own = Payload(0, 0.0, 0.01, 1e-3, R1)
    jam = Payload(1, 0.0, 0.01, 1e-3, R1)
    res = resolve_transmission(own, [jam], gm, MODEL, rng)
    assert res.overlapped and res.pdr < 0.1
    wins = sum(resolve_transmission(own, [jam], gm, MODEL, rng).success for _ in range(2000))
    assert wins / 2000 < 0.1


def test_half_overlap_halves_interference(rng):
    gm = GainMatrix(np.array([[1e-6, 1e-8], [1e-8, 1e-6]]), 0.0)
    own = Payload(0, 0.0, 0.01, 1e-3, R1)
    full = Payload(1, 0.0, 0.01, 1e-3, R1)
    half = Payload(1, 0.005, 0.015, 1e-3, R1)
    assert overlap_fraction(own, half) == pytest.approx(0.5)
    g_full = resolve_transmission(own, [full], gm, MODEL, rng).sinr
    g_half = resolve_transmission(own, [half], gm, MODEL, rng).sinr
    assert g_half == pytest.approx(2 * g_full, rel=1e-12)


def test_min_sinr_mode_is_no_better_than_average(rng):
    gm = GainMatrix(np.array([[1e-6, 1e-8, 1e-8], [1e-8, 1e-6, 1e-8], [1e-8, 1e-8, 1e-6]]), 1e-13)
    own = Payload(0, 0.0, 0.01, 1e-3, R1)
    others = [Payload(1, 0.002, 0.012, 1e-3, R1), Payload(2, -0.004, 0.006, 1e-3, R1)]
    avg = resolve_transmission(own, others, gm, MODEL, rng).sinr
    worst = resolve_transmission(own, others, gm, MODEL, rng, interference="min-sinr").sinr
    assert worst == pytest.approx(1e-9 / (2e-11 + 1e-13))
    assert worst <= avg


def test_energy_per_bit_models():
    m = run_scenario(SimConfig(n=3, superframes=300, seed=1))
    radiated = sum(r["power"] * r["airtime"] for r in m.series) / m.delivered_bits.sum()
    assert energy_per_bit(m, PowerModel(1.0, 0.0)) == pytest.approx(radiated, rel=1e-12)
    assert energy_per_bit(m, PowerModel(0.25, 6e-3)) > energy_per_bit(m, PowerModel(0.25, 3e-3))
    assert energy_per_bit(m) == pytest.approx(energy_per_bit(m, PowerModel()), rel=1e-12)


def test_energy_absent_without_delivery():
    m = run_scenario(SimConfig(n=1, superframes=1, seed=1))
    assert m.delivered_bits.sum() == 0
    assert energy_per_bit(m) is None


def test_link_game_spends_less_energy_than_baseline_at_six():
    base = run_scenario(SimConfig(n=6, superframes=500, seed=1, mode="baseline-tdma", record_series=False))
    link = run_scenario(SimConfig(n=6, superframes=500, seed=1, mode="link-game", record_series=False))
    assert energy_per_bit(link) <= energy_per_bit(base)


def test_crowding_raises_chosen_window():
    def mean_cw(n):
        m = run_scenario(SimConfig(n=n, superframes=600, seed=1, mode="backoff-game"))
        vals = [r["cw_star"] for r in m.series if r["cw_star"] is not None]
        return np.mean(vals) if vals else MacParams().cw_min

    assert mean_cw(10) >= mean_cw(2)


def test_short_trace_raises():
    gm = GainMatrix(np.ones((2, 2)), 1e-13)
    ch = TraceChannel([gm] * 5)
    with pytest.raises(TraceTooShortError):
        run_scenario(SimConfig(n=2, superframes=50, seed=1), ch)


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        SimConfig(n=0)
    with pytest.raises(ValueError):
        SimConfig(n=2, mode="tdma")
    with pytest.raises(ValueError):
        SimConfig(n=2, outcome="maybe")
