import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wbancoex.backoffgame import (
    BackoffGameConfig,
    BackoffGameModel,
    ContentionEstimate,
    backoff_value,
    best_response_cw,
    best_response_cw_scan,
    fixed_estimate,
    nash_equilibrium_cw,
    tau_approx,
    update_estimates,
    utility_backoff,
)
from wbancoex.mac import MacParams, payload_duration, validation_params
from wbancoex.markov import goodput, mean_delay, solve_fixed_point, tx_probability
from wbancoex.sim import SimConfig, run_scenario

PARAMS = MacParams()
CFG = BackoffGameConfig()
P_DEFAULT = solve_fixed_point(5, PARAMS).pf  # failure probability at the five-network operating point


def test_tau_approx_examples():
    assert tau_approx(0.0, 64) == 1.0
    assert tau_approx(0.5, 64) == pytest.approx(1 / 33, rel=1e-14)


def test_tau_approx_error_in_high_pdr_regime():
    p = np.linspace(0.0, 0.2, 81)
    for cw in (32, 64, 256, 1024):
        rel = np.abs(tau_approx(p, cw) - tx_probability(p, cw, 4)) / tx_probability(p, cw, 4)
        assert rel.max() < 0.15


def test_tau_approx_error_small_at_low_failure():
    p = np.linspace(0.0, 0.1, 41)
    for cw in (32, 64, 256, 1024):
        rel = np.abs(tau_approx(p, cw) - tx_probability(p, cw, 4)) / tx_probability(p, cw, 4)
        assert rel.max() < 0.15


def test_estimator_examples():
    est = ContentionEstimate()
    for k in range(10):
        update_estimates(est, "tx_fail" if k < 5 else "tx_success")
    update_estimates(est, "slot_tick", 90)
    assert est.slots == 100 and est.transmitted_fragments == 10
    assert est.tau_est == pytest.approx(0.1)
    assert est.p_est == pytest.approx(0.5)


def test_estimator_prior_and_errors():
    assert ContentionEstimate().p_est == 0.0
    assert ContentionEstimate(prior_p=0.3).p_est == 0.3
    assert fixed_estimate(0.4).p_est == 0.4
    with pytest.raises(ValueError):
        update_estimates(ContentionEstimate(), "beacon")
    with pytest.raises(ValueError):
        update_estimates(ContentionEstimate(), "slot_tick", -1)


def test_estimator_window_truncates():
    est = ContentionEstimate(window_len=10)
    update_estimates(est, "tx_fail", 5)
    update_estimates(est, "slot_tick", 20)
    update_estimates(est, "tx_success", 2)
    assert est.slots == 10
    assert est.transmitted_fragments == 2 and est.ack_failures == 0


@given(st.lists(st.sampled_from(["tx_success", "tx_fail", "slot_tick"]), max_size=200), st.integers(1, 50))
def test_estimates_stay_in_unit_interval(events, window):
    est = ContentionEstimate(window_len=window)
    for e in events:
        update_estimates(est, e, 3 if e == "slot_tick" else 1)
        assert 0 <= est.tau_est <= 1 and 0 <= est.p_est <= 1


def test_estimator_equals_empirical_frequency_in_simulation():
    params = validation_params()
    m = run_scenario(SimConfig(n=4, superframes=20_000, seed=8, outcome="collision", mac=params))
    last = {}
    for r in m.series:
        last[r["wban_id"]] = r
    for i, r in last.items():
        assert r["tau_est"] == pytest.approx(m.tau()[i], rel=1e-12)
    # long-run convergence to the analytic attempt probability
    assert np.mean(m.tau()) == pytest.approx(solve_fixed_point(4, params).tau, rel=0.02)


def test_utility_without_failures():
    t_p = payload_duration(PARAMS.rate_set[0], PARAMS)
    for cw in (1, 8, 300, 1024):
        assert utility_backoff(cw, fixed_estimate(0.0), PARAMS, CFG) == pytest.approx(
            CFG.d * t_p / PARAMS.superframe_len, rel=1e-12
        )


def test_concave_in_cw_at_default_operating_point():
    cw = np.arange(1, 1025)
    v = backoff_value(cw, P_DEFAULT, PARAMS, CFG)
    assert np.all(np.diff(v, 2) <= 0)


def test_not_concave_at_light_contention():
    cw = np.arange(1, 1025)
    v = backoff_value(cw, 0.1, PARAMS, CFG)
    assert np.any(np.diff(v, 2) > 0)


def test_argmax_moves_up_with_failure_probability():
    best = [best_response_cw_scan(fixed_estimate(p), PARAMS, CFG) for p in (0.1, 0.3, 0.5)]
    assert best[0] < best[1] < best[2]


def test_no_contention_picks_smallest_window():
    assert best_response_cw(fixed_estimate(0.0), PARAMS, CFG) == CFG.cw_lo


def test_pdr_context_used_before_any_observation():
    est = ContentionEstimate()
    assert best_response_cw(est, PARAMS, CFG, pdr_context=0.5) == best_response_cw(
        fixed_estimate(0.5), PARAMS, CFG
    )


def test_ternary_search_equals_scan(rng):
    for k in range(1000):
        params = PARAMS if k % 2 else validation_params()
        cfg = BackoffGameConfig(
            d=10 ** rng.uniform(-4, 0), l=10 ** rng.uniform(-4, -1),
            cw_lo=int(rng.integers(1, 32)), cw_hi=int(rng.integers(64, 1025)),
        )
        est = fixed_estimate(rng.uniform(0, 1))
        assert best_response_cw(est, params, cfg) == best_response_cw_scan(est, params, cfg)


def test_component_derivatives():
    cw = np.arange(8.0, 1024.0)
    p = P_DEFAULT
    tau = tau_approx(p, cw)
    s = goodput(tau, p, PARAMS)
    delay = mean_delay(p, PARAMS, 0) + (mean_delay(p, PARAMS, 1) - mean_delay(p, PARAMS, 0)) * cw
    assert np.all(np.diff(s) < 0)
    assert np.all(np.diff(delay) > 0)
    d2 = np.diff(delay, 2)
    assert np.max(np.abs(d2)) <= 1e-6 * np.max(np.abs(np.diff(delay)))
    # the direct delay formula is affine in CW
    direct = np.array([mean_delay(p, PARAMS, int(c)) for c in cw[:50]])
    np.testing.assert_allclose(direct, delay[:50], rtol=1e-12)


def test_unique_integer_argmax_at_defaults():
    v = backoff_value(CFG.cw_range, P_DEFAULT, PARAMS, CFG)
    top = v.max()
    assert np.count_nonzero(v >= top - 1e-15 * abs(top)) == 1


def test_crowding_shifts_chosen_window():
    est2 = fixed_estimate(solve_fixed_point(2, PARAMS).pf)
    est10 = fixed_estimate(solve_fixed_point(10, PARAMS).pf)
    assert best_response_cw(est10, PARAMS, CFG) >= best_response_cw(est2, PARAMS, CFG)


def test_config_validation():
    with pytest.raises(ValueError):
        BackoffGameConfig(cw_lo=0)
    with pytest.raises(ValueError):
        BackoffGameConfig(d=float("inf"))


def test_coupled_model_basics():
    model = BackoffGameModel(validation_params(), CFG, np.array([0.5, 0.5, 0.5]))
    p = model.failure_probs(np.array([64, 64, 64]))
    assert np.all((p >= 0) & (p <= 1))
    assert np.allclose(p, p[0])
    assert model.failure_probs(np.array([1024, 64, 64]))[1] < p[1]
    cws, ok, _ = nash_equilibrium_cw(model)
    assert ok
    for i in range(3):
        assert model.best_response(i, cws, exhaustive=True) == cws[i]
