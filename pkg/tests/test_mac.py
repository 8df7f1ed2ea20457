import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from wbancoex.mac import (
    InvalidRateError,
    MacParams,
    contention_window,
    draw_backoff,
    idle_duration,
    payload_duration,
    validation_params,
)


def test_contention_window_examples():
    p = validation_params()
    assert contention_window(0, p) == 0
    assert contention_window(3, p) == 512
    assert contention_window(7, p) == 1024


@given(cw=st.integers(1, 300), m=st.integers(0, 6), lam=st.integers(2, 4))
def test_contention_window_monotone_and_capped(cw, m, lam):
    p = MacParams(cw_min=cw, max_backoff_stage=m, persistence=lam)
    ws = [contention_window(b, p) for b in range(m + 4)]
    assert all(a <= b for a, b in zip(ws, ws[1:]))
    assert all(w == p.cw_max for w in ws[max(m, 1):]) or m == 0
    assert max(ws) <= lam**m * cw


def test_contention_window_rejects_negative_stage():
    with pytest.raises(ValueError):
        contention_window(-1, MacParams())


def test_draw_backoff_trivial(rng):
    assert draw_backoff(0, rng) == 0
    assert all(draw_backoff(1, rng) == 1 for _ in range(100))


def test_draw_backoff_uniform_over_one_to_w(rng):
    draws = np.array([draw_backoff(64, rng) for _ in range(1_000_000)])
    assert draws.min() == 1 and draws.max() == 64
    assert abs(draws.mean() - 32.5) < 0.1
    counts = np.bincount(draws, minlength=65)[1:]
    assert stats.chisquare(counts).pvalue > 0.01


def test_payload_duration_examples():
    assert payload_duration(32_000.0, validation_params()) == pytest.approx(27.5e-3, rel=1e-12)
    assert payload_duration(25_600.0, MacParams()) == pytest.approx(54.6875e-3, rel=1e-12)
    assert payload_duration(25_600.0, MacParams(payload_len_bytes=0)) == 0.0


def test_payload_duration_rejects_unknown_rate():
    with pytest.raises(InvalidRateError):
        payload_duration(30_000.0, MacParams())


def test_idle_non_negative_for_every_rate():
    for params in (MacParams(), validation_params()):
        for r in params.rate_set:
            assert idle_duration(r, params) >= 0


def test_cw_max_and_validation():
    assert MacParams(cw_min=64).cw_max == 16 * 64
    assert MacParams().max_retry_limit == MacParams().max_backoff_stage
    with pytest.raises(ValueError):
        MacParams(rate_set=(2.0, 1.0))
    with pytest.raises(ValueError):
        MacParams(payload_len_bytes=10_000)
    with pytest.raises(ValueError):
        MacParams(power_range=(0.0, 1e-3))
