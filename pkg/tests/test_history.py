import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srmc.history import (
    AlphaSchedule,
    HistoryFault,
    HistoryState,
    alpha_step,
    gamma,
    update_history,
    warmup_length,
)


def test_gamma_examples():
    assert gamma(0, rho=1.0, scale=1.0, offset=1) == 1.0
    assert gamma(9, rho=1.0, scale=1.0, offset=1) == pytest.approx(0.1)
    assert gamma(0, rho=0.6, scale=0.1, offset=2) == pytest.approx(0.1 * 2**-0.6)


def test_robbins_monro_partial_sums():
    for rho in (0.55, 0.6, 0.8, 1.0):
        n = np.arange(10**6)
        g = gamma(n, rho)
        cum = np.cumsum(g)
        cum2 = np.cumsum(g**2)
        # sum gamma keeps growing at least like the integral of x^-rho (divergent
        # for rho <= 1); the squared sum has a tail bounded by the convergent integral.
        if rho < 1:
            lower = ((10**6 + 1) ** (1 - rho) - (10**4 + 2) ** (1 - rho)) / (1 - rho)
        else:
            lower = math.log((10**6 + 1) / (10**4 + 2))
        assert cum[-1] - cum[10**4] >= lower
        assert np.all(np.diff(cum2) > 0)
        tail = cum2[-1] - cum2[10**5]
        assert tail < (10**5) ** (1 - 2 * rho) / (2 * rho - 1) + 1e-12
        # exponent check: 2 rho > 1 >= rho
        assert 2 * rho > 1 >= rho


def test_arithmetic_mean_identity():
    h = HistoryState.zeros(1, rho=1.0)
    for s in (1.0, 3.0):
        h = update_history(h, [s], [s])
    assert h.theta[0] == pytest.approx(2.0)
    assert h.n == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40))
def test_rho_one_tracks_running_mean(scores):
    h = HistoryState.zeros(1, rho=1.0)
    for s in scores:
        h = update_history(h, [s], [2 * s])
    assert h.theta[0] == pytest.approx(np.mean(scores), rel=1e-9, abs=1e-9)
    assert h.mu[0] == pytest.approx(2 * np.mean(scores), rel=1e-9, abs=1e-9)


def test_fixed_point_of_drift():
    h = HistoryState(np.array([0.3, -1.0]), np.zeros(2), n=5)
    h2 = update_history(h, h.theta, np.zeros(2))
    np.testing.assert_array_equal(h2.theta, h.theta)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.51, 1.0),
    st.integers(0, 1000),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
)
def test_update_is_convex_combination(rho, n, theta, s):
    h = HistoryState(np.array(theta), np.zeros(1), n=n, rho=rho)
    new = update_history(h, np.array(s), np.zeros(1)).theta
    lo = np.minimum(theta, s) - 1e-12
    hi = np.maximum(theta, s) + 1e-12
    assert np.all(new >= lo) and np.all(new <= hi)


def test_non_finite_score_faults():
    h = HistoryState.zeros(2)
    with pytest.raises(HistoryFault):
        update_history(h, [np.nan, 0.0], [0.0, 0.0])
    with pytest.raises(HistoryFault):
        update_history(h, [0.0, 0.0], [np.inf, 0.0])
    with pytest.raises(ValueError):
        update_history(h, [0.0], [0.0, 0.0])


def test_invalid_rho_rejected():
    with pytest.raises(ValueError):
        HistoryState.zeros(1, rho=0.5)
    with pytest.raises(ValueError):
        HistoryState.zeros(1, rho=1.2)


def test_theta_shrinks_with_iid_zero_mean_scores():
    # 50 seeds, vectorized.
    R = 50
    rng = np.random.default_rng(0)
    theta = np.zeros((R, 3))
    early = None
    for n in range(10**5):
        theta += gamma(n, 0.6) * (rng.standard_normal((R, 3)) - theta)
        if n + 1 == 10**3:
            early = np.linalg.norm(theta, axis=1)
    late = np.linalg.norm(theta, axis=1)
    assert np.median(late) < np.median(early)


# ---------------------------------------------------------------------------
# Alpha schedules
# ---------------------------------------------------------------------------


def test_warmup_length():
    assert warmup_length(100_000) == 3000
    assert warmup_length(10_000) == 1000
    assert warmup_length(100_000, leapfrog_steps=10) == 300
    assert warmup_length(5) == 1


def test_fixed_schedule_constant():
    s = AlphaSchedule("fixed", alpha=2.5)
    assert [alpha_step(s, k) for k in (0, 1, 10**6)] == [2.5, 2.5, 2.5]


@pytest.mark.parametrize("alpha_ref", [1.0, 2.0, 5.0])
def test_capped_warmup_terminal_value(alpha_ref):
    s = AlphaSchedule("capped-warmup", alpha_ref=alpha_ref, total_budget=50_000)
    k_w = s.warmup_iterations
    assert alpha_step(s, 0) == 0.0
    assert abs(alpha_step(s, k_w) - 0.8 * alpha_ref) < 1e-9
    # The curve itself reaches the cap at k_w, so there is no jump at the freeze.
    assert abs(k_w / (s.curve_constant + k_w / alpha_ref) - 0.8 * alpha_ref) < 1e-9
    assert alpha_step(s, 10 * k_w) == 0.8 * alpha_ref


def test_capped_warmup_shape():
    s = AlphaSchedule("capped-warmup", alpha_ref=2.0, total_budget=20_000)
    k_w = s.warmup_iterations
    vals = np.array([alpha_step(s, k) for k in range(3 * k_w)])
    assert np.all(np.diff(vals[: k_w + 1]) > 0)
    assert np.all(vals[k_w:] == vals[k_w])


def test_capped_warmup_hmc_counts_leapfrog_steps():
    s = AlphaSchedule("capped-warmup", alpha_ref=1.0, total_budget=100_000, leapfrog_steps=10)
    assert s.warmup_iterations == 300
    assert alpha_step(s, 300) == pytest.approx(0.8)


def test_guardrail_requires_monitor():
    s = AlphaSchedule("guardrail", alpha_ref=1.0, total_budget=10_000)
    alpha_step(s, 0)
    with pytest.raises(ValueError):
        alpha_step(s, 1)


def test_guardrail_zero_monitor_matches_capped():
    g = AlphaSchedule("guardrail", alpha_ref=3.0, total_budget=30_000)
    c = AlphaSchedule("capped-warmup", alpha_ref=3.0, total_budget=30_000)
    for k in range(5000):
        assert alpha_step(g, k, 0.0 if k else None) == alpha_step(c, k)
    assert not g.frozen


def test_guardrail_freezes_early_on_large_monitor():
    g = AlphaSchedule("guardrail", alpha_ref=2.0, total_budget=50_000)
    c = AlphaSchedule("capped-warmup", alpha_ref=2.0, total_budget=50_000)
    k_w = g.warmup_iterations
    w = g.window_size
    emitted = []
    for k in range(2 * k_w):
        monitor = None if k == 0 else (10.0 if k > 3 * w else 0.0)
        emitted.append(alpha_step(g, k, monitor))
        assert emitted[-1] <= alpha_step(c, k) + 1e-15
    assert g.frozen
    assert g.frozen_at < k_w
    # Frozen at the value from the end of the last window below the threshold.
    assert emitted[-1] == pytest.approx(c.capped_value(3 * w - 1))
    assert emitted[-1] < 0.8 * 2.0


def test_guardrail_single_exceeding_window_does_not_freeze():
    g = AlphaSchedule("guardrail", alpha_ref=1.0, total_budget=10_000)
    w = g.window_size
    alpha_step(g, 0)
    for k in range(1, 6 * w):
        alpha_step(g, k, 10.0 if w < k <= 2 * w else 0.0)
    assert not g.frozen


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.integers(2000, 100_000), st.lists(st.floats(0, 5), min_size=50, max_size=50))
def test_guardrail_never_exceeds_capped(alpha_ref, budget, monitors):
    g = AlphaSchedule("guardrail", alpha_ref=alpha_ref, total_budget=budget)
    c = AlphaSchedule("capped-warmup", alpha_ref=alpha_ref, total_budget=budget)
    k_w = g.warmup_iterations
    for k in range(k_w + 20):
        m = None if k == 0 else monitors[k % 50]
        assert alpha_step(g, k, m) <= alpha_step(c, k) + 1e-12


def test_schedule_validation():
    with pytest.raises(ValueError):
        AlphaSchedule("nope")
    with pytest.raises(ValueError):
        AlphaSchedule("fixed", alpha=-1.0)
    with pytest.raises(ValueError):
        AlphaSchedule("capped-warmup", alpha_ref=0.0)
    with pytest.raises(ValueError):
        alpha_step(AlphaSchedule("fixed"), -1)
