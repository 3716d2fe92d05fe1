import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netdesign.costs import (
    CostModel,
    CostParams,
    SignalApproachState,
    beckmann_integral,
    bpr_time,
    link_time,
    link_time_derivative,
    signal_delay,
    total_travel_time,
    x_kink,
)
from netdesign.network import Link, Solution, build_network

P = CostParams()
P3600 = CostParams(study_duration_T=3600.0)
STATE = SignalApproachState(800.0, 0.5, 100.0)


def test_bpr_zero_flow():
    assert bpr_time(450.0, 0.0, 800.0, P) == 450.0


def test_bpr_at_capacity():
    assert bpr_time(450.0, 800.0, 800.0, P) == pytest.approx(450.0 * 1.15, rel=1e-15)


def test_bpr_link_1_3_half_loaded():
    # 450 * (1 + 0.15 * 0.5**4)
    assert bpr_time(450.0, 400.0, 800.0, P) == pytest.approx(454.21875, rel=1e-12)


def test_bpr_rejects_negative_flow():
    with pytest.raises(ValueError):
        bpr_time(450.0, -1.0, 800.0, P)


def test_x_kink_one_hour():
    assert x_kink(STATE, P3600) == pytest.approx(400.0 - math.sqrt(400.0 / 3600.0), rel=1e-12)
    assert x_kink(STATE, P3600) == pytest.approx(399.667, abs=5e-4)
    # the printed 399.3 is off by ~0.37 at T = 3600 s
    assert x_kink(STATE, P3600) - 399.3 == pytest.approx(0.367, abs=1e-3)


def test_x_kink_default_reproduces_printed_column(network):
    for i, link in enumerate(network.links):
        if link.enters_signal:
            state = SignalApproachState(link.base_capacity, 0.5, link.cycle_length)
            assert round(x_kink(state, P), 1) == link.x_kink_printed, link.label


def test_x_kink_clamps_at_zero():
    tiny = SignalApproachState(1e-4, 0.5, 100.0)
    assert x_kink(tiny, P) == 0.0
    # the linear branch applies from zero flow on
    w0 = signal_delay(0.0, tiny, P)
    assert signal_delay(10.0, tiny, P) == pytest.approx(w0 + 10.0 * P.study_duration_T / (2 * 1e-4 * 0.5))


def test_signal_delay_zero_flow():
    assert signal_delay(0.0, STATE, P) == pytest.approx(100.0 * 0.25 / 2.0, rel=1e-15)


@pytest.mark.parametrize("params", [P, P3600])
def test_signal_delay_continuous_at_kink(params):
    k = x_kink(STATE, params)
    gaps = [abs(signal_delay(k - eps, STATE, params) - signal_delay(k + eps, STATE, params)) for eps in (1e-3, 1e-6, 1e-9)]
    assert gaps[0] > gaps[1] > gaps[2]
    left = signal_delay(np.nextafter(k, 0), STATE, params)
    right = signal_delay(np.nextafter(k, np.inf), STATE, params)
    assert abs(left - right) < 1e-9


def test_signal_delay_monotone_on_grid():
    grid = np.linspace(0.0, 1.5 * 400.0, 2001)
    w = [signal_delay(x, STATE, P) for x in grid]
    assert all(b > a for a, b in zip(w, w[1:]))


def test_signal_delay_linear_branch_slope():
    k = x_kink(STATE, P)
    a, b = k + 10.0, k + 50.0
    slope = (signal_delay(b, STATE, P) - signal_delay(a, STATE, P)) / (b - a)
    assert slope == pytest.approx(P.study_duration_T / (2 * 800.0 * 0.5), rel=1e-12)


def test_link_time_plain_link_zero_flow(network):
    sol = Solution.initial(network)
    assert link_time(network, network.link_index(3, 1), 0.0, sol, P) == 550.0


def test_link_time_signalized_zero_flow(network):
    sol = Solution.initial(network)
    assert link_time(network, network.link_index(1, 3), 0.0, sol, P) == pytest.approx(462.5, rel=1e-15)


@pytest.mark.parametrize("flow", [1.0, 200.0, 399.0, 700.0, 1500.0])
def test_expansion_reduces_link_time(network, flow):
    i = network.link_index(1, 3)
    sol = Solution.initial(network)
    assert link_time(network, i, flow, sol.with_expand(i, True), P) < link_time(network, i, flow, sol, P)


def _central(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


def _central_mp(f, x):
    """Central difference evaluated in 40-digit arithmetic, so rounding cannot swamp small slopes."""
    with mpmath.workdps(40):
        x = mpmath.mpf(x)
        h = x * mpmath.mpf("1e-12")
        return float((f(x + h) - f(x - h)) / (2 * h))


def test_bpr_derivative_zero_at_zero(network):
    sol = Solution.initial(network)
    assert link_time_derivative(network, network.link_index(3, 1), 0.0, sol, P) == 0.0


@pytest.mark.parametrize("params", [P, P3600])
def test_derivative_matches_finite_differences(network, params):
    rng = np.random.default_rng(7)
    sol = Solution.initial(network).with_split(0, 0.37).with_expand(network.link_index(1, 3), True)
    for i in range(len(network.links)):
        link = network.links[i]
        flows = rng.uniform(1.0, 2.0 * link.base_capacity, 20)
        for x in flows:
            if link.enters_signal:
                from netdesign.costs import approach_state

                k = x_kink(approach_state(network, i, sol), params)
                if abs(x - k) < 1.0:
                    continue
            fd = _central_mp(lambda v: link_time(network, i, v, sol, params), x)
            an = link_time_derivative(network, i, x, sol, params)
            assert an == pytest.approx(fd, rel=1e-6), (link.label, x)


def test_derivative_at_kink_uses_right_branch(network):
    i = network.link_index(1, 3)
    sol = Solution.initial(network)
    k = x_kink(STATE, P)
    from netdesign.costs import bpr_derivative

    expected = bpr_derivative(450.0, k, 800.0, P) + P.study_duration_T / (2 * 400.0)
    assert link_time_derivative(network, i, k, sol, P) == pytest.approx(expected, rel=1e-15)


def test_total_travel_time_zero(network):
    assert total_travel_time(network, np.zeros(32), Solution.initial(network), P) == 0.0


def test_total_travel_time_single_link():
    net = build_network([Link(1, 2, 500.0, 1000.0)])
    params = CostParams(bpr_alpha=0.0)
    assert total_travel_time(net, [100.0], Solution((False,), ()), params) == 50_000.0


def test_total_travel_time_length_mismatch(network):
    with pytest.raises(ValueError):
        total_travel_time(network, np.zeros(31), Solution.initial(network), P)


def test_total_travel_time_permutation_invariant(network):
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 900, 32)
    sol = Solution.initial(network)
    perm = rng.permutation(32)
    links = [network.links[p] for p in perm]
    permuted = build_network(links)
    # same split for every signal, so the permuted solution is equivalent
    assert total_travel_time(permuted, x[perm], Solution.initial(permuted), P) == pytest.approx(
        total_travel_time(network, x, sol, P), rel=1e-12
    )


def test_vectorized_model_agrees_with_scalar(network):
    rng = np.random.default_rng(11)
    sol = Solution.initial(network).with_split(2, 0.7).with_split(4, 0.25).with_expand(5, True)
    model = CostModel(network, sol, P)
    x = rng.uniform(0, 1200, 32)
    t = model.times(x)
    d = model.derivatives(x)
    for i in range(32):
        assert t[i] == pytest.approx(link_time(network, i, x[i], sol, P), rel=1e-13)
        assert d[i] == pytest.approx(link_time_derivative(network, i, x[i], sol, P), rel=1e-12)


def test_beckmann_zero_flow(network):
    assert beckmann_integral(network, 0, 0.0, Solution.initial(network), P) == 0.0


def test_beckmann_constant_time_link():
    net = build_network([Link(1, 2, 300.0, 1000.0)])
    params = CostParams(bpr_alpha=0.0)
    assert beckmann_integral(net, 0, 250.0, Solution((False,), ()), params) == pytest.approx(75_000.0, rel=1e-12)


@pytest.mark.parametrize("index", [(1, 3), (3, 1), (5, 6), (12, 6), (8, 9)])
def test_beckmann_derivative_is_link_time(network, index):
    i = network.link_index(*index)
    sol = Solution.initial(network)
    rng = np.random.default_rng(index[0] * 100 + index[1])
    for x in rng.uniform(5.0, 1500.0, 10):
        h = 1e-2
        fd = _central(lambda v: beckmann_integral(network, i, v, sol, P), x, h)
        assert fd == pytest.approx(link_time(network, i, x, sol, P), rel=1e-6)


def test_closed_form_beckmann_matches_quadrature(network):
    rng = np.random.default_rng(5)
    sol = Solution.initial(network).with_split(1, 0.3).with_expand(0, True)
    model = CostModel(network, sol, P)
    x = rng.uniform(0, 1500, 32)
    closed = model.beckmann(x)
    for i in range(32):
        assert closed[i] == pytest.approx(beckmann_integral(network, i, x[i], sol, P), rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    s=st.floats(100.0, 2000.0),
    lam=st.floats(0.2, 0.8),
    cl=st.floats(60.0, 150.0),
    x1=st.floats(0.0, 3000.0),
    dx=st.floats(1e-3, 500.0),
)
def test_signal_delay_strictly_increasing(s, lam, cl, x1, dx):
    state = SignalApproachState(s, lam, cl)
    assert signal_delay(x1 + dx, state, P) > signal_delay(x1, state, P)


@settings(max_examples=60, deadline=None)
@given(s=st.floats(50.0, 3000.0), lam=st.floats(0.1, 0.9), cl=st.floats(30.0, 180.0))
def test_signal_delay_continuity_property(s, lam, cl):
    state = SignalApproachState(s, lam, cl)
    k = x_kink(state, P)
    assert abs(signal_delay(np.nextafter(k, 0), state, P) - signal_delay(np.nextafter(k, np.inf), state, P)) < 1e-9
