"""Link travel time: BPR running time plus a kinked signal delay on approaches.

The signal delay follows the two-branch Van Vuren and Van Vliet form: a
uniform-plus-random delay up to the kink flow ``s*lam - sqrt(s*lam/T)`` and a
linear oversaturation extension beyond it, so that the curve is finite for
every flow. Times are seconds, flows vehicles per hour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .network import Network, Solution, effective_capacity


@dataclass(frozen=True)
class CostParams:
    bpr_alpha: float = 0.15
    bpr_beta: float = 4.0
    # 900 s reproduces the printed X-kink column of the reference instance
    study_duration_T: float = 900.0
    derivative_step: float = 1e-6

    def __post_init__(self):
        if self.bpr_alpha < 0:
            raise ValueError("bpr_alpha must be >= 0")
        if self.bpr_beta < 1:
            raise ValueError("bpr_beta must be >= 1")
        if not self.study_duration_T > 0:
            raise ValueError("study_duration_T must be > 0")


@dataclass(frozen=True)
class SignalApproachState:
    saturation_s: float
    lam: float
    cycle_CL: float

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"green ratio must lie in (0, 1), got {self.lam}")
        if not self.saturation_s > 0:
            raise ValueError("saturation flow must be positive")


def bpr_time(free_time: float, flow: float, capacity: float, params: CostParams) -> float:
    if flow < 0:
        raise ValueError(f"negative flow {flow}")
    return free_time * (1.0 + params.bpr_alpha * (flow / capacity) ** params.bpr_beta)


def bpr_derivative(free_time: float, flow: float, capacity: float, params: CostParams) -> float:
    if flow < 0:
        raise ValueError(f"negative flow {flow}")
    b = params.bpr_beta
    return free_time * params.bpr_alpha * b * flow ** (b - 1.0) / capacity**b


def x_kink(state: SignalApproachState, params: CostParams) -> float:
    sl = state.saturation_s * state.lam
    return max(sl - math.sqrt(sl / params.study_duration_T), 0.0)


def _delay_below_kink(x: float, s: float, lam: float, cl: float) -> float:
    sl = s * lam
    return cl * s * (1.0 - lam) ** 2 / (2.0 * (s - x)) + x / (2.0 * sl * (sl - x))


def signal_delay(flow: float, state: SignalApproachState, params: CostParams) -> float:
    if flow < 0:
        raise ValueError(f"negative flow {flow}")
    s, lam, cl = state.saturation_s, state.lam, state.cycle_CL
    kink = x_kink(state, params)
    if flow <= kink:
        return _delay_below_kink(flow, s, lam, cl)
    return (flow - kink) * params.study_duration_T / (2.0 * s * lam) + _delay_below_kink(kink, s, lam, cl)


def signal_delay_derivative(flow: float, state: SignalApproachState, params: CostParams) -> float:
    """Slope of the delay curve; at the kink itself the linear-branch slope is used."""
    if flow < 0:
        raise ValueError(f"negative flow {flow}")
    s, lam, cl = state.saturation_s, state.lam, state.cycle_CL
    sl = s * lam
    if flow < x_kink(state, params):
        return cl * s * (1.0 - lam) ** 2 / (2.0 * (s - flow) ** 2) + 1.0 / (2.0 * (sl - flow) ** 2)
    return params.study_duration_T / (2.0 * sl)


def approach_state(network: Network, index: int, solution: Solution) -> SignalApproachState | None:
    link = network.links[index]
    if not link.enters_signal:
        return None
    for j, sig in enumerate(network.signals):
        if index in sig.phase_a_links:
            lam = solution.green_split[j]
            break
        if index in sig.phase_b_links:
            lam = 1.0 - solution.green_split[j]
            break
    else:
        raise ValueError(f"link {link.label} enters a signal but belongs to no phase")
    return SignalApproachState(effective_capacity(network, index, solution), lam, link.cycle_length)


def link_time(network: Network, index: int, flow: float, solution: Solution, params: CostParams) -> float:
    link = network.links[index]
    cap = effective_capacity(network, index, solution)
    t = bpr_time(link.free_time, flow, cap, params)
    state = approach_state(network, index, solution)
    if state is not None:
        t += signal_delay(flow, state, params)
    return t


def link_time_derivative(
    network: Network, index: int, flow: float, solution: Solution, params: CostParams
) -> float:
    link = network.links[index]
    cap = effective_capacity(network, index, solution)
    d = bpr_derivative(link.free_time, flow, cap, params)
    state = approach_state(network, index, solution)
    if state is not None:
        d += signal_delay_derivative(flow, state, params)
    return d


def beckmann_integral(
    network: Network, index: int, flow: float, solution: Solution, params: CostParams
) -> float:
    """Integral of the link time from zero to ``flow`` by adaptive quadrature."""
    if flow <= 0:
        return 0.0
    points = None
    state = approach_state(network, index, solution)
    if state is not None:
        kink = x_kink(state, params)
        if 0 < kink < flow:
            points = [kink]
    value, _ = integrate.quad(
        lambda w: link_time(network, index, w, solution, params),
        0.0,
        flow,
        points=points,
        epsabs=0.0,
        epsrel=1e-11,
        limit=200,
    )
    return value


class CostModel:
    """Vectorized link times for one fixed (network, solution, params) triple."""

    def __init__(self, network: Network, solution: Solution, params: CostParams):
        n = len(network.links)
        self.params = params
        self.free_time = np.array([l.free_time for l in network.links], dtype=float)
        self.capacity = np.array([effective_capacity(network, i, solution) for i in range(n)])
        lam = np.full(n, 0.5)
        cycle = np.zeros(n)
        signalized = np.zeros(n, dtype=bool)
        for j, sig in enumerate(network.signals):
            g = solution.green_split[j]
            for i in sig.phase_a_links:
                lam[i], cycle[i], signalized[i] = g, sig.cycle_length, True
            for i in sig.phase_b_links:
                lam[i], cycle[i], signalized[i] = 1.0 - g, sig.cycle_length, True
        self.signalized = signalized
        self.lam = lam
        self.cycle = cycle
        s = self.capacity
        sl = s * lam
        self.sl = sl
        self.kink = np.maximum(sl - np.sqrt(sl / params.study_duration_T), 0.0)
        self.slope = params.study_duration_T / (2.0 * sl)
        self.uniform = cycle * s * (1.0 - lam) ** 2 / 2.0
        self.w_kink = self.uniform / (s - self.kink) + self.kink / (2.0 * sl * (sl - self.kink))
        self.int_kink = self._int_below(self.kink)

    def _int_below(self, x: np.ndarray) -> np.ndarray:
        s, sl = self.capacity, self.sl
        return (
            -self.uniform * np.log1p(-x / s)
            - 0.5 * np.log1p(-x / sl)
            - x / (2.0 * sl)
        )

    def times(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        t = self.free_time * (1.0 + p.bpr_alpha * (x / self.capacity) ** p.bpr_beta)
        low = np.minimum(x, self.kink)
        w = self.uniform / (self.capacity - low) + low / (2.0 * self.sl * (self.sl - low))
        w = np.where(x > self.kink, (x - self.kink) * self.slope + self.w_kink, w)
        return t + np.where(self.signalized, w, 0.0)

    def derivatives(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        b = p.bpr_beta
        d = self.free_time * p.bpr_alpha * b * x ** (b - 1.0) / self.capacity**b
        low = np.minimum(x, self.kink)
        dw = self.uniform / (self.capacity - low) ** 2 + 1.0 / (2.0 * (self.sl - low) ** 2)
        dw = np.where(x >= self.kink, self.slope, dw)
        return d + np.where(self.signalized, dw, 0.0)

    def beckmann(self, x: np.ndarray) -> np.ndarray:
        """Closed-form per-link integral of the link time from zero to ``x``."""
        p = self.params
        b = p.bpr_beta
        run = self.free_time * (x + p.bpr_alpha * x ** (b + 1.0) / ((b + 1.0) * self.capacity**b))
        low = np.minimum(x, self.kink)
        over = np.maximum(x - self.kink, 0.0)
        w = self._int_below(low) + self.w_kink * over + 0.5 * self.slope * over**2
        return run + np.where(self.signalized, w, 0.0)

    def beckmann_objective(self, x: np.ndarray) -> float:
        return float(self.beckmann(x).sum())

    def total_travel_time(self, x: np.ndarray) -> float:
        return float(np.dot(x, self.times(x)))


def total_travel_time(network: Network, flows, solution: Solution, params: CostParams) -> float:
    x = np.asarray(flows, dtype=float)
    if x.shape != (len(network.links),):
        raise ValueError(f"expected {len(network.links)} link flows, got shape {x.shape}")
    if np.any(x < 0):
        raise ValueError("negative link flow")
    return float(
        sum(x[i] * link_time(network, i, float(x[i]), solution, params) for i in range(len(x)) if x[i] != 0)
    )
