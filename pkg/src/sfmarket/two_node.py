"""Closed-form equilibrium of the symmetric, linear-cost two-node market."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .costs import CostSpec, Producer
from .errors import InputError, RegimeError
from .network import NetworkModel, two_node_network


@dataclass(frozen=True)
class TwoNodeScenario:
    """Node 1 is the cheap node. Each node hosts ``n`` identical producers of capacity ``k``."""

    d1: float
    d2: float
    n1: int
    n2: int
    k1: float
    k2: float
    beta1: float
    beta2: float

    def __post_init__(self) -> None:
        if min(self.d1, self.d2) <= 0 or min(self.k1, self.k2) <= 0 or self.beta1 <= 0:
            raise InputError("demands, capacities and costs must be positive")
        if int(self.n1) != self.n1 or int(self.n2) != self.n2:
            raise InputError("producer counts must be integers")
        D = self.demand
        if not (self.k1 * (self.n1 - 1) / D > 1 and self.k2 * (self.n2 - 1) / D > 1):
            raise RegimeError("outside two-node regime: a producer is pivotal")
        if not self.beta2 > self.beta1:
            raise RegimeError("outside two-node regime: node 2 must be the expensive node")

    @property
    def demand(self) -> float:
        return self.d1 + self.d2

    def price(self, node: int, q: float) -> float:
        """Equilibrium price at ``node`` (1 or 2) when it supplies ``q``."""
        n, k, beta = (self.n1, self.k1, self.beta1) if node == 1 else (self.n2, self.k2, self.beta2)
        return beta * (1 + (q / n) / ((n - 1) * k - q))

    def unconstrained_supply(self) -> float:
        """Node-1 supply equalising both prices, ignoring the line."""
        D = self.demand
        top = (self.n1 - 1) * self.k1
        eps = 1e-12 * D
        return brentq(lambda q: self.price(1, q) - self.price(2, D - q), eps, top - eps,
                      xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)

    def network(self, c: float) -> tuple[NetworkModel, list[Producer]]:
        """General network model of the same market."""
        net = two_node_network(self.d1, self.d2, c)
        prods = [Producer(0, self.k1, CostSpec.linear(self.beta1), f"n1_{k}")
                 for k in range(self.n1)]
        prods += [Producer(1, self.k2, CostSpec.linear(self.beta2), f"n2_{k}")
                  for k in range(self.n2)]
        return net, prods


class TwoNodeResult(NamedTuple):
    q1: float
    q2: float
    p1: float
    p2: float
    cost_ne: float
    cost_eff: float


def _bounds(s: TwoNodeScenario, c: float) -> tuple[float, float]:
    return max(s.d1 - c, 0.0), s.demand - max(s.d2 - c, 0.0)


def two_node_nash(s: TwoNodeScenario, c: float, q_free: float | None = None) -> TwoNodeResult:
    if c < 0:
        raise InputError("line capacity must be >= 0")
    D = s.demand
    q_free = s.unconstrained_supply() if q_free is None else q_free
    lo, hi = _bounds(s, c)
    q1 = min(max(q_free, lo), hi)
    q2 = D - q1
    if q2 > 0:
        p1, p2 = s.price(1, q1), s.price(2, q2)
    else:
        q1, q2 = D, 0.0
        p1 = p2 = s.price(1, D)
    cost_ne = s.beta1 * q1 + s.beta2 * q2
    cost_eff = s.beta1 * D + (s.beta2 - s.beta1) * max(s.d2 - c, 0.0)
    return TwoNodeResult(q1, q2, p1, p2, cost_ne, cost_eff)


def braess_condition(s: TwoNodeScenario, c: float) -> bool:
    """Whether the import-constrained prices leave node 1 dearer than node 2."""
    if c >= s.d1:
        return False
    q1, q2 = s.d1 - c, s.d2 + c
    ratio = (1 + (q1 / s.n1) / ((s.n1 - 1) * s.k1 - q1)) / (1 + (q2 / s.n2) / ((s.n2 - 1) * s.k2 - q2))
    return ratio > s.beta2 / s.beta1


def cost_derivative(s: TwoNodeScenario, c: float, q_free: float | None = None) -> float:
    """Right derivative of the equilibrium production cost in the line capacity."""
    q_free = s.unconstrained_supply() if q_free is None else q_free
    lo, hi = _bounds(s, c)
    if q_free < s.d1 - c:
        return s.beta2 - s.beta1
    if q_free > hi and c < s.d2:
        return s.beta1 - s.beta2
    return 0.0


class SweepRow(NamedTuple):
    c: float
    q1: float
    q2: float
    p1: float
    p2: float
    cost_ne: float
    cost_eff: float
    braess: bool


class Segment(NamedTuple):
    start: float
    end: float
    trend: str  # increasing, constant or decreasing


@dataclass
class Sweep:
    rows: list[SweepRow]
    segments: list[Segment]
    switch_points: list[float]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)


def capacity_grid(c_min: float, c_max: float, step: float) -> np.ndarray:
    if step <= 0 or c_max < c_min or c_min < 0:
        raise InputError("bad capacity grid")
    count = int(math.floor((c_max - c_min) / step + 1e-9)) + 1
    return np.round(c_min + step * np.arange(count), 12)


def _trend(slope: float) -> str:
    if slope > 0:
        return "increasing"
    if slope < 0:
        return "decreasing"
    return "constant"


def capacity_sweep(s: TwoNodeScenario, c_values: Sequence[float], tol: float = 1e-6) -> Sweep:
    """Equilibrium table over line capacities with monotone segments of the cost."""
    c_values = np.asarray(c_values, dtype=float)
    if np.any(c_values < 0) or np.any(np.diff(c_values) < 0):
        raise InputError("capacities must be nonnegative and sorted")
    q_free = s.unconstrained_supply()
    rows = []
    for c in c_values:
        r = two_node_nash(s, float(c), q_free)
        rows.append(SweepRow(float(c), *r, braess_condition(s, float(c))))
    trends = [_trend(cost_derivative(s, float(c), q_free)) for c in c_values]
    segments: list[Segment] = []
    switches: list[float] = []
    if len(c_values):
        start = float(c_values[0])
        for k in range(1, len(c_values)):
            if trends[k] != trends[k - 1]:
                lo, hi = float(c_values[k - 1]), float(c_values[k])
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    if _trend(cost_derivative(s, mid, q_free)) == trends[k - 1]:
                        lo = mid
                    else:
                        hi = mid
                switch = 0.5 * (lo + hi)
                switches.append(switch)
                segments.append(Segment(start, switch, trends[k - 1]))
                start = switch
        segments.append(Segment(start, float(c_values[-1]), trends[-1]))
    return Sweep(rows, segments, switches)
