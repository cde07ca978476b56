"""Competitive and supply-function Nash equilibria, with best-response checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .costs import CostSpec, Producer, as_bids
from .dispatch import (
    DispatchOutcome,
    capacities,
    efficient_dispatch,
    local_allocation,
    nodal_price,
    node_members,
    reported_dispatch,
    total_reported_cost,
)
from .engine import NodeCurves, SeparableObjective, dual_bisection, solve_polytope
from .errors import InfeasibleError, InputError, RegimeError
from .network import NetworkModel, injection_feasible, max_nodal_supplies, two_node_network

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-6
PRICE_CAP_FACTOR = 1e3


@dataclass
class EquilibriumOutcome:
    kind: str
    dispatch: DispatchOutcome
    bids: np.ndarray
    payoffs: np.ndarray
    iso_payoff: float
    verified: bool
    max_deviation_gain: float
    price_intervals: np.ndarray | None = None
    notes: tuple[str, ...] = ()

    @property
    def total_cost(self) -> float:
        return self.dispatch.objective_value


class Verification(NamedTuple):
    ok: bool
    max_deviation_gain: float
    iso_optimal: bool
    gains: np.ndarray


def producer_payoff(price: float, x: float, cost: CostSpec) -> float:
    """Revenue at the nodal price minus true production cost."""
    return price * x - cost.value(x)


def _payoffs(producers, x, p) -> np.ndarray:
    return np.array([producer_payoff(p[prod.node], xj, prod.cost)
                     for prod, xj in zip(producers, x)])


# -- competitive equilibrium -------------------------------------------------


def competitive_equilibrium(net: NetworkModel, producers: Sequence[Producer]) -> EquilibriumOutcome:
    """Efficient dispatch priced at its duals, with bids that reproduce it."""
    out = efficient_dispatch(net, producers)
    X = capacities(producers)
    p = out.p
    node_p = np.array([p[prod.node] for prod in producers])
    theta = np.maximum(node_p * (X - out.x), 0.0)
    payoffs = _payoffs(producers, out.x, p)
    notes = list(out.notes)
    gains = np.zeros(len(producers))
    for j, prod in enumerate(producers):
        if prod.capacity == 0:
            continue
        lo, hi = NodeCurves([prod.cost], [prod.capacity]).response(max(node_p[j], 0.0))
        best = max(producer_payoff(node_p[j], lo[0], prod.cost),
                   producer_payoff(node_p[j], hi[0], prod.cost))
        gains[j] = max(best - payoffs[j], 0.0)
    verified = bool(np.all(gains <= DEFAULT_EPS))
    if net.total_demand == 0:
        notes.append("zero demand: prices are not positive")
        verified = False
    elif np.any(p <= 0):
        notes.append("nonpositive nodal price")
        verified = False
    if X.sum() - net.total_demand <= 1e-9 * max(1.0, net.total_demand):
        notes.append("not strictly feasible: duals may be non-unique")
    try:
        iso = -total_reported_cost(net, producers, theta, out.q)
    except InputError:
        iso = -math.inf
    return EquilibriumOutcome("competitive", out, theta, payoffs, iso, verified,
                              float(gains.max(initial=0.0)), None, tuple(notes))


# -- node oracle -------------------------------------------------------------


def _node_curves(costs, caps, z) -> NodeCurves:
    caps = np.asarray(caps, dtype=float)
    residual = caps.sum() - caps - z
    return NodeCurves(costs, caps, 1.0 / residual)


def no_pivot_limit(caps) -> float:
    caps = np.asarray(caps, dtype=float)
    return float(caps.sum() - caps.max()) if caps.size else 0.0


def g_oracle(costs: Sequence[CostSpec], caps, z: float) -> tuple[np.ndarray, float]:
    """Minimum modified-cost allocation of ``z`` and the left derivative of the nodal cost."""
    limit = no_pivot_limit(caps)
    if z >= limit:
        raise RegimeError("beyond no-pivotal range")
    if z < 0:
        raise InputError("nodal supply must be nonnegative")
    alloc = dual_bisection(_node_curves(costs, caps, z), z)
    return alloc.x, alloc.interval[0]


def capacity_breaks(costs, caps, grid: int = 64, tol: float = 1e-13) -> list[float]:
    """Nodal supplies at which some producer reaches a kink or its capacity.

    There ``g`` may jump. Producer ``j`` has reached point ``t`` at ``z``
    when the node's supply at the left marginal of ``j`` at ``t`` does not
    exceed ``z``. Reaching need not be monotone in ``z``, so transitions are
    located on a grid and refined by bisection.
    """
    caps = np.asarray(caps, dtype=float)
    limit = no_pivot_limit(caps)
    top = limit * (1 - 1e-12)
    owner, point = [], []
    for k, (cost, cap) in enumerate(zip(costs, caps)):
        for t in [*(b for b in cost.breakpoints if 0 < b < cap), cap]:
            owner.append(k)
            point.append(float(t))
    owner = np.array(owner, dtype=int)
    base = np.array([costs[k].derivatives(t)[0] for k, t in zip(owner, point)])

    def capped(z):
        curves = _node_curves(costs, caps, z)
        fill = base * (1 + np.array(point) * curves.inverse_residual[owner])
        return np.array([curves.response(lam)[1].sum() <= z for lam in fill])

    zs = np.linspace(0.0, top, grid + 1)
    states = [capped(z) for z in zs]
    breaks = []
    for k in range(grid):
        for j in np.flatnonzero(~states[k] & states[k + 1]):
            lo, hi = zs[k], zs[k + 1]
            while hi - lo > tol * max(1.0, limit):
                mid = 0.5 * (lo + hi)
                if capped(mid)[j]:
                    hi = mid
                else:
                    lo = mid
            breaks.append(float(hi))
    gap = 1e-9 * max(1.0, limit)  # shorter segments only hurt the solver
    out: list[float] = []
    for b in sorted(breaks):
        if gap < b < top - gap and (not out or b - out[-1] > gap):
            out.append(b)
    return out


def g_slope(costs, caps, z: float, x: np.ndarray) -> float:
    """Slope of ``g`` at ``z`` by implicit differentiation; nan if no producer is interior."""
    curves = _node_curves(costs, caps, z)
    caps = np.asarray(caps, dtype=float)
    left, right = curves.derivatives(x)
    inside = (x > 0) & (x < caps) & np.isclose(left, right, rtol=1e-12, atol=1e-14)
    if not inside.any():
        return math.nan
    rinv = curves.inverse_residual[inside]
    a = curves.curvature(x)[inside]
    marg = np.array([costs[k].derivatives(float(x[k]))[1] for k in np.flatnonzero(inside)])
    b = marg * x[inside] * rinv**2
    if np.any(a <= 0):
        return math.nan
    return float((1 + np.sum(b / a)) / np.sum(1 / a))


# -- Nash equilibrium --------------------------------------------------------


def pivotal_violations(net: NetworkModel, producers: Sequence[Producer], qmax=None) -> list[tuple[int, float]]:
    """Producers whose rivals cannot cover the maximum nodal supply, with the margin."""
    members = node_members(producers, net.node_count)
    qmax = max_nodal_supplies(net) if qmax is None else qmax
    X = capacities(producers)
    out = []
    for i, idx in enumerate(members):
        total = X[idx].sum()
        for j in idx:
            margin = total - X[j] - qmax[i]
            if margin <= 0:
                out.append((int(j), float(margin)))
    return out


def _check_game(net, producers) -> None:
    members = node_members(producers, net.node_count)
    for i, idx in enumerate(members):
        if idx.size == 1:
            raise RegimeError(
                f"pivotal supplier present: NE computation refused "
                f"(producer {producers[idx[0]].label} is alone at node {i})")
    bad = pivotal_violations(net, producers)
    if bad:
        names = ", ".join(producers[j].label for j, _ in bad)
        raise RegimeError(f"pivotal supplier present: NE computation refused ({names})")


def _modified_piece_objective(producers, q, lower_zero=True):
    """Problem over per-piece variables with each producer's modified cost at fixed ``q``."""
    owner, start, length, a, b = [], [], [], [], []
    members_cap = {}
    for prod in producers:
        members_cap[prod.node] = members_cap.get(prod.node, 0.0) + prod.capacity
    rinv_prod = np.array([1.0 / (members_cap[p.node] - p.capacity - q[p.node]) for p in producers])
    for j, prod in enumerate(producers):
        for s, e, aa, bb in prod.cost.pieces(prod.capacity):
            owner.append(j)
            start.append(s)
            length.append(e - s)
            a.append(aa)
            b.append(bb)
    owner = np.array(owner, dtype=int)
    start, length = np.array(start), np.array(length)
    a, b = np.array(a), np.array(b)
    r = rinv_prod[owner]

    def grad(y):
        x = start + y
        return (2 * a * x + b) * (1 + x * r)

    def hess(y):
        x = start + y
        return 2 * a * (1 + x * r) + (2 * a * x + b) * r

    obj = SeparableObjective(grad, hess, np.zeros(owner.size), length)
    return obj, owner


def _trivial(net, producers, notes=("zero demand: trivial equilibrium",)) -> EquilibriumOutcome:
    N, n = len(producers), net.node_count
    out = DispatchOutcome(np.zeros(N), np.zeros(n), np.zeros(n), 0.0,
                          np.zeros(2 * net.line_count), 0.0, notes=tuple(notes))
    return EquilibriumOutcome("nash", out, np.zeros(N), np.zeros(N), 0.0, True, 0.0,
                              np.zeros((n, 2)), tuple(notes))


def nash_equilibrium(net: NetworkModel, producers: Sequence[Producer],
                     eps: float = DEFAULT_EPS, verify: bool = True) -> EquilibriumOutcome:
    """Supply-function Nash equilibrium via the nodal and producer convex programs."""
    n = net.node_count
    members = node_members(producers, n)
    if capacities(producers).sum() < net.total_demand:
        raise InfeasibleError("demand cannot be met")
    if net.total_demand == 0:
        return _trivial(net, producers)
    _check_game(net, producers)
    X = capacities(producers)
    costs = [p.cost for p in producers]
    node_costs = [[costs[j] for j in idx] for idx in members]
    node_caps = [X[idx] for idx in members]
    limits = np.array([no_pivot_limit(c) for c in node_caps])
    empty = np.array([idx.size == 0 for idx in members])

    cache: dict[tuple[int, float], tuple[np.ndarray, float]] = {}

    def node_g(i, z):
        z = float(min(max(z, 0.0), limits[i] * (1 - 1e-13)))
        key = (i, z)
        if key not in cache:
            cache[key] = g_oracle(node_costs[i], node_caps[i], z)
        return cache[key]

    # g jumps where a producer reaches capacity, so each node's supply is split
    # into segments on which g is continuous.
    seg_node, seg_start, seg_len = [], [], []
    for i in range(n):
        if empty[i]:
            continue
        cuts = [0.0, *capacity_breaks(node_costs[i], node_caps[i]), limits[i]]
        for a, b in zip(cuts, cuts[1:]):
            seg_node.append(i)
            seg_start.append(a)
            seg_len.append(b - a)
    seg_node = np.array(seg_node, dtype=int)
    seg_start = np.array(seg_start)
    seg_len = np.array(seg_len)

    # Capping points are known only to bisection accuracy and g(0) is a left
    # derivative, so evaluation points are kept off the segment ends.
    guard = 1e-10 * np.maximum(1.0, limits[seg_node]) if seg_node.size else np.zeros(0)

    def inside(y):
        t = np.minimum(np.maximum(y, guard), seg_len - guard)
        return seg_start + np.maximum(t, 0.0)

    def grad(y):
        return np.array([node_g(i, z)[1] for i, z in zip(seg_node, inside(y))])

    def hess(y):
        out = np.zeros(y.size)
        for k, (i, z) in enumerate(zip(seg_node, inside(y))):
            a = seg_start[k]
            z = float(min(z, limits[i] * (1 - 1e-13)))
            x, _ = node_g(i, z)
            slope = g_slope(node_costs[i], node_caps[i], z, x)
            if not math.isfinite(slope):
                h = 1e-7 * max(1.0, limits[i])
                lo = max(z - h, a + guard[k])
                hi = min(z + h, a + seg_len[k] - guard[k])
                slope = (node_g(i, hi)[1] - node_g(i, lo)[1]) / (hi - lo) if hi > lo else 0.0
            out[k] = max(slope, 0.0)
        return out

    res_q = solve_polytope(SeparableObjective(grad, hess, np.zeros(seg_len.size), seg_len),
                           net, seg_node)
    if res_q.status == "infeasible":
        raise InfeasibleError("demand cannot be met")
    upper = np.where(empty, 0.0, limits)
    q = np.where(empty, 0.0, np.clip(res_q.injection, 0.0, upper))
    notes = []
    if res_q.status != "optimal":
        notes.append(f"nodal problem status {res_q.status}")

    obj, owner = _modified_piece_objective(producers, q)
    node_of = np.array([producers[j].node for j in owner], dtype=int)
    res_x = solve_polytope(obj, net, node_of)
    if res_x.status == "infeasible":
        raise InfeasibleError("demand cannot be met")
    if res_x.status != "optimal":
        notes.append(f"production problem status {res_x.status}")
    x = np.clip(np.bincount(owner, res_x.minimizer, minlength=len(producers)), 0.0, X)
    p = res_x.prices.copy()

    intervals = np.zeros((n, 2))
    x_node = np.zeros(len(producers))
    for i, idx in enumerate(members):
        if idx.size == 0:
            intervals[i] = (-math.inf, math.inf)
            continue
        alloc = dual_bisection(_node_curves(node_costs[i], node_caps[i], q[i]), q[i])
        x_node[idx] = alloc.x
        # q may sit on a jump of g up to solver accuracy: take the hull of
        # the intervals within a small distance of q.
        lo, hi = alloc.interval
        delta = 1e-7 * max(1.0, limits[i])
        for z in (q[i] - delta, q[i] + delta):
            if 0 <= z < limits[i]:
                side = dual_bisection(_node_curves(node_costs[i], node_caps[i], z), z).interval
                lo, hi = min(lo, side[0]), max(hi, side[1])
        intervals[i] = (lo, hi)
        if q[i] <= 1e-9 * max(1.0, limits[i]):
            lo = -math.inf  # supply held at zero by its bound
        slack = 1e-6 * max(1.0, abs(p[i]))
        if not (lo - slack <= p[i] <= hi + slack):
            notes.append(f"price at node {i} outside its stationarity interval")
    if np.abs(x - x_node).max(initial=0.0) > 1e-6:
        notes.append("production paths disagree")
    q_x = np.zeros(n)
    np.add.at(q_x, [prod.node for prod in producers], x)
    if np.abs(q_x - q).max(initial=0.0) > 1e-6:
        notes.append("production does not add up to nodal supply")

    node_p = p[[prod.node for prod in producers]]
    theta = np.maximum(node_p * (X - x), 0.0)
    payoffs = _payoffs(producers, x, p)
    value = sum(prod.cost.value(xj) for prod, xj in zip(producers, x))
    dispatch = DispatchOutcome(x, q, p, res_x.lam, res_x.mu, float(value), res_x.residuals)
    iso = -total_reported_cost(net, producers, theta, q)
    verified, gain = False, math.nan
    if verify:
        check = verify_nash(net, producers, q, theta, eps)
        verified, gain = check.ok, check.max_deviation_gain
    return EquilibriumOutcome("nash", dispatch, theta, payoffs, iso, verified, gain,
                              intervals, tuple(notes))


# -- deviations and verification ---------------------------------------------


def _node_payoff(caps, bids, k, q_i, cost) -> float:
    p = nodal_price(caps, bids, q_i)
    x = local_allocation(caps, bids, q_i)[k]
    return producer_payoff(p, x, cost)


def _price_ceiling(producers) -> float:
    top = max((p.cost.derivatives(p.capacity)[1] for p in producers), default=1.0)
    return PRICE_CAP_FACTOR * (top if top > 0 else 1.0)


def best_response(producers: Sequence[Producer], q, bids, j: int,
                  price_ceiling: float | None = None) -> tuple[float, float]:
    """Payoff-maximising bid of producer ``j`` with nodal supply and rival bids fixed."""
    theta = as_bids(bids, len(producers)).copy()
    q = np.asarray(q, dtype=float)
    node = producers[j].node
    idx = np.array([k for k, p in enumerate(producers) if p.node == node])
    k = int(np.flatnonzero(idx == j)[0])
    caps = capacities(producers)[idx]
    cost = producers[j].cost
    local = theta[idx].copy()
    if q[node] >= caps.sum():
        raise InputError("price undefined at full capacity")

    def payoff(t):
        local[k] = t
        return _node_payoff(caps, local, k, q[node], cost)

    ceiling = (price_ceiling or _price_ceiling(producers)) * max(producers[j].capacity, 1e-12)
    candidates = [(0.0, payoff(0.0)), (theta[j], payoff(theta[j]))]
    res = minimize_scalar(lambda t: -payoff(t), bounds=(0.0, ceiling), method="bounded",
                          options={"xatol": 1e-10, "maxiter": 1000})
    candidates.append((float(res.x), payoff(float(res.x))))
    # Refine near the incumbent, where the optimum usually sits.
    span = max(abs(theta[j]), 1e-6)
    res = minimize_scalar(lambda t: -payoff(t), bounds=(0.0, min(ceiling, 4 * span)),
                          method="bounded", options={"xatol": 1e-12, "maxiter": 1000})
    candidates.append((float(res.x), payoff(float(res.x))))
    return max(candidates, key=lambda c: c[1])


def verify_nash(net: NetworkModel, producers: Sequence[Producer], q, bids,
                eps: float = DEFAULT_EPS) -> Verification:
    """Check both equilibrium conditions: no profitable bid deviation and ISO optimality."""
    n = net.node_count
    members = node_members(producers, n)
    theta = as_bids(bids, len(producers))
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.size != n:
        raise InputError(f"shape error: expected {n} nodal supplies, got {q.size}")
    X = capacities(producers)
    if net.total_demand == 0 and np.allclose(q, 0) and np.allclose(theta, 0):
        return Verification(True, 0.0, True, np.zeros(len(producers)))
    gains = np.zeros(len(producers))
    ceiling = _price_ceiling(producers)
    for i, idx in enumerate(members):
        if idx.size == 0:
            continue
        if q[i] >= X[idx].sum():
            gains[idx] = math.inf
            continue
        for k, j in enumerate(idx):
            current = _node_payoff(X[idx], theta[idx], k, q[i], producers[j].cost)
            _, best = best_response(producers, q, theta, int(j), ceiling)
            gains[j] = max(best - current, 0.0)
    feasible = injection_feasible(net, q - net.demand, tol=1e-6) and all(
        abs(q[i]) <= 1e-9 for i, idx in enumerate(members) if idx.size == 0)
    iso_ok = False
    if feasible:
        try:
            ref = reported_dispatch(net, producers, theta)
            here = total_reported_cost(net, producers, theta, q)
            iso_ok = bool(here <= ref.objective_value + eps)
        except (InfeasibleError, InputError):
            iso_ok = False
    gain = float(gains.max(initial=0.0))
    return Verification(bool(gain <= eps and iso_ok), gain, iso_ok, gains)


# -- unbounded price-of-anarchy construction ---------------------------------


@dataclass
class UnboundedPoAInstance:
    network: NetworkModel
    producers: list[Producer]
    q: np.ndarray
    bids: np.ndarray
    x: np.ndarray
    beta: float
    poa_lower_bound: float
    params: dict = field(default_factory=dict)


def unbounded_poa_beta(n1, n2, k1, k2, demand, t) -> float:
    num = 1 + (t / n1) / ((n1 - 1) * k1 - t)
    den = 1 + ((demand - t) / n2) / ((n2 - 1) * k2 - (demand - t))
    return num / den


def unbounded_poa_window(n1, n2, k1, k2, demand) -> tuple[float, float]:
    upper = (n1 - 1) * k1
    lower = upper / (1 + (n2 / n1) * ((n2 - 1) * k2 / demand - 1))
    return lower, upper


def unbounded_poa_instance(n1: int, n2: int, k1: float, k2: float, demand: float,
                           t: float) -> UnboundedPoAInstance:
    """Two-node market with pivotal cheap producers whose equilibrium cost ratio grows without bound."""
    if n1 < 2 or n2 < 2 or min(k1, k2, demand) <= 0:
        raise RegimeError("outside the unbounded price-of-anarchy regime")
    if not (n1 * k1 / demand >= 1 > (n1 - 1) * k1 / demand and (n2 - 1) * k2 / demand > 1):
        raise RegimeError("outside the unbounded price-of-anarchy regime")
    lower, upper = unbounded_poa_window(n1, n2, k1, k2, demand)
    if not lower < t < upper:
        raise RegimeError("outside the unbounded price-of-anarchy regime")
    beta = unbounded_poa_beta(n1, n2, k1, k2, demand, t)
    net = two_node_network(demand / 2, demand / 2, demand)
    producers = [Producer(0, k1, CostSpec.linear(1.0), f"n1_{k}") for k in range(n1)]
    producers += [Producer(1, k2, CostSpec.linear(beta), f"n2_{k}") for k in range(n2)]
    q = np.array([t, demand - t])
    markup = 1 + (t / n1) / ((n1 - 1) * k1 - t)
    bids = np.array([markup * (k1 - t / n1)] * n1 + [markup * (k2 - (demand - t) / n2)] * n2)
    x = np.array([t / n1] * n1 + [(demand - t) / n2] * n2)
    bound = (t + beta * (demand - t)) / demand
    return UnboundedPoAInstance(net, producers, q, bids, x, beta, bound,
                                dict(n1=n1, n2=n2, k1=k1, k2=k2, demand=demand, t=t))
