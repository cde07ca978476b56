"""Economic dispatch, bid-based market clearing and nodal prices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .costs import Producer, as_bids
from .engine import SeparableObjective, SolveResult, solve_polytope
from .errors import InfeasibleError, InputError
from .network import NetworkModel


@dataclass
class DispatchOutcome:
    x: np.ndarray
    q: np.ndarray
    p: np.ndarray
    lam: float
    mu: np.ndarray
    objective_value: float
    residuals: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    @property
    def negative_production(self) -> np.ndarray:
        """Producers dispatched below zero (only possible away from equilibrium)."""
        return np.flatnonzero(self.x < -1e-9)


def node_members(producers: Sequence[Producer], n: int) -> list[np.ndarray]:
    """Indices of the producers located at each node."""
    members: list[list[int]] = [[] for _ in range(n)]
    for j, prod in enumerate(producers):
        if prod.node >= n:
            raise InputError(f"producer {prod.label} refers to missing node {prod.node}")
        members[prod.node].append(j)
    return [np.array(m, dtype=int) for m in members]


def capacities(producers: Sequence[Producer]) -> np.ndarray:
    return np.array([p.capacity for p in producers], dtype=float)


def _check_capacity(net: NetworkModel, producers: Sequence[Producer]) -> None:
    if capacities(producers).sum() < net.total_demand - 1e-12:
        raise InfeasibleError("demand cannot be met")


# -- closed forms at one node ------------------------------------------------


def local_allocation(caps, bids, q: float) -> np.ndarray:
    """Split nodal supply ``q`` among producers with given capacities and bids.

    Positive total bid: each producer withholds its bid share of the slack
    ``sum(X) - q``. Zero total bid: proportional to capacity.
    """
    X = np.asarray(caps, dtype=float).reshape(-1)
    theta = as_bids(bids, X.size)
    if X.size == 0:
        if q != 0:
            raise InputError("supply at empty node")
        return np.zeros(0)
    total_bid = theta.sum()
    total_cap = X.sum()
    if total_bid > 0:
        return X - theta / total_bid * (total_cap - q)
    if total_cap == 0:
        if q != 0:
            raise InputError("supply at node without capacity")
        return np.zeros_like(X)
    return X / total_cap * q


def nodal_price(caps, bids, q: float) -> float:
    """Clearing price ``sum(theta) / (sum(X) - q)``; zero when no producer bids."""
    X = np.asarray(caps, dtype=float).reshape(-1)
    theta = as_bids(bids, X.size)
    total_bid = theta.sum()
    if total_bid == 0:
        return 0.0
    slack = X.sum() - q
    if slack <= 0:
        raise InputError("price undefined at full capacity")
    return float(total_bid / slack)


def nodal_reported_cost(caps, bids, q: float) -> float:
    """Reported cost of supplying ``q`` at a node, summed over bidding producers."""
    X = np.asarray(caps, dtype=float).reshape(-1)
    theta = as_bids(bids, X.size)
    total_bid = theta.sum()
    if total_bid == 0:
        return 0.0
    slack = X.sum() - q
    if slack <= 0:
        return math.inf
    pos = theta > 0
    return float(np.sum(theta[pos] * np.log(X[pos] * total_bid / (theta[pos] * slack))))


def total_reported_cost(net: NetworkModel, producers, bids, q) -> float:
    members = node_members(producers, net.node_count)
    X = capacities(producers)
    theta = as_bids(bids, len(producers))
    return sum(nodal_reported_cost(X[idx], theta[idx], q[i]) for i, idx in enumerate(members))


# -- efficient dispatch ------------------------------------------------------


def _piece_table(producers):
    """Per-piece variables for the producers' piecewise costs.

    Returns owner index, piece start and length, and quadratic/linear coefficients.
    """
    owner, start, length, a, b = [], [], [], [], []
    for j, prod in enumerate(producers):
        for s, e, aa, bb in prod.cost.pieces(prod.capacity):
            owner.append(j)
            start.append(s)
            length.append(e - s)
            a.append(aa)
            b.append(bb)
    return (np.array(owner, dtype=int), np.array(start, dtype=float),
            np.array(length, dtype=float), np.array(a, dtype=float), np.array(b, dtype=float))


def efficient_dispatch(net: NetworkModel, producers: Sequence[Producer]) -> DispatchOutcome:
    """Minimise true production cost subject to the network and capacities."""
    node_members(producers, net.node_count)
    _check_capacity(net, producers)
    N = len(producers)
    if net.total_demand == 0:
        n = net.node_count
        return DispatchOutcome(np.zeros(N), np.zeros(n), np.zeros(n), 0.0,
                               np.zeros(2 * net.line_count), 0.0, notes=("zero demand",))
    owner, start, length, a, b = _piece_table(producers)
    node_of = np.array([producers[j].node for j in owner], dtype=int)
    obj = SeparableObjective(
        grad=lambda y: 2 * a * (start + y) + b,
        hess=lambda y: 2 * a,
        lower=np.zeros(owner.size),
        upper=length,
    )
    res = solve_polytope(obj, net, node_of)
    if res.status == "infeasible":
        raise InfeasibleError("demand cannot be met")
    x = np.bincount(owner, res.minimizer, minlength=N)
    x = np.clip(x, 0.0, capacities(producers))
    value = sum(prod.cost.value(xj) for prod, xj in zip(producers, x))
    return _outcome(res, x, value, producers, net)


def _outcome(res: SolveResult, x, value, producers, net, notes=()) -> DispatchOutcome:
    q = np.zeros(net.node_count)
    np.add.at(q, [p.node for p in producers], x)
    notes = tuple(notes)
    if res.status != "optimal":
        notes += (f"solver status {res.status}",)
    return DispatchOutcome(x, q, res.prices, res.lam, res.mu, float(value), res.residuals, notes)


# -- reported-cost dispatch --------------------------------------------------


def reported_dispatch(net: NetworkModel, producers: Sequence[Producer], bids) -> DispatchOutcome:
    """Clear the market on the reported costs implied by the bids.

    Nodes whose producers all bid zero have a flat reported cost. Their supply
    is chosen with minimum Euclidean norm once the bidding nodes are settled.
    """
    n = net.node_count
    members = node_members(producers, n)
    theta = as_bids(bids, len(producers))
    X = capacities(producers)
    _check_capacity(net, producers)
    node_cap = np.array([X[idx].sum() for idx in members])
    node_bid = np.array([theta[idx].sum() for idx in members])
    empty = np.array([idx.size == 0 for idx in members])
    bidding = (node_bid > 0) & ~empty
    silent = (node_bid == 0) & ~empty

    # Stage 1: the bidding nodes, with silent nodes free in a wide box.
    wide = node_cap.sum() + net.total_demand + float(net.line_capacity.sum()) + 1.0
    lower = np.where(empty, 0.0, np.where(silent, -wide, -np.inf))
    upper = np.where(empty, 0.0, node_cap)
    res = None
    q = np.zeros(n)
    if bidding.any():
        def grad(q):
            return np.where(bidding, node_bid / np.where(bidding, node_cap - q, 1.0), 0.0)

        def hess(q):
            return np.where(bidding, node_bid / np.where(bidding, node_cap - q, 1.0) ** 2, 0.0)

        res = solve_polytope(SeparableObjective(grad, hess, lower, upper), net)
        if res.status == "infeasible":
            raise InfeasibleError("demand cannot be met")
        q = res.injection
    # Stage 2: minimum-norm supply at silent nodes, bidding nodes held fixed.
    if silent.any():
        lo2 = np.where(bidding, q, lower)
        hi2 = np.where(bidding, q, upper)
        res2 = solve_polytope(SeparableObjective(lambda v: v.copy(), lambda v: np.ones_like(v),
                                                 lo2, hi2), net)
        if res2.status == "infeasible":
            raise InfeasibleError("demand cannot be met")
        q = np.where(bidding, q, res2.injection)
        if res is None:
            res = res2
    assert res is not None
    q = np.where(empty, 0.0, q)

    x = np.zeros(len(producers))
    p = np.zeros(n)
    for i, idx in enumerate(members):
        if idx.size == 0:
            continue
        qi = min(q[i], node_cap[i] * (1 - 1e-15)) if bidding[i] else q[i]
        x[idx] = local_allocation(X[idx], theta[idx], qi)
        p[i] = nodal_price(X[idx], theta[idx], qi)
    value = sum(nodal_reported_cost(X[idx], theta[idx], q[i]) for i, idx in enumerate(members))
    out = DispatchOutcome(x, q, p, res.lam, res.mu, float(value), res.residuals)
    notes = [] if res.status == "optimal" else [f"solver status {res.status}"]
    if not bidding.any():
        notes.append("all bids zero")
        out.lam = 0.0
        out.mu = np.zeros_like(res.mu)
    if out.negative_production.size:
        notes.append("negative production (not an equilibrium outcome)")
    out.notes = tuple(notes)
    return out
