"""DC network model: shift factors, line limits and the injection polytope."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InfeasibleError, InputError

DEFAULT_FEAS_TOL = 1e-8


@dataclass(frozen=True)
class LineSpec:
    from_node: int
    to_node: int
    capacity: float
    reactance: float | None = None

    def __post_init__(self) -> None:
        if self.from_node == self.to_node:
            raise InputError("line endpoints must differ")
        if not self.capacity >= 0:
            raise InputError("line capacity must be >= 0")
        if self.reactance is not None and not self.reactance > 0:
            raise InputError("invalid reactance")


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Shift-factor matrix ``H`` (2m x n), capacities ``c`` (2m) and demand ``d`` (n).

    Rows are ordered ``[+F; -F]`` for a flow matrix ``F``, so row ``r`` and row
    ``r + m`` describe the two directions of line ``r``.
    """

    shift_factor: np.ndarray
    line_capacity: np.ndarray
    demand: np.ndarray

    def __post_init__(self) -> None:
        d = np.array(self.demand, dtype=float).reshape(-1)
        n = d.size
        if n == 0:
            raise InputError("network needs at least one node")
        H = np.array(self.shift_factor, dtype=float)
        if H.size == 0:
            H = H.reshape(0, n)
        c = np.array(self.line_capacity, dtype=float).reshape(-1)
        if H.ndim != 2 or H.shape[1] != n or H.shape[0] % 2 or H.shape[0] != c.size:
            raise InputError(
                f"shape error: H must be 2m x {n} with matching capacities, "
                f"got H{H.shape} and c({c.size})"
            )
        if np.any(~np.isfinite(H)) or np.any(~np.isfinite(c)) or np.any(~np.isfinite(d)):
            raise InputError("network data must be finite")
        if np.any(c < 0):
            raise InputError("line capacities must be >= 0")
        if np.any(d < 0):
            raise InputError("demand must be >= 0")
        for arr in (H, c, d):
            arr.setflags(write=False)
        object.__setattr__(self, "shift_factor", H)
        object.__setattr__(self, "line_capacity", c)
        object.__setattr__(self, "demand", d)

    @property
    def node_count(self) -> int:
        return self.demand.size

    @property
    def line_count(self) -> int:
        return self.shift_factor.shape[0] // 2

    @property
    def total_demand(self) -> float:
        return float(self.demand.sum())

    def paired_rows(self) -> list[int]:
        """Lines whose two direction rows are exact negatives of each other."""
        m = self.line_count
        H = self.shift_factor
        return [r for r in range(m) if np.array_equal(H[r + m], -H[r])]

    def with_capacity(self, capacity: Sequence[float] | np.ndarray) -> "NetworkModel":
        c = np.asarray(capacity, dtype=float).reshape(-1)
        if c.size == self.line_count:
            c = np.concatenate([c, c])
        return replace(self, line_capacity=c)

    def with_demand(self, demand: Sequence[float] | np.ndarray) -> "NetworkModel":
        return replace(self, demand=np.asarray(demand, dtype=float))


def ptdf(lines: Sequence[LineSpec], n: int, slack_node: int) -> np.ndarray:
    """Power-transfer distribution factors (m x n) of the DC model."""
    m = len(lines)
    if not 0 <= slack_node < n:
        raise InputError(f"slack node {slack_node} out of range")
    if m == 0:
        if n > 1:
            raise InputError("disconnected network")
        return np.zeros((0, n))
    reactances = [ln.reactance for ln in lines]
    if any(x is None for x in reactances) and any(x is not None for x in reactances):
        raise InputError("reactances must be given for all lines or none")
    x = np.array([1.0 if r is None else r for r in reactances], dtype=float)
    if np.any(x <= 0):
        raise InputError("invalid reactance")
    frm = np.array([ln.from_node for ln in lines])
    to = np.array([ln.to_node for ln in lines])
    if frm.min() < 0 or to.min() < 0 or max(frm.max(), to.max()) >= n:
        raise InputError("line endpoint out of range")
    adj = coo_matrix((np.ones(m), (frm, to)), shape=(n, n))
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp > 1:
        raise InputError("disconnected network")
    incidence = np.zeros((m, n))
    incidence[np.arange(m), frm] = 1.0
    incidence[np.arange(m), to] = -1.0
    b = 1.0 / x
    bbus = incidence.T @ (b[:, None] * incidence)
    keep = np.array([i for i in range(n) if i != slack_node], dtype=int)
    angles = np.zeros((n, n))
    if keep.size:
        angles[np.ix_(keep, keep)] = np.linalg.inv(bbus[np.ix_(keep, keep)])
    return (b[:, None] * incidence) @ angles


def build_network(
    lines: Sequence[LineSpec],
    demand: Sequence[float] | np.ndarray,
    slack_node: int = 0,
) -> NetworkModel:
    """Build the two-direction shift-factor model from line data."""
    d = np.asarray(demand, dtype=float).reshape(-1)
    F = ptdf(lines, d.size, slack_node)
    cap = np.array([ln.capacity for ln in lines], dtype=float)
    return NetworkModel(np.vstack([F, -F]), np.concatenate([cap, cap]), d)


def network_from_matrix(
    H: Sequence[Sequence[float]] | np.ndarray,
    capacity: Sequence[float] | np.ndarray,
    demand: Sequence[float] | np.ndarray,
) -> NetworkModel:
    return NetworkModel(np.asarray(H, dtype=float), np.asarray(capacity, dtype=float),
                        np.asarray(demand, dtype=float))


def two_node_network(d1: float, d2: float, capacity: float) -> NetworkModel:
    """Two buses joined by one line; node 0 is the slack."""
    return build_network([LineSpec(0, 1, capacity)], [d1, d2], slack_node=0)


def injection_feasible(net: NetworkModel, y: Sequence[float] | np.ndarray,
                       tol: float = DEFAULT_FEAS_TOL) -> bool:
    """Membership of a net injection vector in the polytope (balance + line limits)."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != net.node_count:
        raise InputError(f"shape error: expected {net.node_count} injections, got {y.size}")
    if abs(y.sum()) > tol:
        return False
    return bool(np.all(net.shift_factor @ y <= net.line_capacity + tol))


def max_nodal_supply(net: NetworkModel, i: int) -> float:
    """Largest supply node ``i`` can inject with nonnegative supply elsewhere."""
    from .engine import linear_objective, solve_polytope

    n = net.node_count
    if not 0 <= i < n:
        raise InputError(f"node {i} out of range")
    total = net.total_demand
    if n == 1 or total == 0:
        return total
    weights = np.zeros(n)
    weights[i] = -1.0
    res = solve_polytope(linear_objective(weights, np.zeros(n), np.full(n, total)), net)
    if res.status == "infeasible":
        raise InfeasibleError("infeasible network")
    return float(min(max(res.minimizer[i], net.demand[i]), total))


def max_nodal_supplies(net: NetworkModel) -> np.ndarray:
    return np.array([max_nodal_supply(net, i) for i in range(net.node_count)])
