"""Structural market-power indices and the bounds they imply."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .costs import Producer
from .dispatch import capacities, node_members
from .errors import InputError, RegimeError
from .network import NetworkModel, max_nodal_supplies

DEFAULT_ENVELOPE_MS = 1.0
DEFAULT_ENVELOPE_MC = 8.0


def _node_indices(net, producers, qmax=None) -> tuple[np.ndarray, np.ndarray]:
    """Market share and residual supply index of every producer."""
    qmax = max_nodal_supplies(net) if qmax is None else np.asarray(qmax, dtype=float)
    members = node_members(producers, net.node_count)
    X = capacities(producers)
    ms = np.zeros(len(producers))
    rsi = np.zeros(len(producers))
    for i, idx in enumerate(members):
        if idx.size == 0:
            continue
        if qmax[i] <= 0:
            raise InputError(f"degenerate node {i}: maximum nodal supply is zero")
        total = X[idx].sum()
        ms[idx] = np.minimum(X[idx], qmax[i]) / qmax[i]
        rsi[idx] = (total - X[idx]) / qmax[i]
    return ms, rsi


def market_share(net: NetworkModel, producers: Sequence[Producer], j: int, qmax=None) -> float:
    return float(_node_indices(net, producers, qmax)[0][j])


def rsi(net: NetworkModel, producers: Sequence[Producer], j: int, qmax=None) -> float:
    """Rival capacity at the node over the maximum nodal supply."""
    return float(_node_indices(net, producers, qmax)[1][j])


def pivotal_screen(net: NetworkModel, producers: Sequence[Producer], qmax=None) -> list[tuple[int, float]]:
    """Producers with RSI at most one, paired with their RSI."""
    _, r = _node_indices(net, producers, qmax)
    return [(j, float(v)) for j, v in enumerate(r) if v <= 1]


def markup_multiplier(ms: float, rsi_value: float) -> float:
    if not rsi_value > 1:
        raise RegimeError("bound undefined (pivotal supplier)")
    return 1.0 + ms / (rsi_value - 1.0)


def lerner_limit(ms: float, rsi_value: float) -> float:
    if not rsi_value > 1:
        raise RegimeError("bound undefined (pivotal supplier)")
    return ms / (ms + rsi_value - 1.0)


def poa_bound(net: NetworkModel, producers: Sequence[Producer], qmax=None) -> float:
    ms, r = _node_indices(net, producers, qmax)
    if np.any(r <= 1):
        raise RegimeError("bound undefined (pivotal supplier)")
    return float(1.0 + np.max(ms / (r - 1.0), initial=0.0))


def lerner_bound(net: NetworkModel, producers: Sequence[Producer], j: int, qmax=None) -> float:
    ms, r = _node_indices(net, producers, qmax)
    return lerner_limit(ms[j], r[j])


def markup_bound(net: NetworkModel, producers: Sequence[Producer], j: int, qmax=None) -> float:
    ms, r = _node_indices(net, producers, qmax)
    return markup_multiplier(ms[j], r[j])


def price_of_anarchy(ne_cost: float, efficient_cost: float) -> float:
    if efficient_cost == 0:
        if ne_cost == 0:
            return 1.0
        raise InputError("undefined ratio")
    if efficient_cost < 0:
        raise InputError("efficient cost must be positive")
    return ne_cost / efficient_cost


def lerner_index(price: float, producer: Producer, x: float) -> float:
    """Relative markup of the price over the right marginal cost."""
    if price == 0:
        raise InputError("Lerner index undefined at zero price")
    return (price - producer.cost.derivatives(x)[1]) / price


@dataclass
class IndexReport:
    ms: np.ndarray
    rsi: np.ndarray
    pivotal: np.ndarray
    lerner_bound: np.ndarray
    markup_bound: np.ndarray
    q_max: np.ndarray
    poa_bound: float
    lerner: np.ndarray | None = None
    poa: float | None = None
    labels: list[str] = field(default_factory=list)


def index_report(net: NetworkModel, producers: Sequence[Producer], outcome=None,
                 efficient_cost: float | None = None) -> IndexReport:
    """All indices for a scenario, plus Lerner and PoA when an equilibrium is given."""
    qmax = max_nodal_supplies(net)
    ms, r = _node_indices(net, producers, qmax)
    pivotal = r < 1
    ok = r > 1
    lb = np.full(len(producers), math.nan)
    mb = np.full(len(producers), math.nan)
    lb[ok] = ms[ok] / (ms[ok] + r[ok] - 1)
    mb[ok] = 1 + ms[ok] / (r[ok] - 1)
    bound = float(1 + np.max(ms / (r - 1))) if np.all(ok) and len(producers) else math.nan
    report = IndexReport(ms, r, pivotal, lb, mb, qmax, bound,
                         labels=[p.label for p in producers])
    if outcome is not None:
        d = outcome.dispatch
        report.lerner = np.array([
            lerner_index(d.p[prod.node], prod, d.x[j]) if d.p[prod.node] != 0 else math.nan
            for j, prod in enumerate(producers)
        ])
        if efficient_cost is not None:
            report.poa = price_of_anarchy(d.objective_value, efficient_cost)
    return report


# -- price envelope ----------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeRow:
    rsi: float
    price: float
    mc: float
    ms: float
    bound: float
    flagged: bool
    exceedance: float
    status: str = "ok"


def _field(record, name, position):
    if isinstance(record, Mapping):
        value = record.get(name)
    else:
        value = record[position] if position < len(record) else None
    if value is None or (isinstance(value, str) and value.strip() == ""):
        return None
    return float(value)


def envelope_check(records: Iterable, ms: float = DEFAULT_ENVELOPE_MS,
                   mc: float = DEFAULT_ENVELOPE_MC) -> list[EnvelopeRow]:
    """Compare observed prices with the markup envelope implied by each RSI.

    Records are mappings with keys ``rsi, price[, mc][, ms]`` or sequences in
    that order. Rows with RSI at or below one carry no bound. Rows that fail
    to parse are reported with a parse-error status.
    """
    out = []
    for rec in records:
        try:
            r = _field(rec, "rsi", 0)
            price = _field(rec, "price", 1)
            if r is None or price is None:
                raise ValueError("missing rsi or price")
            row_mc = _field(rec, "mc", 2)
            row_ms = _field(rec, "ms", 3)
            row_mc = mc if row_mc is None else row_mc
            row_ms = ms if row_ms is None else row_ms
        except (ValueError, TypeError, IndexError) as exc:
            out.append(EnvelopeRow(math.nan, math.nan, math.nan, math.nan, math.nan, False,
                                   math.nan, f"parse error: {exc}"))
            continue
        if not r > 1:
            out.append(EnvelopeRow(r, price, row_mc, row_ms, math.nan, False, math.nan, "no bound"))
            continue
        bound = (1 + row_ms / (r - 1)) * row_mc
        flagged = price > bound
        out.append(EnvelopeRow(r, price, row_mc, row_ms, bound, flagged,
                               price - bound if flagged else 0.0))
    return out
