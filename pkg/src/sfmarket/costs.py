"""Production costs, supply functions, reported costs and modified costs.

Every cost is stored as a convex, continuous piecewise quadratic on
``x >= 0`` and is identically zero for ``x <= 0``. Linear and quadratic costs
are the one-piece special cases. On piece ``k`` the cost reads
``a_k x**2 + b_k x + e_k`` in absolute coordinates, with the offsets ``e_k``
fixed by continuity.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, RegimeError

KINDS = ("linear", "quadratic", "pwq")


@dataclass(frozen=True)
class CostSpec:
    kind: str
    breakpoints: tuple[float, ...]
    coeffs: tuple[tuple[float, float], ...]
    offsets: tuple[float, ...] = field(init=False, repr=False, compare=False)
    _cum_integral: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InputError(f"unknown cost kind {self.kind!r}")
        bps = tuple(float(t) for t in self.breakpoints)
        cfs = tuple((float(a), float(b)) for a, b in self.coeffs)
        if len(cfs) != len(bps) + 1:
            raise InputError("piecewise cost needs exactly one more piece than breakpoints")
        if any(t <= 0 for t in bps) or any(t2 <= t1 for t1, t2 in zip(bps, bps[1:])):
            raise InputError("breakpoints must be positive and strictly increasing")
        if any(not (math.isfinite(a) and math.isfinite(b)) for a, b in cfs):
            raise InputError("cost coefficients must be finite")
        if any(a < 0 for a, _ in cfs):
            raise InputError("cost is not convex: negative quadratic coefficient")
        a0, b0 = cfs[0]
        if b0 < 0 or (a0 == 0 and b0 == 0):
            raise InputError("cost must be strictly positive for x > 0")
        for t, (a1, b1), (a2, b2) in zip(bps, cfs, cfs[1:]):
            if 2 * a1 * t + b1 > 2 * a2 * t + b2 + 1e-12 * (1 + abs(b1)):
                raise InputError(f"cost is not convex at breakpoint {t}")
        offsets = [0.0]
        for t, (a1, b1), (a2, b2) in zip(bps, cfs, cfs[1:]):
            offsets.append(a1 * t * t + b1 * t + offsets[-1] - a2 * t * t - b2 * t)
        cum = [0.0]
        lo = 0.0
        for k, t in enumerate(bps):
            cum.append(cum[-1] + _poly_integral(cfs[k], offsets[k], lo, t))
            lo = t
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "coeffs", cfs)
        object.__setattr__(self, "offsets", tuple(offsets))
        object.__setattr__(self, "_cum_integral", tuple(cum))

    @classmethod
    def linear(cls, beta: float) -> "CostSpec":
        """``C(x) = (beta x)^+``."""
        return cls("linear", (), ((0.0, beta),))

    @classmethod
    def quadratic(cls, alpha: float, beta: float) -> "CostSpec":
        """``C(x) = (alpha x^2 + beta x)^+`` for ``x >= 0``."""
        return cls("quadratic", (), ((alpha, beta),))

    @classmethod
    def piecewise(
        cls, breakpoints: Sequence[float], coeffs: Sequence[tuple[float, float]]
    ) -> "CostSpec":
        return cls("pwq", tuple(breakpoints), tuple(tuple(c) for c in coeffs))

    # -- evaluation ---------------------------------------------------------

    def _piece_right(self, x: float) -> int:
        return bisect.bisect_right(self.breakpoints, x)

    def _piece_left(self, x: float) -> int:
        return bisect.bisect_left(self.breakpoints, x)

    def value(self, x: float) -> float:
        if x <= 0:
            return 0.0
        k = self._piece_right(x)
        a, b = self.coeffs[k]
        return a * x * x + b * x + self.offsets[k]

    def derivatives(self, x: float) -> tuple[float, float]:
        """Left and right derivatives at ``x``."""
        if x < 0:
            return 0.0, 0.0
        a, b = self.coeffs[self._piece_right(x)]
        right = 2 * a * x + b
        if x == 0:
            return 0.0, right
        a, b = self.coeffs[self._piece_left(x)]
        return 2 * a * x + b, right

    def second_derivative(self, x: float) -> float:
        """Right second derivative; zero for ``x < 0``."""
        if x < 0:
            return 0.0
        return 2 * self.coeffs[self._piece_right(x)][0]

    def integral(self, x: float) -> float:
        """Closed-form running integral of the cost from 0 to ``x``."""
        if x <= 0:
            return 0.0
        k = self._piece_right(x)
        lo = self.breakpoints[k - 1] if k > 0 else 0.0
        return self._cum_integral[k] + _poly_integral(self.coeffs[k], self.offsets[k], lo, x)

    def pieces(self, cap: float) -> list[tuple[float, float, float, float]]:
        """Pieces ``(start, end, a, b)`` covering ``[0, cap]``."""
        out = []
        start = 0.0
        for k, (a, b) in enumerate(self.coeffs):
            end = self.breakpoints[k] if k < len(self.breakpoints) else math.inf
            end = min(end, cap)
            if end > start:
                out.append((start, end, a, b))
            start = end
            if start >= cap:
                break
        return out

    def to_dict(self) -> dict:
        if self.kind == "linear":
            return {"type": "linear", "beta": self.coeffs[0][1]}
        if self.kind == "quadratic":
            a, b = self.coeffs[0]
            return {"type": "quadratic", "alpha": a, "beta": b}
        return {
            "type": "pwq",
            "breakpoints": list(self.breakpoints),
            "pieces": [[a, b] for a, b in self.coeffs],
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "CostSpec":
        kind = spec.get("type")
        try:
            if kind == "linear":
                return cls.linear(float(spec["beta"]))
            if kind == "quadratic":
                return cls.quadratic(float(spec["alpha"]), float(spec["beta"]))
            if kind == "pwq":
                return cls.piecewise(spec["breakpoints"], [tuple(p) for p in spec["pieces"]])
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad cost specification {spec!r}: {exc}") from exc
        raise InputError(f"unknown cost type {kind!r}")


def _poly_integral(coef: tuple[float, float], e: float, lo: float, hi: float) -> float:
    a, b = coef
    return a * (hi**3 - lo**3) / 3 + b * (hi**2 - lo**2) / 2 + e * (hi - lo)


def cost_eval(cost: CostSpec, x: float) -> tuple[float, float, float, float]:
    """Return ``(C(x), left derivative, right derivative, integral of C on [0, x])``."""
    left, right = cost.derivatives(x)
    return cost.value(x), left, right, cost.integral(x)


@dataclass(frozen=True)
class Producer:
    node: int
    capacity: float
    cost: CostSpec
    name: str | None = None

    def __post_init__(self) -> None:
        if not (self.capacity >= 0 and math.isfinite(self.capacity)):
            raise InputError(f"producer capacity must be finite and >= 0, got {self.capacity}")
        if int(self.node) != self.node or self.node < 0:
            raise InputError(f"producer node must be a nonnegative integer, got {self.node}")

    @property
    def label(self) -> str:
        return self.name if self.name is not None else f"node{self.node}"


def as_bids(theta: Sequence[float] | np.ndarray, count: int | None = None) -> np.ndarray:
    """Validate a bid profile: nonnegative, finite, optionally of fixed length."""
    arr = np.asarray(theta, dtype=float).reshape(-1)
    if count is not None and arr.size != count:
        raise InputError(f"shape error: expected {count} bids, got {arr.size}")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise InputError("bids must be finite and nonnegative")
    return arr


def supply_function(producer: Producer, theta: float, price: float) -> float:
    """Quantity offered at ``price``: capacity minus the withheld amount ``theta / price``."""
    if price <= 0:
        raise InputError("nonpositive price")
    return producer.capacity - theta / price


def reported_cost(producer: Producer, theta: float, x: float) -> float:
    """Integral of the inverse supply function: ``theta * log(X / (X - x))``."""
    cap = producer.capacity
    if x >= cap:
        raise InputError("capacity exceeded (log barrier)")
    if theta == 0:
        return 0.0
    return theta * math.log(cap / (cap - x))


def modified_cost(cost: CostSpec, x: float, residual: float) -> tuple[float, float, float]:
    """Markup-inflated cost used to characterise equilibrium production.

    ``residual`` is the rival capacity at the node minus the nodal supply.
    Returns the value and the (left, right) derivative pair.
    """
    if not residual > 0:
        raise RegimeError("pivotal-supplier regime: modified cost undefined")
    if x <= 0:
        left, right = cost.derivatives(x)
        return 0.0, left, right
    factor = 1.0 + x / residual
    value = factor * cost.value(x) - cost.integral(x) / residual
    left, right = cost.derivatives(x)
    return value, left * factor, right * factor
