"""Numerical core.

``solve_polytope`` is a dense primal-dual interior-point method for smooth
separable convex objectives over the injection polytope, with optional
aggregation of many variables onto each node. ``dual_bisection`` solves the
node-local problem "minimise a sum of convex scalar costs subject to a fixed
total" by bisection on the balance multiplier.
"""

from __future__ import annotations

import contextvars
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .costs import CostSpec
from .errors import InputError
from .network import NetworkModel

log = logging.getLogger(__name__)

Oracle = Callable[[np.ndarray], np.ndarray]

MAX_ITER = 200
STEP_FRACTION = 0.995
DUAL_REG = 1e-13


@dataclass(frozen=True)
class Tolerances:
    """Stopping tolerances of the interior-point method (dual ones scale with the gradient)."""

    primal: float = 1e-10
    dual: float = 1e-9
    complementarity: float = 1e-11


_tolerances: contextvars.ContextVar[Tolerances] = contextvars.ContextVar(
    "sfmarket_tolerances", default=Tolerances())


@contextmanager
def tolerances(**overrides):
    """Temporarily override solver tolerances in the current context."""
    token = _tolerances.set(replace(_tolerances.get(), **overrides))
    try:
        yield _tolerances.get()
    finally:
        _tolerances.reset(token)


@dataclass(frozen=True)
class SeparableObjective:
    """Objective ``sum_k f_k(x_k)`` given by vectorised derivative oracles.

    ``grad`` and ``hess`` return the first and second derivative of every
    coordinate function. ``value`` is optional and used only for reporting.
    """

    grad: Oracle
    hess: Oracle
    lower: np.ndarray
    upper: np.ndarray
    value: Callable[[np.ndarray], float] | None = None

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise InputError("shape error: bounds differ in length")
        if np.any(lo > hi):
            raise InputError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def size(self) -> int:
        return self.lower.size


def linear_objective(weights, lower, upper) -> SeparableObjective:
    w = np.asarray(weights, dtype=float)
    return SeparableObjective(
        grad=lambda x: w.copy(),
        hess=lambda x: np.zeros_like(w),
        lower=lower,
        upper=upper,
        value=lambda x: float(w @ x),
    )


def quadratic_objective(quad, lin, lower, upper) -> SeparableObjective:
    """``sum a_k x_k^2 + b_k x_k``."""
    a = np.asarray(quad, dtype=float)
    b = np.asarray(lin, dtype=float)
    return SeparableObjective(
        grad=lambda x: 2 * a * x + b,
        hess=lambda x: 2 * a,
        lower=lower,
        upper=upper,
        value=lambda x: float(a @ (x * x) + b @ x),
    )


@dataclass
class SolveResult:
    minimizer: np.ndarray
    injection: np.ndarray
    lam: float
    mu: np.ndarray
    prices: np.ndarray
    status: str
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    objective_value: float = math.nan

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _initial_point(lo, hi, guess):
    x = guess.copy()
    both = np.isfinite(lo) & np.isfinite(hi)
    w = hi - lo
    x[both] = np.clip(x[both], lo[both] + 0.1 * w[both], hi[both] - 0.1 * w[both])
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    x[only_lo] = np.maximum(x[only_lo], lo[only_lo] + np.maximum(1e-2, 0.1 * np.abs(lo[only_lo])))
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    x[only_hi] = np.minimum(x[only_hi], hi[only_hi] - np.maximum(1e-2, 0.1 * np.abs(hi[only_hi])))
    return x


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_polytope(
    obj: SeparableObjective,
    net: NetworkModel,
    node_of: Sequence[int] | np.ndarray | None = None,
    x0: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
) -> SolveResult:
    """Minimise ``obj`` over ``{x : lo <= x <= hi, A x - d in P}``.

    ``node_of[k]`` is the node receiving variable ``k`` (identity when
    omitted). The returned prices are ``lam * 1 - H^T mu``.
    """
    n = net.node_count
    N = obj.size
    node_of = np.arange(n) if node_of is None else np.asarray(node_of, dtype=int)
    if node_of.size != N:
        raise InputError("shape error: aggregation map does not match the objective")
    if N and (node_of.min() < 0 or node_of.max() >= n):
        raise InputError("aggregation map refers to a missing node")
    A = np.zeros((n, N))
    A[node_of, np.arange(N)] = 1.0
    H = net.shift_factor
    c = net.line_capacity
    d = net.demand
    m = net.line_count
    lo_all, hi_all = obj.lower, obj.upper

    fixed = lo_all == hi_all
    free = ~fixed
    x_fixed = np.where(fixed, lo_all, 0.0)
    q_fixed = A @ x_fixed
    Af = A[:, free]
    lo, hi = lo_all[free], hi_all[free]
    nf = int(free.sum())

    def full(xf):
        x = x_fixed.copy()
        x[free] = xf
        return x

    def grad(xf):
        return obj.grad(full(xf))[free]

    def hess(xf):
        return obj.hess(full(xf))[free]

    # Equality rows: balance, then zero-capacity lines. Remaining rows are inequalities.
    HA = H @ Af
    rhs_base = d - q_fixed
    eq_rows, eq_rhs, eq_lines = [np.ones(nf)], [float(rhs_base.sum())], []
    row_kind = np.zeros(2 * m, dtype=int)  # 0 inequality, 1 equality pair, 2 dropped
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    for r in net.paired_rows():
        if c[r] + c[r + m] <= 0:
            row_kind[r] = row_kind[r + m] = 1
            if np.abs(HA[r]).max(initial=0.0) > 1e-12 * scale:
                eq_rows.append(HA[r])
                eq_rhs.append(float(H[r] @ rhs_base))
                eq_lines.append(r)
            elif abs(H[r] @ rhs_base) > 1e-9:
                return _infeasible(obj, net, full(_initial_point(lo, hi, np.zeros(nf))), A)
    ineq = []
    for r in range(2 * m):
        if row_kind[r]:
            continue
        if np.abs(HA[r]).max(initial=0.0) <= 1e-12 * scale:
            row_kind[r] = 2
            if c[r] + H[r] @ rhs_base < -1e-9:
                return _infeasible(obj, net, full(_initial_point(lo, hi, np.zeros(nf))), A)
            continue
        ineq.append(r)
    E = np.array(eq_rows)
    be = np.array(eq_rhs)
    G = HA[ineq] if ineq else np.zeros((0, nf))
    h = c[ineq] + H[ineq] @ rhs_base if ineq else np.zeros(0)
    ne, ni = E.shape[0], G.shape[0]

    has_lo = np.isfinite(lo)
    has_hi = np.isfinite(hi)
    if x0 is None:
        counts = np.bincount(node_of[free], minlength=n).astype(float)
        share = rhs_base / np.maximum(counts, 1.0)
        guess = share[node_of[free]]
    else:
        guess = np.asarray(x0, dtype=float).reshape(-1)[free]
    x = _initial_point(lo, hi, guess)
    g0 = grad(x)
    scale0 = max(1.0, float(np.abs(g0).max(initial=0.0)))
    s = np.maximum(h - G @ x, 1.0)
    z = np.full(ni, scale0)
    ul = np.where(has_lo, x - lo, 1.0)
    uh = np.where(has_hi, hi - x, 1.0)
    vl = np.where(has_lo, scale0, 0.0)
    vh = np.where(has_hi, scale0, 0.0)
    y = np.zeros(ne)
    npairs = ni + int(has_lo.sum()) + int(has_hi.sum())

    def residuals(x, y, z, s, vl, vh, ul, uh):
        g = grad(x)
        rd = g + E.T @ y + G.T @ z - vl + vh
        re = E @ x - be
        ri = G @ x + s - h
        rl = np.where(has_lo, x - ul - lo, 0.0)
        rh = np.where(has_hi, x + uh - hi, 0.0)
        return rd, re, ri, rl, rh

    def gap(z, s, vl, vh, ul, uh):
        tot = z @ s + vl[has_lo] @ ul[has_lo] + vh[has_hi] @ uh[has_hi]
        return tot / max(npairs, 1)

    tol = _tolerances.get()
    status = "max_iter"
    it = 0
    for it in range(max_iter + 1):
        rd, re, ri, rl, rh = residuals(x, y, z, s, vl, vh, ul, uh)
        rp = max(np.abs(re).max(initial=0.0), np.abs(ri).max(initial=0.0),
                 np.abs(rl).max(initial=0.0), np.abs(rh).max(initial=0.0))
        gscale = max(1.0, float(np.abs(grad(x)).max(initial=0.0)))
        nu = gap(z, s, vl, vh, ul, uh)
        comp = max((z * s).max(initial=0.0), (vl * ul)[has_lo].max(initial=0.0),
                   (vh * uh)[has_hi].max(initial=0.0))
        if (rp <= tol.primal and np.abs(rd).max(initial=0.0) <= tol.dual * gscale
                and comp <= tol.complementarity * gscale):
            status = "optimal"
            break
        if it == max_iter:
            break
        dual_size = max(np.abs(y).max(initial=0.0), z.max(initial=0.0))
        if dual_size > 1e13 * gscale:
            status = "infeasible"
            break

        W = hess(x)
        sig_l = np.where(has_lo, vl / ul, 0.0)
        sig_h = np.where(has_hi, vh / uh, 0.0)
        D = z / s
        M = np.diag(W + sig_l + sig_h + 1e-14 * gscale) + G.T @ (D[:, None] * G)
        K = np.block([[M, E.T], [E, -DUAL_REG * np.eye(ne)]])

        def direction(tau_i, tau_l, tau_h):
            # tau_* are the complementarity targets (sigma*nu - u*v - corrections)
            r_dx = -rd - G.T @ (tau_i / s + D * ri)
            r_dx = r_dx + np.where(has_lo, (tau_l - vl * rl) / ul, 0.0)
            r_dx = r_dx - np.where(has_hi, (tau_h + vh * rh) / uh, 0.0)
            sol = _solve(K, np.concatenate([r_dx, -re]))
            dx, dy = sol[:nf], sol[nf:]
            ds = -ri - G @ dx
            dz = (tau_i - z * ds) / s
            dul = np.where(has_lo, dx + rl, 0.0)
            duh = np.where(has_hi, -dx - rh, 0.0)
            dvl = np.where(has_lo, (tau_l - vl * dul) / ul, 0.0)
            dvh = np.where(has_hi, (tau_h - vh * duh) / uh, 0.0)
            return dx, dy, ds, dz, dul, duh, dvl, dvh

        def step_length(ds, dz, dul, duh, dvl, dvh):
            return min(
                _max_step(s, ds), _max_step(z, dz),
                _max_step(ul[has_lo], dul[has_lo]), _max_step(uh[has_hi], duh[has_hi]),
                _max_step(vl[has_lo], dvl[has_lo]), _max_step(vh[has_hi], dvh[has_hi]),
            )

        aff = direction(-z * s, np.where(has_lo, -vl * ul, 0.0), np.where(has_hi, -vh * uh, 0.0))
        a_aff = step_length(*aff[2:])
        _, _, ds_a, dz_a, dul_a, duh_a, dvl_a, dvh_a = aff
        nu_aff = gap(z + a_aff * dz_a, s + a_aff * ds_a, vl + a_aff * dvl_a,
                     vh + a_aff * dvh_a, ul + a_aff * dul_a, uh + a_aff * duh_a)
        sigma = min(1.0, (nu_aff / nu) ** 3) if nu > 0 else 0.0
        target = sigma * nu
        tau_i = target - z * s - ds_a * dz_a
        tau_l = np.where(has_lo, target - vl * ul - dul_a * dvl_a, 0.0)
        tau_h = np.where(has_hi, target - vh * uh - duh_a * dvh_a, 0.0)
        dx, dy, ds, dz, dul, duh, dvl, dvh = direction(tau_i, tau_l, tau_h)
        alpha = min(1.0, STEP_FRACTION * step_length(ds, dz, dul, duh, dvl, dvh))

        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        ul = np.where(has_lo, ul + alpha * dul, 1.0)
        uh = np.where(has_hi, uh + alpha * duh, 1.0)
        vl = vl + alpha * dvl
        vh = vh + alpha * dvh

    xfull = full(x)
    q = A @ xfull
    mu = np.zeros(2 * m)
    mu[np.array(ineq, dtype=int)] = z
    for k, r in enumerate(eq_lines, start=1):
        mu[r] = max(y[k], 0.0)
        mu[r + m] = max(-y[k], 0.0)
    lam = -float(y[0])
    prices = lam - H.T @ mu
    res = _report(net, q, mu, prices, obj, xfull, A)
    if status == "max_iter" and res["primal"] > 1e-6:
        status = "infeasible"
    if status != "optimal":
        log.debug("solve_polytope ended with status %s after %d iterations: %s", status, it, res)
    value = obj.value(xfull) if obj.value is not None else math.nan
    return SolveResult(xfull, q, lam, mu, prices, status, res, it, value)


def _solve(K, rhs):
    try:
        return np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(K, rhs, rcond=None)[0]


def _report(net, q, mu, prices, obj, x, A) -> dict:
    H, c, d = net.shift_factor, net.line_capacity, net.demand
    slack = H @ (q - d) - c
    primal = max(abs(float((q - d).sum())), float(np.maximum(slack, 0).max(initial=0.0)),
                 float(np.maximum(obj.lower - x, 0).max(initial=0.0)),
                 float(np.maximum(x - obj.upper, 0).max(initial=0.0)))
    # Stationarity per variable, allowing bound multipliers of the right sign.
    g = obj.grad(x)
    r = g - prices[A.argmax(axis=0)] if x.size else np.zeros(0)
    with np.errstate(invalid="ignore"):
        at_lo = x <= obj.lower + 1e-7 * np.maximum(1, np.abs(obj.lower))
        at_hi = x >= obj.upper - 1e-7 * np.maximum(1, np.abs(obj.upper))
    r = np.where(at_lo & (r > 0), 0.0, r)
    r = np.where(at_hi & (r < 0), 0.0, r)
    return {
        "primal": primal,
        "stationarity": float(np.abs(r).max(initial=0.0)),
        "complementarity": float(np.abs(mu * slack).max(initial=0.0)),
    }


def _infeasible(obj, net, x, A) -> SolveResult:
    q = A @ x
    m2 = net.shift_factor.shape[0]
    zeros = np.zeros(m2)
    prices = np.zeros(net.node_count)
    return SolveResult(x, q, 0.0, zeros, prices, "infeasible",
                       _report(net, q, zeros, prices, obj, x, A), 0)


# ---------------------------------------------------------------------------
# node-local problem


class NodeCurves:
    """Scalar cost curves of the producers at one node.

    Each curve is ``C_k`` or its markup-modified version with rival residual
    ``R_k`` (``inverse_residual[k] = 1 / R_k``, zero for the plain cost), on
    ``[0, X_k]``. The modified marginal is ``C_k'(x) (1 + x / R_k)``.
    """

    def __init__(self, costs: Sequence[CostSpec], capacities, inverse_residual=None):
        self.costs = list(costs)
        self.capacities = np.asarray(capacities, dtype=float).reshape(-1)
        k = len(self.costs)
        if self.capacities.size != k:
            raise InputError("shape error: one capacity per cost")
        rinv = np.zeros(k) if inverse_residual is None else np.asarray(inverse_residual, float)
        if np.any(rinv < 0):
            raise InputError("residual capacity must be positive")
        self.inverse_residual = rinv.reshape(-1)
        rows = []
        for j, (cost, cap) in enumerate(zip(self.costs, self.capacities)):
            for start, end, a, b in cost.pieces(cap):
                rows.append((j, start, end, a, b))
        arr = np.array(rows, dtype=float).reshape(-1, 5)
        self._owner = arr[:, 0].astype(int)
        self._start, self._end, self._a, self._b = arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4]
        self._rinv = self.inverse_residual[self._owner]

    def __len__(self) -> int:
        return len(self.costs)

    def marginal_ceiling(self) -> float:
        if self._a.size == 0:
            return 0.0
        e = self._end
        return float(np.max((2 * self._a * e + self._b) * (1 + e * self._rinv)))

    def response(self, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """Smallest and largest minimisers of ``sum C_k(x_k) - lam * x_k`` on the boxes."""
        a, b, r = self._a, self._b, self._rinv
        start, length = self._start, self._end - self._start
        A2 = 2 * a * r
        B = 2 * a + b * r
        flat = B <= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.maximum(B * B + 4 * A2 * (lam - b), 0.0)
            root = 2 * (lam - b) / (B + np.sqrt(disc))
        y = np.clip(np.where(flat, 0.0, root) - start, 0.0, length)
        y_lo = np.where(flat, np.where(lam > b, length, 0.0), y)
        y_hi = np.where(flat, np.where(lam >= b, length, 0.0), y)
        k = len(self.costs)
        return (np.bincount(self._owner, y_lo, minlength=k),
                np.bincount(self._owner, y_hi, minlength=k))

    def derivatives(self, x) -> tuple[np.ndarray, np.ndarray]:
        left = np.empty(len(self.costs))
        right = np.empty(len(self.costs))
        for k, (cost, xk) in enumerate(zip(self.costs, x)):
            l, r = cost.derivatives(float(xk))
            f = 1 + xk * self.inverse_residual[k]
            left[k], right[k] = l * f, r * f
        return left, right

    def curvature(self, x) -> np.ndarray:
        """Right second derivative of each (modified) curve."""
        out = np.empty(len(self.costs))
        for k, (cost, xk) in enumerate(zip(self.costs, x)):
            rinv = self.inverse_residual[k]
            out[k] = cost.second_derivative(float(xk)) * (1 + xk * rinv) \
                + cost.derivatives(float(xk))[1] * rinv
        return out


class NodeAllocation(NamedTuple):
    x: np.ndarray
    interval: tuple[float, float]


def dual_bisection(curves: NodeCurves, target: float, tol: float = 1e-10,
                   max_iter: int = MAX_ITER) -> NodeAllocation:
    """Split ``target`` among the curves at minimum total cost.

    Returns the allocation and the interval of balance multipliers supporting
    it. Producers at capacity do not bound the interval from above.
    """
    caps = curves.capacities
    total = float(caps.sum())
    if target >= total:
        raise InputError("target exceeds node capacity")
    if target < 0:
        raise InputError("negative target")

    lo_x, hi_x = curves.response(0.0)
    if lo_x.sum() <= target <= hi_x.sum():
        lam_lo = lam_hi = 0.0
        exact = (lo_x, hi_x)
    else:
        exact = None
        lam_lo = 0.0
        lam_hi = curves.marginal_ceiling() * (1 + 1e-9) + 1e-12
        for _ in range(max_iter):
            if lam_hi - lam_lo <= tol * max(1.0, lam_hi):
                break
            mid = 0.5 * (lam_lo + lam_hi)
            lo_x, hi_x = curves.response(mid)
            if lo_x.sum() <= target <= hi_x.sum():
                exact = (lo_x, hi_x)
                break
            if hi_x.sum() < target:
                lam_lo = mid
            else:
                lam_hi = mid
    if exact is not None:
        xa, xb = exact
    else:
        xa = curves.response(lam_lo)[1]
        xb = curves.response(lam_hi)[0]
    sa, sb = xa.sum(), xb.sum()
    t = (target - sa) / (sb - sa) if sb > sa else 0.0
    x = np.clip(xa + t * (xb - xa), 0.0, caps)
    left, right = curves.derivatives(x)
    capped = x >= caps * (1 - 1e-12)
    lam_minus = float(left.max(initial=0.0))
    lam_plus = float(right[~capped].min()) if np.any(~capped) else math.inf
    return NodeAllocation(x, (lam_minus, lam_plus))
