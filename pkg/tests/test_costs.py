import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from sfmarket.costs import (
    CostSpec,
    Producer,
    as_bids,
    cost_eval,
    modified_cost,
    reported_cost,
    supply_function,
)
from sfmarket.errors import InputError, RegimeError

from helpers import kinked_cost


def some_costs():
    rng = np.random.default_rng(0)
    return [CostSpec.linear(1.0), CostSpec.linear(2.5), CostSpec.quadratic(0.3, 1.2),
            CostSpec.quadratic(1.0, 0.0), kinked_cost(rng), kinked_cost(rng)]


cost_strategy = st.one_of(
    st.builds(CostSpec.linear, st.floats(0.01, 10)),
    st.builds(CostSpec.quadratic, st.floats(0.0, 5), st.floats(0.01, 10)),
    st.integers(0, 2**31).map(lambda s: kinked_cost(np.random.default_rng(s))),
)


class TestCostEval:
    def test_negative_argument_is_zero(self):
        assert cost_eval(CostSpec.linear(1.0), -0.5) == (0, 0, 0, 0)

    def test_kink_at_origin(self):
        assert cost_eval(CostSpec.linear(1.0), 0.0) == (0, 0, 1, 0)

    def test_linear_value(self):
        value, left, right, integral = cost_eval(CostSpec.linear(2.0), 0.5)
        assert (value, left, right) == (1.0, 2.0, 2.0)
        assert integral == pytest.approx(0.25, abs=1e-15)

    def test_quadratic(self):
        c = CostSpec.quadratic(0.5, 1.0)
        value, left, right, integral = cost_eval(c, 2.0)
        assert value == pytest.approx(4.0)
        assert left == right == pytest.approx(3.0)
        assert integral == pytest.approx(0.5 * 8 / 3 + 2.0)

    def test_piecewise_kink(self):
        c = CostSpec.piecewise([1.0], [(0.0, 1.0), (0.0, 3.0)])
        assert c.value(1.0) == pytest.approx(1.0)
        assert c.value(2.0) == pytest.approx(4.0)
        assert c.derivatives(1.0) == (1.0, 3.0)
        # C = x on [0,1], 3x - 2 beyond: integral to 2 is 1/2 + (6 - 4) - (1.5 - 2)
        assert c.integral(2.0) == pytest.approx(3.0, abs=1e-12)
        assert c.integral(2.0) == pytest.approx(quad(c.value, 0, 2, points=[1.0])[0], abs=1e-12)


@pytest.mark.parametrize("cost", some_costs())
def test_integral_matches_quadrature(cost):
    kinks = [t for t in cost.breakpoints]
    for x in (0.05, 0.37, 0.8, 1.6):
        pts = [t for t in kinks if t < x] or None
        assert cost.integral(x) == pytest.approx(quad(cost.value, 0, x, points=pts)[0], abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(cost_strategy, st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_integral_consistency_on_intervals(cost, a, b):
    lo, hi = sorted((a, b))
    pts = [t for t in cost.breakpoints if lo < t < hi] or None
    exact = cost.integral(hi) - cost.integral(lo)
    assert exact == pytest.approx(quad(cost.value, lo, hi, points=pts)[0], abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(cost_strategy, st.lists(st.floats(-1.0, 3.0), min_size=2, max_size=12))
def test_convexity_and_sign(cost, xs):
    xs = sorted(set(xs))
    prev_right = -math.inf
    for x in xs:
        left, right = cost.derivatives(x)
        assert left <= right + 1e-12
        assert left >= prev_right - 1e-12 or math.isinf(prev_right)
        prev_right = right
        assert (cost.value(x) == 0) == (x <= 0)


def test_validation():
    with pytest.raises(InputError):
        CostSpec.linear(0.0)
    with pytest.raises(InputError):
        CostSpec.quadratic(-1.0, 1.0)
    with pytest.raises(InputError, match="not convex"):
        CostSpec.piecewise([1.0], [(0.0, 2.0), (0.0, 1.0)])
    with pytest.raises(InputError):
        CostSpec.piecewise([1.0, 0.5], [(0, 1), (0, 2), (0, 3)])


@pytest.mark.parametrize("cost", some_costs())
def test_dict_round_trip(cost):
    again = CostSpec.from_dict(cost.to_dict())
    assert again == cost
    for x in (0.1, 0.5, 1.3):
        assert again.value(x) == cost.value(x)


def test_from_dict_rejects_unknown_type():
    with pytest.raises(InputError):
        CostSpec.from_dict({"type": "cubic"})


class TestSupply:
    def test_zero_bid_offers_capacity(self):
        p = Producer(0, 1.7, CostSpec.linear(1))
        for price in (0.1, 1.0, 50.0):
            assert supply_function(p, 0.0, price) == 1.7

    def test_examples(self):
        assert supply_function(Producer(0, 1.02, CostSpec.linear(1)), 0.52, 1.0) == pytest.approx(0.5)
        assert supply_function(Producer(0, 1.0, CostSpec.linear(1)), 2.0, 1.0) == -1.0

    def test_nonpositive_price(self):
        with pytest.raises(InputError, match="nonpositive price"):
            supply_function(Producer(0, 1.0, CostSpec.linear(1)), 1.0, 0.0)


class TestReportedCost:
    def test_zero_bid(self):
        assert reported_cost(Producer(0, 2.0, CostSpec.linear(1)), 0.0, 1.5) == 0.0

    def test_log_two(self):
        assert reported_cost(Producer(0, 2.0, CostSpec.linear(1)), 1.0, 1.0) == pytest.approx(0.693147, abs=1e-6)

    def test_barrier(self):
        p = Producer(0, 1.0, CostSpec.linear(1))
        near = [reported_cost(p, 0.5, 1 - 10.0**-k) for k in range(1, 7)]
        assert all(b > a for a, b in zip(near, near[1:]))
        with pytest.raises(InputError, match="capacity exceeded"):
            reported_cost(p, 0.5, 1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.1, 5), st.floats(0.01, 3), st.floats(0.0, 0.95))
    def test_derivative_is_inverse_supply(self, cap, theta, frac):
        p = Producer(0, cap, CostSpec.linear(1))
        x, h = frac * cap, 1e-6 * cap
        fd = (reported_cost(p, theta, x + h) - reported_cost(p, theta, max(x - h, 0.0))) / (x + h - max(x - h, 0.0))
        assert fd == pytest.approx(theta / (cap - x), rel=1e-5)


class TestModifiedCost:
    def test_linear_closed_form(self):
        value, left, right = modified_cost(CostSpec.linear(1.0), 0.5, 1.04)
        assert value == pytest.approx(0.5 * (1 + 0.5 / 2.08), abs=1e-12)
        assert value == pytest.approx(0.620192, abs=1e-6)
        assert left == right == pytest.approx(1.480769, abs=1e-6)

    def test_zero_below_origin(self):
        assert modified_cost(CostSpec.linear(2.0), -1.0, 1.0) == (0.0, 0.0, 0.0)
        assert modified_cost(CostSpec.linear(2.0), 0.0, 1.0) == (0.0, 0.0, 2.0)

    def test_large_residual_limit(self):
        for cost in some_costs():
            for x in (0.2, 0.9):
                assert abs(modified_cost(cost, x, 1e9)[0] - cost.value(x)) <= 1e-6

    def test_pivotal_regime(self):
        with pytest.raises(RegimeError, match="pivotal-supplier regime"):
            modified_cost(CostSpec.linear(1.0), 0.5, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(cost_strategy, st.floats(0.0, 2.0), st.floats(0.05, 5.0))
    def test_sandwich(self, cost, x, residual):
        value = modified_cost(cost, x, residual)[0]
        base = cost.value(x)
        assert base - 1e-12 <= value <= base * (1 + x / residual) + 1e-12

    @settings(max_examples=60, deadline=None)
    @given(cost_strategy, st.floats(0.01, 2.0), st.floats(0.05, 5.0))
    def test_derivative_by_differences(self, cost, x, residual):
        if any(abs(x - t) < 1e-4 for t in cost.breakpoints):
            return
        h = 1e-6
        fd = (modified_cost(cost, x + h, residual)[0] - modified_cost(cost, x - h, residual)[0]) / (2 * h)
        _, left, right = modified_cost(cost, x, residual)
        assert left == pytest.approx(right)
        assert fd == pytest.approx(left, rel=1e-6, abs=1e-8)


def test_bids_validation():
    np.testing.assert_array_equal(as_bids([0, 1.5]), [0, 1.5])
    with pytest.raises(InputError):
        as_bids([-1.0])
    with pytest.raises(InputError, match="shape error"):
        as_bids([1.0, 2.0], 3)


def test_producer_validation():
    with pytest.raises(InputError):
        Producer(0, -1.0, CostSpec.linear(1))
    with pytest.raises(InputError):
        Producer(-1, 1.0, CostSpec.linear(1))
    assert Producer(2, 1.0, CostSpec.linear(1)).label == "node2"
