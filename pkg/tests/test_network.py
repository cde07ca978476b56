import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from sfmarket.errors import InputError
from sfmarket.network import (
    LineSpec,
    NetworkModel,
    build_network,
    injection_feasible,
    max_nodal_supplies,
    max_nodal_supply,
    network_from_matrix,
    two_node_network,
)

from helpers import random_network


def lp_max_supply(net, i):
    """q_i^max by scipy's HiGHS on the explicit polytope."""
    n = net.node_count
    cost = np.zeros(n)
    cost[i] = -1.0
    res = linprog(cost, A_ub=net.shift_factor, b_ub=net.line_capacity + net.shift_factor @ net.demand,
                  A_eq=np.ones((1, n)), b_eq=[net.total_demand], bounds=[(0, None)] * n,
                  method="highs")
    assert res.status == 0
    return -res.fun


def test_two_node_ptdf_is_unit():
    net = build_network([LineSpec(0, 1, 0.3)], [1.0, 1.0], slack_node=0)
    assert net.shift_factor.shape == (2, 2)
    np.testing.assert_array_equal(net.shift_factor, [[0.0, -1.0], [0.0, 1.0]])
    np.testing.assert_array_equal(net.line_capacity, [0.3, 0.3])


def test_three_node_ring_ptdf():
    # Equal reactances, slack 0: injecting at node 1 splits 2/3 direct, 1/3 around.
    lines = [LineSpec(0, 1, 1.0), LineSpec(1, 2, 1.0), LineSpec(2, 0, 1.0)]
    net = build_network(lines, [0, 0, 0])
    F = net.shift_factor[:3]
    expected = np.array([[0, -2 / 3, -1 / 3],
                         [0, 1 / 3, -1 / 3],
                         [0, 1 / 3, 2 / 3]])
    np.testing.assert_allclose(F, expected, atol=1e-12)
    np.testing.assert_allclose(net.shift_factor[3:], -F)


def test_reactance_weights_flows():
    # Line 0-2 is half the reactance of the path through node 1, so it takes 2/3.
    lines = [LineSpec(0, 1, 1.0, 0.5), LineSpec(1, 2, 1.0, 0.5), LineSpec(0, 2, 1.0, 0.5)]
    net = build_network(lines, [0, 0, 0])
    y = np.array([1.0, 0.0, -1.0])
    flows = net.shift_factor[:3] @ y
    np.testing.assert_allclose(flows, [1 / 3, 1 / 3, 2 / 3], atol=1e-12)


def test_slack_choice_does_not_change_balanced_flows():
    rng = np.random.default_rng(3)
    lines = [LineSpec(0, 1, 1, 1.0), LineSpec(1, 2, 1, 2.0), LineSpec(2, 3, 1, 0.7),
             LineSpec(3, 0, 1, 1.3), LineSpec(0, 2, 1, 0.9)]
    y = rng.normal(size=4)
    y -= y.mean()
    flows = [build_network(lines, np.zeros(4), slack_node=s).shift_factor @ y for s in range(4)]
    for f in flows[1:]:
        np.testing.assert_allclose(f, flows[0], atol=1e-12)


def test_disconnected_network_rejected():
    with pytest.raises(InputError, match="disconnected network"):
        build_network([LineSpec(0, 1, 1.0)], [0, 0, 1])


def test_invalid_reactance():
    with pytest.raises(InputError, match="invalid reactance"):
        LineSpec(0, 1, 1.0, 0.0)
    with pytest.raises(InputError, match="invalid reactance"):
        LineSpec(0, 1, 1.0, -2.0)


def test_line_validation():
    with pytest.raises(InputError):
        LineSpec(1, 1, 1.0)
    with pytest.raises(InputError):
        LineSpec(0, 1, -0.1)


def test_network_shape_and_sign_checks():
    with pytest.raises(InputError, match="shape error"):
        network_from_matrix([[1.0, 0.0]], [1.0], [1.0, 1.0])
    with pytest.raises(InputError):
        network_from_matrix([[0, -1], [0, 1]], [-1, 1], [1, 1])
    with pytest.raises(InputError):
        network_from_matrix([[0, -1], [0, 1]], [1, 1], [1, -1])


def test_arrays_are_read_only():
    net = two_node_network(1, 1, 0.3)
    with pytest.raises(ValueError):
        net.demand[0] = 5.0


def test_injection_feasible_examples():
    net = two_node_network(1, 1, 0.3)
    assert injection_feasible(net, [0, 0])
    assert not injection_feasible(net, [0.4, -0.4])
    assert injection_feasible(net, [0.3, -0.3])
    assert injection_feasible(net, [-0.3, 0.3])
    assert not injection_feasible(net, [0.1, 0.0])
    with pytest.raises(InputError, match="shape error"):
        injection_feasible(net, [0, 0, 0])


def test_zero_capacity_line_forces_local_balance():
    net = two_node_network(1.0, 0.5, 0.0)
    assert injection_feasible(net, [0.0, 0.0])
    assert not injection_feasible(net, [1e-3, -1e-3])
    assert max_nodal_supply(net, 0) == pytest.approx(1.0, abs=1e-8)
    assert max_nodal_supply(net, 1) == pytest.approx(0.5, abs=1e-8)


def test_max_nodal_supply_examples():
    assert max_nodal_supply(two_node_network(1, 1, 0.3), 0) == pytest.approx(1.3, abs=1e-8)
    assert max_nodal_supply(two_node_network(1, 1, 2.0), 0) == pytest.approx(2.0, abs=1e-8)
    single = build_network([], [2.5])
    assert max_nodal_supply(single, 0) == 2.5


def test_max_nodal_supply_out_of_range():
    with pytest.raises(InputError):
        max_nodal_supply(two_node_network(1, 1, 1), 2)


@pytest.mark.parametrize("seed", range(8))
def test_max_nodal_supply_matches_highs(seed):
    net = random_network(np.random.default_rng(seed))
    ours = max_nodal_supplies(net)
    for i in range(net.node_count):
        assert ours[i] == pytest.approx(lp_max_supply(net, i), abs=1e-7)
        assert net.demand[i] - 1e-9 <= ours[i] <= net.total_demand + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.0, 3.0))
def test_max_nodal_supply_grows_with_capacity(seed, factor):
    net = random_network(np.random.default_rng(seed))
    wider = net.with_capacity(net.line_capacity * factor)
    base, more = max_nodal_supplies(net), max_nodal_supplies(wider)
    assert np.all(more >= base - 1e-7)


def test_asymmetric_direction_capacities():
    # 0.5 may flow into node 1 but nothing may leave it
    H = [[0.0, -1.0], [0.0, 1.0]]
    net = NetworkModel(np.array(H), np.array([0.5, 0.0]), np.array([1.0, 1.0]))
    assert max_nodal_supply(net, 0) == pytest.approx(1.5, abs=1e-8)
    assert max_nodal_supply(net, 1) == pytest.approx(1.0, abs=1e-8)


def test_with_demand_keeps_network():
    net = two_node_network(1, 1, 0.3)
    other = net.with_demand([0.5, 0.2])
    np.testing.assert_array_equal(other.shift_factor, net.shift_factor)
    assert other.total_demand == pytest.approx(0.7)
