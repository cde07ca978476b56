"""Supply-function equilibria, market-power indices and locational prices on DC networks."""

from .costs import CostSpec, Producer, modified_cost, reported_cost, supply_function
from .dispatch import (
    DispatchOutcome,
    efficient_dispatch,
    local_allocation,
    nodal_price,
    reported_dispatch,
)
from .engine import NodeCurves, SeparableObjective, dual_bisection, solve_polytope
from .equilibrium import (
    EquilibriumOutcome,
    best_response,
    competitive_equilibrium,
    g_oracle,
    nash_equilibrium,
    producer_payoff,
    unbounded_poa_instance,
    verify_nash,
)
from .errors import InfeasibleError, InputError, MarketError, RegimeError
from .indices import (
    envelope_check,
    index_report,
    lerner_bound,
    lerner_index,
    market_share,
    markup_bound,
    pivotal_screen,
    poa_bound,
    price_of_anarchy,
    rsi,
)
from .network import LineSpec, NetworkModel, build_network, max_nodal_supply, network_from_matrix
from .two_node import TwoNodeScenario, braess_condition, capacity_sweep, cost_derivative, two_node_nash

__version__ = "0.1.0"
