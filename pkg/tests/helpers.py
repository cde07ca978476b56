"""Instance generators shared by the test modules."""

from __future__ import annotations

import numpy as np

from sfmarket.costs import CostSpec, Producer
from sfmarket.network import LineSpec, build_network, max_nodal_supplies, two_node_network


def fig2_market(c: float, beta2: float = 1.15):
    prods = [Producer(0, 1.02, CostSpec.linear(1.0), f"a{k}") for k in range(3)]
    prods += [Producer(1, 1.02, CostSpec.linear(beta2), f"b{k}") for k in range(10)]
    return two_node_network(1.0, 1.0, c), prods


def single_node(n_prod: int, beta: float, cap: float, demand: float):
    net = build_network([], [demand])
    return net, [Producer(0, cap, CostSpec.linear(beta), f"g{k}") for k in range(n_prod)]


def random_network(rng: np.random.Generator, n: int | None = None):
    n = int(rng.integers(2, 6)) if n is None else n
    lines = []
    edges = set()
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.add((j, i))
    for _ in range(int(rng.integers(0, n))):
        a, b = sorted(rng.choice(n, 2, replace=False).tolist())
        edges.add((a, b))
    demand = rng.uniform(0.2, 1.5, n)
    for a, b in sorted(edges):
        lines.append(LineSpec(a, b, float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.5, 2.0))))
    return build_network(lines, demand, slack_node=int(rng.integers(0, n)))


def random_cost(rng: np.random.Generator) -> CostSpec:
    beta = float(rng.uniform(0.5, 3.0))
    if rng.random() < 0.5:
        return CostSpec.linear(beta)
    return CostSpec.quadratic(float(rng.uniform(0.05, 1.0)), beta)


def random_market(seed: int):
    """Connected 2-5 node network, 2-6 producers per node, no pivotal supplier.

    Capacities are scaled so every producer's rivals cover 1.2 times the
    maximum nodal supply.
    """
    rng = np.random.default_rng(seed)
    net = random_network(rng)
    qmax = max_nodal_supplies(net)
    producers = []
    for i in range(net.node_count):
        k = int(rng.integers(2, 7))
        raw = rng.uniform(0.5, 1.5, k)
        rivals = raw.sum() - raw.max()
        scale = 1.2 * qmax[i] / rivals * float(rng.uniform(1.0, 1.6))
        for r in raw:
            producers.append(Producer(i, float(r * scale), random_cost(rng), f"n{i}g{len(producers)}"))
    return net, producers


def kinked_cost(rng: np.random.Generator) -> CostSpec:
    """Convex piecewise quadratic with two kinks."""
    t1 = float(rng.uniform(0.1, 0.4))
    t2 = t1 + float(rng.uniform(0.1, 0.4))
    b0 = float(rng.uniform(0.5, 2.0))
    a0, a1, a2 = (float(v) for v in rng.uniform(0.0, 1.0, 3))
    m1 = 2 * a0 * t1 + b0 + float(rng.uniform(0.1, 1.0))  # derivative jump at t1
    b1 = m1 - 2 * a1 * t1
    m2 = 2 * a1 * t2 + b1 + float(rng.uniform(0.1, 1.0))
    b2 = m2 - 2 * a2 * t2
    return CostSpec.piecewise([t1, t2], [(a0, b0), (a1, b1), (a2, b2)])
