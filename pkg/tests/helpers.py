"""Shared test utilities: random plan generators and full-recompute oracles."""

import math
from itertools import permutations

from ecvrp.analysis import _partitions_upto, brute_force_optimum
from ecvrp.charging import build_best_station_table, solve_se
from ecvrp.instance import DistanceOracle
from ecvrp.moves import ALL_OPERATORS, INTRA_ROUTE, Move, enumerate_positions
from ecvrp.search import InstanceInfeasible

from conftest import make_instance


def full_surrogate(routes, inst):
    """Budget-free recomputation of the surrogate cost from coordinates."""
    total = 0.0
    for route in routes:
        prev = 0
        for node in list(route) + [0]:
            if route:
                total += math.dist(inst.coords[prev], inst.coords[node])
                prev = node
    return total


def random_partition_plan(rng, inst, n_routes=None):
    """A random customer partition into exactly fleet_size route slots.

    Capacity is ignored; useful for operators, which only promise to
    preserve the partition.
    """
    customers = list(inst.customers)
    rng.shuffle(customers)
    slots = n_routes if n_routes is not None else inst.fleet_size
    routes = [[] for _ in range(slots)]
    for c in customers:
        routes[rng.randrange(slots)].append(c)
    return routes


def random_feasible_plan(rng, inst, max_tries=200):
    """A capacity-feasible random partition into at most fleet_size routes."""
    for _ in range(max_tries):
        customers = list(inst.customers)
        rng.shuffle(customers)
        routes = [[] for _ in range(inst.fleet_size)]
        loads = [0.0] * inst.fleet_size
        ok = True
        for c in customers:
            fits = [v for v in range(inst.fleet_size)
                    if loads[v] + inst.demands[c] <= inst.cargo_capacity]
            if not fits:
                ok = False
                break
            v = fits[rng.randrange(len(fits))]
            routes[v].append(c)
            loads[v] += inst.demands[c]
        if ok:
            return routes
    raise AssertionError("could not build a capacity-feasible plan")


def disc_point(rng, radius):
    while True:
        x, y = rng.uniform(-radius, radius), rng.uniform(-radius, radius)
        if x * x + y * y <= radius * radius:
            return (x, y)


def random_tiny_instance(rng):
    """Small instance with a gently binding battery: every out-and-back fits
    in one charge, longer routes need single-station stops."""
    spread = rng.uniform(40, 60)
    battery = rng.uniform(2.3, 3.0) * spread
    n = rng.randrange(3, 7)
    customers = [disc_point(rng, spread) for _ in range(n)]
    angle = rng.uniform(0, 2 * math.pi)
    stations = []
    for k in range(2):
        rho = rng.uniform(0.45, 0.75) * spread
        theta = angle + k * math.pi + rng.uniform(-0.6, 0.6)
        stations.append((rho * math.cos(theta), rho * math.sin(theta)))
    demands = [rng.randrange(1, 4) for _ in range(n)]
    cap = max(demands) + rng.randrange(2, 5)
    return make_instance(customers=customers, stations=stations,
                         demands=demands, capacity=cap,
                         battery=battery, rate=1.0, fleet=3)


def route_length(order, inst):
    total = 0.0
    prev = 0
    for c in list(order) + [0]:
        total += math.dist(inst.coords[prev], inst.coords[c])
        prev = c
    return total


def min_routing_cost(inst):
    """Optimal surrogate cost ignoring the battery entirely (pure CVRP)."""
    best = math.inf
    for partition in _partitions_upto(tuple(inst.customers), inst.fleet_size):
        total = 0.0
        ok = True
        for block in partition:
            if sum(inst.demands[c] for c in block) > inst.cargo_capacity:
                ok = False
                break
            total += min(route_length(p, inst) for p in permutations(block))
        if ok and total < best:
            best = total
    return best


def certified_tiny_fixture(rng):
    """A random tiny instance together with its exact optimum, filtered to
    the search's certification envelope: the optimum must be priceable at
    its exact cost by the restricted follower and sit within half a percent
    of the battery-free routing floor (inside the follower window and the
    late-acceptance noise band)."""
    while True:
        inst = random_tiny_instance(rng)
        try:
            exact = brute_force_optimum(inst)
        except InstanceInfeasible:
            continue
        oracle = DistanceOracle.for_instance(inst)
        table = build_best_station_table(inst, oracle)
        priced = solve_se([list(r) for r in exact.routing.routes], inst,
                          oracle, table)
        if not priced.feasible or \
                priced.detour_cost > exact.detour_cost + 1e-9:
            continue
        if exact.surrogate > 1.005 * min_routing_cost(inst):
            continue
        return inst, exact


def random_move(rng, routes, ops=ALL_OPERATORS):
    """Draw a random valid (op, target, a, b) for the plan, or None."""
    op = ops[rng.randrange(len(ops))]
    nonempty = [i for i, r in enumerate(routes) if r]
    if not nonempty:
        return None
    if op in INTRA_ROUTE or op is Move.SEED_EMPTY_ROUTE:
        target = nonempty[rng.randrange(len(nonempty))]
        route = routes[target]
        a = route[rng.randrange(len(route))]
    else:
        if len(nonempty) < 2:
            return None
        i = rng.randrange(len(nonempty))
        j = rng.randrange(len(nonempty) - 1)
        if j >= i:
            j += 1
        target = (nonempty[i], nonempty[j])
        route = routes[target[0]]
        a = route[rng.randrange(len(route))]
    candidates = enumerate_positions(op, routes, target, a)
    if not candidates:
        return None
    return op, target, a, candidates[rng.randrange(len(candidates))]
