"""Lower-level charging solvers for fixed routes.

Two followers are provided.  solve_se() is the cheap one used during
search: per route it picks gap subsets of the two admissible sizes and
fills every chosen gap with the precomputed best detour station.
solve_exhaustive() additionally ranges over every station and every
ordered station pair per gap; it is reserved for final refinement and
validation because it costs far more arc reads.

Both bound the number of station visits on route v to [lb_v, lb_v + 1]
where lb_v = floor(route_length / full_charge_range).  Plans needing more
visits than that are reported infeasible, mirroring the model assumption
that at most two consecutive stops ever suffice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .instance import DistanceOracle, EvaluationBudget, InstanceSpec
from .solution import ChargingPlan, RoutingPlan, Slot


class BudgetExhausted(RuntimeError):
    """Raised by budget-enforcing solvers when the meter runs out mid-call."""


@dataclass(frozen=True)
class BestStationTable:
    """For every ordered pair of non-charging nodes, the station whose
    detour path is shortest, plus that path length.

    Ties break toward the lowest station id, so results are reproducible.
    Construction is not metered: the table is immutable instance data
    shared across runs, like the distance matrix itself.
    """

    station_for: tuple  # (n+1) x (n+1) nested tuples of station ids
    detour_len: tuple   # matching detour path lengths d(i,s) + d(s,j)


def build_best_station_table(inst: InstanceSpec,
                             oracle: DistanceOracle) -> BestStationTable:
    if inst.num_stations < 1:
        raise ValueError("instance has no charging stations")
    matrix = np.asarray(oracle.matrix)
    nc = 1 + inst.num_customers
    node_to_station = matrix[:nc, nc:]
    best_len = np.full((nc, nc), np.inf)
    best_sta = np.full((nc, nc), -1, dtype=np.int64)
    for s_idx in range(inst.num_stations):
        col = node_to_station[:, s_idx]
        cand = col[:, None] + col[None, :]
        better = cand < best_len
        best_len[better] = cand[better]
        best_sta[better] = nc + s_idx
    return BestStationTable(
        station_for=tuple(tuple(row) for row in best_sta.tolist()),
        detour_len=tuple(tuple(row) for row in best_len.tolist()),
    )


def min_visits(route, oracle: DistanceOracle, inst: InstanceSpec) -> int:
    """Minimum station visits needed by a route: its length divided by the
    full-charge driving range, rounded down."""
    if not route:
        return 0
    budget = oracle.budget
    matrix = oracle.matrix
    if budget is not None:
        budget.arc_access_count += len(route) + 1
    cost = 0.0
    prev = 0
    for node in route:
        cost += matrix[prev][node]
        prev = node
    cost += matrix[prev][0]
    return visits_lower_bound(cost, inst)


def visits_lower_bound(route_cost: float, inst: InstanceSpec) -> int:
    return math.floor(route_cost * inst.consumption_rate / inst.battery_capacity)


@dataclass(frozen=True)
class ChargingQueryResult:
    feasible: bool
    plan: ChargingPlan | None
    detour_cost: float | None
    enumeration_count: int
    surrogate: float = 0.0   # direct route cost summed from the arcs read

    def __bool__(self) -> bool:
        return self.feasible


def _check_budget(budget: EvaluationBudget | None, enforce: bool) -> None:
    if enforce and budget is not None and budget.exceeded():
        raise BudgetExhausted


def solve_se(plan, inst: InstanceSpec, oracle: DistanceOracle,
             table: BestStationTable, enforce_budget: bool = False
             ) -> ChargingQueryResult:
    """Simple-enumeration follower: at most one station per gap, station
    fixed to the gap's best detour station.

    Per route all gap subsets of size lb and lb+1 are examined in
    lexicographic order; the first battery-feasible subset of minimum
    detour wins.  enumeration_count multiplies the per-route examined
    counts, matching the size of the restricted configuration space.
    """
    routes = plan.routes if isinstance(plan, RoutingPlan) else plan
    budget = oracle.budget
    matrix = oracle.matrix
    rate = inst.consumption_rate
    full = inst.battery_capacity

    slots_out: list[tuple[Slot, ...]] = []
    detour_total = 0.0
    surrogate_total = 0.0
    examined_product = 1
    for route in routes:
        if not route:
            slots_out.append((None,))
            continue
        nodes = [0, *route, 0]
        n_gaps = len(route) + 1

        directs = []
        legs_in = []
        legs_out = []
        for g in range(n_gaps):
            _check_budget(budget, enforce_budget)
            u, w = nodes[g], nodes[g + 1]
            station = table.station_for[u][w]
            if budget is not None:
                budget.arc_access_count += 3
            directs.append(matrix[u][w])
            legs_in.append(matrix[u][station])
            legs_out.append(matrix[station][w])

        route_cost = 0.0
        for d in directs:
            route_cost += d
        surrogate_total += route_cost
        lb = visits_lower_bound(route_cost, inst)

        best_f = None
        best_combo = None
        examined = 0
        for size in (lb, lb + 1):
            if size < 0 or size > n_gaps:
                continue
            for combo in combinations(range(n_gaps), size):
                examined += 1
                charge = full
                detour = 0.0
                pos = 0
                ok = True
                for g in range(n_gaps):
                    if pos < size and combo[pos] == g:
                        pos += 1
                        charge -= rate * legs_in[g]
                        if charge < 0.0:
                            ok = False
                            break
                        charge = full - rate * legs_out[g]
                        if charge < 0.0:
                            ok = False
                            break
                        # Same association as the exhaustive solver, so the
                        # shared configurations cost bit-identical detours.
                        detour = detour + legs_in[g] + legs_out[g] - directs[g]
                    else:
                        charge -= rate * directs[g]
                        if charge < 0.0:
                            ok = False
                            break
                if ok and (best_f is None or detour < best_f):
                    best_f = detour
                    best_combo = combo
        examined_product *= examined
        if best_f is None:
            return ChargingQueryResult(False, None, None, examined_product)
        chosen = set(best_combo)
        slots_out.append(tuple(
            table.station_for[nodes[g]][nodes[g + 1]] if g in chosen else None
            for g in range(n_gaps)))
        detour_total += best_f

    return ChargingQueryResult(
        True, ChargingPlan(tuple(slots_out)), detour_total, examined_product,
        surrogate_total)


def solve_exhaustive(plan, inst: InstanceSpec, oracle: DistanceOracle,
                     enforce_budget: bool = False) -> ChargingQueryResult:
    """Exhaustive follower: every gap may hold nothing, any single station,
    or any ordered pair of distinct stations, with per-route visits bounded
    to [lb, lb + 1].  Returns the global minimum-detour feasible plan.

    Depth-first enumeration goes gap by gap in option order NIL, then
    stations ascending, then pairs in lexicographic order, so among equal
    detours the first configuration found is kept deterministically.
    Branches are cut when the battery dies, when the visit bound cannot be
    met, or when the partial detour already matches the best found.
    """
    routes = plan.routes if isinstance(plan, RoutingPlan) else plan
    budget = oracle.budget
    matrix = oracle.matrix
    rate = inst.consumption_rate
    full = inst.battery_capacity
    stations = list(inst.stations)
    n_sta = len(stations)

    # Per-route preparation: direct arcs and the visit bound.
    prepared = []
    for route in routes:
        if not route:
            prepared.append(None)
            continue
        nodes = [0, *route, 0]
        directs = []
        for g in range(len(nodes) - 1):
            _check_budget(budget, enforce_budget)
            if budget is not None:
                budget.arc_access_count += 1
            directs.append(matrix[nodes[g]][nodes[g + 1]])
        route_cost = 0.0
        for d in directs:
            route_cost += d
        prepared.append((nodes, directs, visits_lower_bound(route_cost, inst),
                         route_cost))

    # Station-to-station arcs are shared by all pair options; read them once
    # if any route can use a pair at all.
    pair_possible = any(p is not None and p[2] >= 1 for p in prepared)
    sta_sta = None
    if pair_possible and n_sta >= 2:
        sta_sta = [[0.0] * n_sta for _ in range(n_sta)]
        for a in range(n_sta):
            for b in range(a + 1, n_sta):
                _check_budget(budget, enforce_budget)
                if budget is not None:
                    budget.arc_access_count += 1
                d = matrix[stations[a]][stations[b]]
                sta_sta[a][b] = d
                sta_sta[b][a] = d

    slots_out: list[tuple[Slot, ...]] = []
    detour_total = 0.0
    surrogate_total = 0.0
    examined_total = 0
    for route, prep in zip(routes, prepared):
        if prep is None:
            slots_out.append((None,))
            continue
        nodes, directs, lb, route_cost = prep
        surrogate_total += route_cost
        n_gaps = len(directs)
        ub = lb + 1
        if lb > 2 * n_gaps:
            return ChargingQueryResult(False, None, None, examined_total)

        legs_in: list[list[float] | None] = [None] * n_gaps
        legs_out: list[list[float] | None] = [None] * n_gaps

        def gap_legs(g: int) -> tuple[list[float], list[float]]:
            if legs_in[g] is None:
                _check_budget(budget, enforce_budget)
                if budget is not None:
                    budget.arc_access_count += 2 * n_sta
                u, w = nodes[g], nodes[g + 1]
                row_u = matrix[u]
                legs_in[g] = [row_u[s] for s in stations]
                legs_out[g] = [matrix[s][w] for s in stations]
            return legs_in[g], legs_out[g]

        best: list = [None, None]   # [detour, slot assignment]
        assign: list[Slot] = [None] * n_gaps
        examined = 0

        def descend(g: int, visits: int, charge: float, detour: float) -> None:
            nonlocal examined
            if best[0] is not None and detour >= best[0]:
                return
            if g == n_gaps:
                if visits >= lb:
                    examined += 1
                    best[0] = detour
                    best[1] = assign.copy()
                return
            if visits + 2 * (n_gaps - g) < lb:
                return
            after_nil = charge - rate * directs[g]
            if after_nil >= 0.0:
                assign[g] = None
                descend(g + 1, visits, after_nil, detour)
            if visits < ub:
                f_in, f_out = gap_legs(g)
                direct = directs[g]
                for si in range(n_sta):
                    arrive = charge - rate * f_in[si]
                    if arrive < 0.0:
                        continue
                    onward = full - rate * f_out[si]
                    if onward < 0.0:
                        continue
                    assign[g] = stations[si]
                    descend(g + 1, visits + 1, onward,
                            detour + f_in[si] + f_out[si] - direct)
                if visits + 1 < ub and sta_sta is not None:
                    for ui in range(n_sta):
                        arrive = charge - rate * f_in[ui]
                        if arrive < 0.0:
                            continue
                        hop_row = sta_sta[ui]
                        for wi in range(n_sta):
                            if wi == ui:
                                continue
                            if full - rate * hop_row[wi] < 0.0:
                                continue
                            onward = full - rate * f_out[wi]
                            if onward < 0.0:
                                continue
                            assign[g] = (stations[ui], stations[wi])
                            descend(g + 1, visits + 2, onward,
                                    detour + f_in[ui] + hop_row[wi]
                                    + f_out[wi] - direct)
            assign[g] = None

        descend(0, 0, full, 0.0)
        examined_total += examined
        if best[0] is None:
            return ChargingQueryResult(False, None, None, examined_total)
        slots_out.append(tuple(best[1]))
        detour_total += best[0]

    return ChargingQueryResult(
        True, ChargingPlan(tuple(slots_out)), detour_total, examined_total,
        surrogate_total)
