"""Routing plans, charging plans, feasibility checks and cost evaluation.

A routing plan is a fixed-length list of exactly M customer sequences;
empty sequences are unused vehicles and stay in place so route-creating
moves have an insertion slot.  A charging plan assigns one slot to every
gap of every route: None (no stop), a station id, or an ordered pair of
distinct station ids.

Feasibility checking and cost evaluation are deliberately decoupled:
search evaluates plenty of capacity-feasible plans whose battery
feasibility is never established.  Infeasibility is an expected outcome,
so checks return verdict values instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

from .instance import DistanceOracle, InstanceSpec

Slot = None | int | tuple[int, int]


class SlotLengthMismatch(ValueError):
    """Charging plan does not shape-match its routing plan."""


@dataclass(frozen=True)
class RoutingPlan:
    """Upper-level decision: M ordered customer routes (some may be empty)."""

    routes: tuple[tuple[int, ...], ...]

    @classmethod
    def from_lists(cls, routes) -> "RoutingPlan":
        return cls(tuple(tuple(r) for r in routes))

    @property
    def num_nonempty(self) -> int:
        return sum(1 for r in self.routes if r)


@dataclass(frozen=True)
class ChargingPlan:
    """Lower-level decision: per route, one slot per gap (len = route len + 1)."""

    slots: tuple[tuple[Slot, ...], ...]


@dataclass(frozen=True)
class CompleteSolution:
    routing: RoutingPlan
    charging: ChargingPlan
    total_cost: float      # F = surrogate + detour
    detour_cost: float     # f >= 0
    surrogate: float       # phi, routing distance alone


@dataclass(frozen=True)
class UpperVerdict:
    ok: bool
    violation: str | None = None   # MissingCustomer | DuplicateCustomer |
    detail: str | None = None      # CapacityExceeded | TooManyRoutes

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class BatteryVerdict:
    ok: bool
    failed_at: int | None = None   # node where the charge went negative
    deficit: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


UPPER_OK = UpperVerdict(True)


def check_upper_feasible(plan: RoutingPlan | list, inst: InstanceSpec) -> UpperVerdict:
    """Verify the partition, per-route capacity and route-count constraints."""
    routes = plan.routes if isinstance(plan, RoutingPlan) else plan
    if len(routes) > inst.fleet_size:
        return UpperVerdict(False, "TooManyRoutes",
                            f"{len(routes)} route slots > fleet size {inst.fleet_size}")
    seen = set()
    for v, route in enumerate(routes):
        load = 0.0
        for c in route:
            if c in seen:
                return UpperVerdict(False, "DuplicateCustomer",
                                    f"customer {c} served more than once")
            if c not in inst.customers:
                return UpperVerdict(False, "DuplicateCustomer",
                                    f"node {c} is not a customer")
            seen.add(c)
            load += inst.demands[c]
        if load > inst.cargo_capacity:
            return UpperVerdict(
                False, "CapacityExceeded",
                f"route {v} load {load} > capacity {inst.cargo_capacity}")
    if len(seen) != inst.num_customers:
        missing = sorted(set(inst.customers) - seen)
        return UpperVerdict(False, "MissingCustomer",
                            f"customers {missing} are not served")
    return UPPER_OK


def surrogate_cost(plan: RoutingPlan | list, oracle: DistanceOracle) -> float:
    """Total routing distance ignoring charging; empty routes contribute 0."""
    routes = plan.routes if isinstance(plan, RoutingPlan) else plan
    budget = oracle.budget
    matrix = oracle.matrix
    total = 0.0
    for route in routes:
        if not route:
            continue
        if budget is not None:
            budget.arc_access_count += len(route) + 1
        prev = 0
        cost = 0.0
        for node in route:
            cost += matrix[prev][node]
            prev = node
        total += cost + matrix[prev][0]
    return total


def expand_route(route, slots) -> list[int]:
    """Weave charging decisions into a route: depot, gap 0 stop(s), node, ...

    slots must have exactly len(route) + 1 entries.
    """
    if len(slots) != len(route) + 1:
        raise SlotLengthMismatch(
            f"route of {len(route)} customers needs {len(route) + 1} slots, "
            f"got {len(slots)}")
    expanded = [0]
    for gap, nxt in enumerate(list(route) + [0]):
        slot = slots[gap]
        if slot is not None:
            if isinstance(slot, tuple):
                u, w = slot
                if u == w:
                    raise SlotLengthMismatch(f"slot pair ({u}, {w}) must be distinct")
                expanded.append(u)
                expanded.append(w)
            else:
                expanded.append(slot)
        expanded.append(nxt)
    return expanded


def battery_feasible(expanded, inst: InstanceSpec,
                     oracle: DistanceOracle) -> tuple[BatteryVerdict, list]:
    """Simulate the state of charge along an expanded route.

    Charge is full on departure from the depot and every station and drops
    by h * d_ij per arc; the verdict fails at the first node reached with
    negative charge.  The trace records the charge on arrival at each node
    (full at the starting depot) and is returned for diagnostics either way.
    """
    budget = oracle.budget
    matrix = oracle.matrix
    rate = inst.consumption_rate
    full = inst.battery_capacity
    charge = full
    trace = [(expanded[0], charge)]
    prev = expanded[0]
    for node in expanded[1:]:
        if budget is not None:
            budget.arc_access_count += 1
        charge -= rate * matrix[prev][node]
        trace.append((node, charge))
        if charge < 0.0:
            return BatteryVerdict(False, failed_at=node, deficit=-charge), trace
        if node == 0 or inst.is_station(node):
            charge = full
        prev = node
    return BatteryVerdict(True), trace


def total_cost(plan: RoutingPlan | list, charging: ChargingPlan | list,
               oracle: DistanceOracle) -> tuple[float, float, float]:
    """Evaluate (F, f, phi) for a shape-matched plan pair.

    Cost is computable for battery-infeasible plans too; feasibility is a
    separate concern.  f is accumulated per gap so that F = phi + f holds
    exactly in floating point.
    """
    routes = plan.routes if isinstance(plan, RoutingPlan) else plan
    slot_lists = charging.slots if isinstance(charging, ChargingPlan) else charging
    if len(slot_lists) != len(routes):
        raise SlotLengthMismatch(
            f"{len(routes)} routes but {len(slot_lists)} slot lists")
    budget = oracle.budget
    matrix = oracle.matrix
    phi = 0.0
    detour = 0.0
    for route, slots in zip(routes, slot_lists):
        if not route:
            if len(slots) not in (0, 1) or (len(slots) == 1 and slots[0] is not None):
                raise SlotLengthMismatch("empty route must carry a single empty slot")
            continue
        if len(slots) != len(route) + 1:
            raise SlotLengthMismatch(
                f"route of {len(route)} customers needs {len(route) + 1} slots, "
                f"got {len(slots)}")
        prev = 0
        for gap, nxt in enumerate(list(route) + [0]):
            if budget is not None:
                budget.arc_access_count += 1
            direct = matrix[prev][nxt]
            phi += direct
            slot = slots[gap]
            if slot is not None:
                if isinstance(slot, tuple):
                    u, w = slot
                    if budget is not None:
                        budget.arc_access_count += 3
                    path = matrix[prev][u] + matrix[u][w] + matrix[w][nxt]
                else:
                    if budget is not None:
                        budget.arc_access_count += 2
                    path = matrix[prev][slot] + matrix[slot][nxt]
                detour += path - direct
            prev = nxt
    return phi + detour, detour, phi


def evaluate_solution(plan, charging, oracle) -> CompleteSolution:
    routing = plan if isinstance(plan, RoutingPlan) else RoutingPlan.from_lists(plan)
    charge = charging if isinstance(charging, ChargingPlan) \
        else ChargingPlan(tuple(tuple(s) for s in charging))
    f_total, f_detour, phi = total_cost(routing, charge, oracle)
    return CompleteSolution(routing, charge, f_total, f_detour, phi)


def all_nil_charging(plan: RoutingPlan | list) -> ChargingPlan:
    routes = plan.routes if isinstance(plan, RoutingPlan) else plan
    return ChargingPlan(tuple(tuple([None] * (len(r) + 1)) for r in routes))


# ---------------------------------------------------------------------------
# Solution text format: one comma-separated expanded route per line,
# then "COST <F>" with F rounded to 2 decimals.
# ---------------------------------------------------------------------------

def format_solution(sol: CompleteSolution, header_lines=()) -> str:
    lines = [f"# {h}" for h in header_lines]
    for route, slots in zip(sol.routing.routes, sol.charging.slots):
        if not route:
            continue
        expanded = expand_route(route, slots)
        lines.append(",".join(str(n) for n in expanded))
    lines.append(f"COST {sol.total_cost:.2f}")
    return "\n".join(lines) + "\n"


def parse_solution_file(text: str) -> tuple[list[list[int]], float | None]:
    """Read expanded routes and the reported cost from solution text."""
    expanded_routes: list[list[int]] = []
    reported = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.upper().startswith("COST"):
            reported = float(line.split()[1])
            continue
        try:
            nodes = [int(tok) for tok in line.split(",")]
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad route line {line!r}") from exc
        if len(nodes) < 2 or nodes[0] != 0 or nodes[-1] != 0:
            raise ValueError(f"line {lineno}: route must start and end at depot 0")
        expanded_routes.append(nodes)
    return expanded_routes, reported


def split_expanded_route(expanded, inst: InstanceSpec) -> tuple[list[int], list[Slot]]:
    """Recover (customers, gap slots) from an expanded route."""
    route: list[int] = []
    slots: list[Slot] = []
    pending: list[int] = []
    for node in expanded:
        if not 0 <= node < inst.pz:
            raise ValueError(f"node id {node} outside this instance "
                             f"(0..{inst.pz - 1})")
    for node in expanded[1:]:
        if node != 0 and inst.is_station(node):
            pending.append(node)
            continue
        if len(pending) > 2:
            raise ValueError(f"more than two consecutive stations: {pending}")
        slots.append(None if not pending else
                     pending[0] if len(pending) == 1 else (pending[0], pending[1]))
        pending = []
        if node != 0:
            route.append(node)
    return route, slots
