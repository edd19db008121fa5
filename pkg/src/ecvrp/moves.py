"""The eight route-editing operators and their constant-arc delta evaluation.

Operators are pure partition transformers: they never touch demands or
feasibility, the caller filters capacity.  All of them take a target (a
route index, or an ordered pair of route indices), a customer a inside
the target and a position descriptor b whose meaning depends on the
operator:

  m1  relocate a within its route, before or after customer b
  m2  remove a, insert it after customer b of another route
  m3  swap a and b inside one route
  m4  swap a and b across two routes
  m5  reverse the segment between a and b (intra-route two-opt)
  m6  cut after a and after b, reconnect a-b (tails exchanged, reversed)
  m7  cut after a and after b, reconnect a-beta and b-alpha (tails kept)
  m8  remove a, seed an empty route with it

b is a customer id for m2..m7, a (customer, "before"|"after") pair for
m1, and an empty-route index for m8.  Only m8 can raise the number of
non-empty routes.

Delta formulas read exactly the arcs broken and created; every read is
charged to the oracle budget.
"""

from __future__ import annotations

from enum import Enum

from .instance import DistanceOracle
from .solution import RoutingPlan


class InvalidTarget(ValueError):
    pass


class NoEmptyRoute(ValueError):
    pass


class Move(Enum):
    RELOCATE_WITHIN = "m1"
    RELOCATE_ACROSS = "m2"
    SWAP_WITHIN = "m3"
    SWAP_ACROSS = "m4"
    REVERSE_SEGMENT = "m5"
    CROSS_REVERSED = "m6"
    CROSS_STRAIGHT = "m7"
    SEED_EMPTY_ROUTE = "m8"

    @property
    def classification(self) -> str:
        if self in INTRA_ROUTE:
            return "intra-route"
        if self is Move.SEED_EMPTY_ROUTE:
            return "inter-route-empty"
        return "inter-route"


INTRA_ROUTE = (Move.RELOCATE_WITHIN, Move.SWAP_WITHIN, Move.REVERSE_SEGMENT)
INTER_ROUTE = (Move.RELOCATE_ACROSS, Move.SWAP_ACROSS,
               Move.CROSS_REVERSED, Move.CROSS_STRAIGHT)
DESCENT_OPERATORS = (Move.RELOCATE_WITHIN, Move.RELOCATE_ACROSS,
                     Move.SWAP_WITHIN, Move.SWAP_ACROSS, Move.REVERSE_SEGMENT,
                     Move.CROSS_REVERSED, Move.CROSS_STRAIGHT)
ALL_OPERATORS = DESCENT_OPERATORS + (Move.SEED_EMPTY_ROUTE,)


def _neighbors(route, pos):
    prev = route[pos - 1] if pos > 0 else 0
    nxt = route[pos + 1] if pos + 1 < len(route) else 0
    return prev, nxt


# --- delta primitives (shared by the public API and the search engine) ----
# Each returns (signed phi change, number of arc reads performed).

def removal_delta(matrix, route, pa):
    a = route[pa]
    prev, nxt = _neighbors(route, pa)
    return matrix[prev][nxt] - matrix[prev][a] - matrix[a][nxt], 3


def insertion_delta(matrix, a, left, right):
    return matrix[left][a] + matrix[a][right] - matrix[left][right], 3


def delta_relocate_within(matrix, route, pa, pb, after):
    a = route[pa]
    rem, r1 = removal_delta(matrix, route, pa)
    prev_a, next_a = _neighbors(route, pa)
    if after:
        left = route[pb]
        right = route[pb + 1] if pb + 1 < len(route) else 0
        if right == a:
            right = next_a
    else:
        right = route[pb]
        left = route[pb - 1] if pb > 0 else 0
        if left == a:
            left = prev_a
    ins, r2 = insertion_delta(matrix, a, left, right)
    return rem + ins, r1 + r2


def delta_swap_within(matrix, route, pa, pb):
    if pa > pb:
        pa, pb = pb, pa
    a, b = route[pa], route[pb]
    prev_a, _ = _neighbors(route, pa)
    _, next_b = _neighbors(route, pb)
    if pb == pa + 1:
        return (matrix[prev_a][b] + matrix[a][next_b]
                - matrix[prev_a][a] - matrix[b][next_b]), 4
    next_a = route[pa + 1]
    prev_b = route[pb - 1]
    return (matrix[prev_a][b] + matrix[b][next_a]
            + matrix[prev_b][a] + matrix[a][next_b]
            - matrix[prev_a][a] - matrix[a][next_a]
            - matrix[prev_b][b] - matrix[b][next_b]), 8


def delta_swap_across_parts(matrix, r1, pa, r2, pb):
    a, b = r1[pa], r2[pb]
    prev_a, next_a = _neighbors(r1, pa)
    prev_b, next_b = _neighbors(r2, pb)
    d1 = (matrix[prev_a][b] + matrix[b][next_a]
          - matrix[prev_a][a] - matrix[a][next_a])
    d2 = (matrix[prev_b][a] + matrix[a][next_b]
          - matrix[prev_b][b] - matrix[b][next_b])
    return d1, d2, 8


def delta_reverse_segment(matrix, route, pa, pb):
    a, b = route[pa], route[pb]
    next_a = route[pa + 1]
    next_b = route[pb + 1] if pb + 1 < len(route) else 0
    return (matrix[a][b] + matrix[next_a][next_b]
            - matrix[a][next_a] - matrix[b][next_b]), 4


def delta_cross_reversed(matrix, r1, pa, r2, pb):
    a, b = r1[pa], r2[pb]
    next_a = r1[pa + 1] if pa + 1 < len(r1) else 0
    next_b = r2[pb + 1] if pb + 1 < len(r2) else 0
    return (matrix[a][b] + matrix[next_a][next_b]
            - matrix[a][next_a] - matrix[b][next_b]), 4


def delta_cross_straight(matrix, r1, pa, r2, pb):
    a, b = r1[pa], r2[pb]
    next_a = r1[pa + 1] if pa + 1 < len(r1) else 0
    next_b = r2[pb + 1] if pb + 1 < len(r2) else 0
    return (matrix[a][next_b] + matrix[b][next_a]
            - matrix[a][next_a] - matrix[b][next_b]), 4


def delta_seed_empty(matrix, route, pa):
    a = route[pa]
    rem, reads = removal_delta(matrix, route, pa)
    return rem + 2.0 * matrix[0][a], reads + 1


# --- pure structural application ------------------------------------------

def relocate_within(route, pa, pb, after):
    out = list(route)
    a = out.pop(pa)
    pb_adj = pb - 1 if pa < pb else pb
    out.insert(pb_adj + 1 if after else pb_adj, a)
    return out


def reverse_segment(route, pa, pb):
    return list(route[:pa + 1]) + list(route[pa + 1:pb + 1])[::-1] \
        + list(route[pb + 1:])


def cross_reversed(r1, pa, r2, pb):
    new1 = list(r1[:pa + 1]) + list(r2[:pb + 1])[::-1]
    new2 = list(r1[pa + 1:])[::-1] + list(r2[pb + 1:])
    return new1, new2


def cross_straight(r1, pa, r2, pb):
    return list(r1[:pa + 1]) + list(r2[pb + 1:]), \
        list(r2[:pb + 1]) + list(r1[pa + 1:])


# --- public operator API ----------------------------------------------------

def _as_lists(plan):
    routes = plan.routes if isinstance(plan, RoutingPlan) else plan
    return [list(r) for r in routes]


def _locate(route, node, what):
    try:
        return route.index(node)
    except ValueError:
        raise InvalidTarget(f"{what} {node} is not on the target route") from None


def _target_pair(target):
    if not (isinstance(target, tuple) and len(target) == 2):
        raise InvalidTarget("inter-route operators need an ordered route pair")
    if target[0] == target[1]:
        raise InvalidTarget("route pair must name two distinct routes")
    return target


def _target_single(target):
    if isinstance(target, tuple):
        raise InvalidTarget("intra-route operators take a single route index")
    return target


def apply_move(op: Move, plan, target, a, b):
    """Return the neighbouring plan op(plan, target, a, b); plan is unchanged.

    The customer partition is preserved for every operator; capacity may be
    violated and is the caller's concern.  Raises InvalidTarget when the
    arguments do not fit the operator's classification and NoEmptyRoute for
    m8 on a plan whose vehicles are all in use.
    """
    routes = _as_lists(plan)

    if op is Move.RELOCATE_WITHIN:
        t = _target_single(target)
        route = routes[t]
        b_node, side = b
        if side not in ("before", "after"):
            raise InvalidTarget(f"m1 needs (customer, 'before'|'after'), got {b!r}")
        pa, pb = _locate(route, a, "customer"), _locate(route, b_node, "customer")
        if pa == pb:
            raise InvalidTarget("a and b must differ")
        routes[t] = relocate_within(route, pa, pb, side == "after")

    elif op is Move.SWAP_WITHIN:
        t = _target_single(target)
        route = routes[t]
        pa, pb = _locate(route, a, "customer"), _locate(route, b, "customer")
        if pa == pb:
            raise InvalidTarget("a and b must differ")
        route[pa], route[pb] = route[pb], route[pa]

    elif op is Move.REVERSE_SEGMENT:
        t = _target_single(target)
        route = routes[t]
        pa, pb = _locate(route, a, "customer"), _locate(route, b, "customer")
        if pb <= pa:
            raise InvalidTarget("segment end b must come after a")
        routes[t] = reverse_segment(route, pa, pb)

    elif op is Move.RELOCATE_ACROSS:
        t1, t2 = _target_pair(target)
        pa = _locate(routes[t1], a, "customer")
        pb = _locate(routes[t2], b, "customer")
        node = routes[t1].pop(pa)
        routes[t2].insert(pb + 1, node)

    elif op is Move.SWAP_ACROSS:
        t1, t2 = _target_pair(target)
        pa = _locate(routes[t1], a, "customer")
        pb = _locate(routes[t2], b, "customer")
        routes[t1][pa], routes[t2][pb] = routes[t2][pb], routes[t1][pa]

    elif op is Move.CROSS_REVERSED:
        t1, t2 = _target_pair(target)
        pa = _locate(routes[t1], a, "customer")
        pb = _locate(routes[t2], b, "customer")
        routes[t1], routes[t2] = cross_reversed(routes[t1], pa, routes[t2], pb)

    elif op is Move.CROSS_STRAIGHT:
        t1, t2 = _target_pair(target)
        pa = _locate(routes[t1], a, "customer")
        pb = _locate(routes[t2], b, "customer")
        routes[t1], routes[t2] = cross_straight(routes[t1], pa, routes[t2], pb)

    elif op is Move.SEED_EMPTY_ROUTE:
        t = _target_single(target)
        if not any(not r for r in routes):
            raise NoEmptyRoute("every vehicle already serves customers")
        if not isinstance(b, int) or not 0 <= b < len(routes):
            raise InvalidTarget(f"m8 destination must be a route index, got {b!r}")
        if routes[b]:
            raise InvalidTarget(f"destination route {b} is not empty")
        pa = _locate(routes[t], a, "customer")
        node = routes[t].pop(pa)
        routes[b] = [node]

    else:  # pragma: no cover
        raise InvalidTarget(f"unknown operator {op!r}")

    if isinstance(plan, RoutingPlan):
        return RoutingPlan.from_lists(routes)
    return routes


def delta_phi(op: Move, plan, target, a, b, oracle: DistanceOracle) -> float:
    """Surrogate-cost change of apply_move, from the broken and created arcs
    only.  Charges the budget for exactly the arcs it reads."""
    routes = plan.routes if isinstance(plan, RoutingPlan) else plan
    matrix = oracle.matrix

    if op is Move.RELOCATE_WITHIN:
        t = _target_single(target)
        route = routes[t]
        b_node, side = b
        delta, reads = delta_relocate_within(
            matrix, route, _locate(list(route), a, "customer"),
            _locate(list(route), b_node, "customer"), side == "after")
    elif op is Move.SWAP_WITHIN:
        route = routes[_target_single(target)]
        delta, reads = delta_swap_within(
            matrix, route, _locate(list(route), a, "customer"),
            _locate(list(route), b, "customer"))
    elif op is Move.REVERSE_SEGMENT:
        route = routes[_target_single(target)]
        pa = _locate(list(route), a, "customer")
        pb = _locate(list(route), b, "customer")
        if pb <= pa:
            raise InvalidTarget("segment end b must come after a")
        delta, reads = delta_reverse_segment(matrix, route, pa, pb)
    elif op is Move.RELOCATE_ACROSS:
        t1, t2 = _target_pair(target)
        r1, r2 = routes[t1], routes[t2]
        pa = _locate(list(r1), a, "customer")
        pb = _locate(list(r2), b, "customer")
        rem, n1 = removal_delta(matrix, r1, pa)
        nxt = r2[pb + 1] if pb + 1 < len(r2) else 0
        ins, n2 = insertion_delta(matrix, a, r2[pb], nxt)
        delta, reads = rem + ins, n1 + n2
    elif op is Move.SWAP_ACROSS:
        t1, t2 = _target_pair(target)
        d1, d2, reads = delta_swap_across_parts(
            matrix, routes[t1], _locate(list(routes[t1]), a, "customer"),
            routes[t2], _locate(list(routes[t2]), b, "customer"))
        delta = d1 + d2
    elif op is Move.CROSS_REVERSED:
        t1, t2 = _target_pair(target)
        delta, reads = delta_cross_reversed(
            matrix, routes[t1], _locate(list(routes[t1]), a, "customer"),
            routes[t2], _locate(list(routes[t2]), b, "customer"))
    elif op is Move.CROSS_STRAIGHT:
        t1, t2 = _target_pair(target)
        delta, reads = delta_cross_straight(
            matrix, routes[t1], _locate(list(routes[t1]), a, "customer"),
            routes[t2], _locate(list(routes[t2]), b, "customer"))
    elif op is Move.SEED_EMPTY_ROUTE:
        t = _target_single(target)
        route = routes[t]
        if not isinstance(b, int) or not 0 <= b < len(routes) or routes[b]:
            if not any(not r for r in routes):
                raise NoEmptyRoute("every vehicle already serves customers")
            raise InvalidTarget(f"m8 destination must be an empty route, got {b!r}")
        delta, reads = delta_seed_empty(
            matrix, route, _locate(list(route), a, "customer"))
    else:  # pragma: no cover
        raise InvalidTarget(f"unknown operator {op!r}")

    if oracle.budget is not None:
        oracle.budget.arc_access_count += reads
    return delta


def enumerate_positions(op: Move, plan, target, a) -> list:
    """Deterministically ordered candidate b values for op at (target, a):
    route-index/position ascending, preconditions filtered.  May be empty."""
    routes = plan.routes if isinstance(plan, RoutingPlan) else plan

    if op in (Move.RELOCATE_WITHIN, Move.SWAP_WITHIN, Move.REVERSE_SEGMENT):
        route = list(routes[_target_single(target)])
        pa = _locate(route, a, "customer")
        if op is Move.RELOCATE_WITHIN:
            out = []
            for pb, node in enumerate(route):
                if pb != pa:
                    out.append((node, "before"))
                    out.append((node, "after"))
            return out
        if op is Move.SWAP_WITHIN:
            return [node for pb, node in enumerate(route) if pb != pa]
        return list(route[pa + 2:])

    if op in (Move.RELOCATE_ACROSS, Move.SWAP_ACROSS,
              Move.CROSS_REVERSED, Move.CROSS_STRAIGHT):
        if isinstance(target, tuple):
            t1, t2 = _target_pair(target)
            partners = [t2]
        else:
            # single-route target: candidates span every other route,
            # route index ascending
            t1 = target
            partners = [t for t in range(len(routes))
                        if t != t1 and routes[t]]
        r1 = list(routes[t1])
        pa = _locate(r1, a, "customer")
        out = []
        for t2 in partners:
            r2 = list(routes[t2])
            if op is Move.CROSS_STRAIGHT and pa == len(r1) - 1 and r2:
                # reconnecting two final arcs reproduces the same plan
                out.extend(r2[:-1])
            else:
                out.extend(r2)
        return out

    if op is Move.SEED_EMPTY_ROUTE:
        _locate(list(routes[_target_single(target)]), a, "customer")
        return [idx for idx, r in enumerate(routes) if not r]

    raise InvalidTarget(f"unknown operator {op!r}")  # pragma: no cover
