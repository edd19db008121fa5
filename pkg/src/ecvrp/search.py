"""Bilevel late-acceptance hill climbing over routing plans.

A run has three phases.  Initialization builds a random giant tour,
splits it into capacity-feasible routes and drives them to a local
optimum with greedy descent.  Exploration then walks the routing space:
each iteration draws one operator, tries up to max_attempts random
targets, and accepts the first candidate that beats either the current
surrogate cost or the cost recorded a fixed number of accepted-move
cycles ago (the history list).  The cheap charging solver is invoked
only when the current surrogate comes within the follower threshold of
the best surrogate seen, and the incumbent keeps the best full cost
found anywhere.  When progress stalls the run restarts from a fresh
tour, keeping the incumbent.  On termination the exhaustive charging
solver polishes the incumbent.

Everything stochastic draws from one seeded generator in program order,
so a (instance, params, budget) triple fully determines the outcome.
"""

from __future__ import annotations

import math
import random
from bisect import insort
from dataclasses import dataclass, field

from .charging import BudgetExhausted, build_best_station_table, solve_exhaustive, solve_se
from .instance import DistanceOracle, EvaluationBudget, InstanceSpec
from .solution import ChargingPlan, CompleteSolution, RoutingPlan

NEG_INF = float("-inf")

# floating-point guard: a candidate only counts as a strict improvement when
# it beats the current surrogate by this margin, otherwise exact-tie moves
# (route reversals and the like) oscillate on rounding noise forever
IMPROVE_EPS = 1e-9

# operator ids; m1..m7 drive descent, m8 additionally explores route counts
M1, M2, M3, M4, M5, M6, M7, M8 = range(8)
OPERATOR_CODES = ("m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8")


class SearchError(RuntimeError):
    pass


class SplitInfeasible(SearchError):
    pass


class InstanceInfeasible(SearchError):
    pass


class IncumbentInfeasible(SearchError):
    """No battery-feasible solution was found in the whole run."""


@dataclass(frozen=True)
class SearchParams:
    history_length: int = 5723
    max_attempts: int = 60
    follower_threshold: float = 1.01
    alpha_lb: float = 0.98
    alpha_ub: float = 1.02
    seed: int = 1

    def __post_init__(self):
        if self.history_length < 1 or self.max_attempts < 1:
            raise ValueError("history length and attempt cap must be >= 1")
        if self.follower_threshold < 1.0:
            raise ValueError("follower threshold must be >= 1")
        if not (0.0 < self.alpha_lb <= 1.0 <= self.alpha_ub):
            raise ValueError("noise bounds must straddle 1.0")


@dataclass(frozen=True)
class AblationToggles:
    no_greedy_descent: bool = False
    no_final_refinement: bool = False
    gamma_zero: bool = False
    no_m8: bool = False


NO_TOGGLES = AblationToggles()


@dataclass(frozen=True)
class TraceRecord:
    arc_accesses: int
    iteration: int
    phi_current: float
    phi_best: float
    f_best: float | None
    event: str


@dataclass
class SearchTrace:
    """Chronological run log; arc_accesses is monotone over records."""

    records: list[TraceRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["arc_accesses,iteration,phi_current,phi_best,F_best,event"]
        for r in self.records:
            f_best = "" if r.f_best is None else repr(r.f_best)
            lines.append(f"{r.arc_accesses},{r.iteration},{r.phi_current!r},"
                         f"{r.phi_best!r},{f_best},{r.event}")
        return "\n".join(lines) + "\n"

    def events(self, name: str) -> list[TraceRecord]:
        return [r for r in self.records if r.event == name]


# ---------------------------------------------------------------------------
# Giant-tour split
# ---------------------------------------------------------------------------

def split_giant_tour(perm, inst: InstanceSpec, oracle: DistanceOracle):
    """Cut a customer permutation into at most fleet_size contiguous routes
    of minimum total surrogate cost (shortest path over segment ends).

    Raises SplitInfeasible when no capacity-feasible cut into fleet_size
    segments exists.  Charges the budget for the depot legs and the
    consecutive arcs of the tour, read once each.
    """
    n = len(perm)
    fleet = inst.fleet_size
    matrix = oracle.matrix
    budget = oracle.budget
    if budget is not None:
        budget.arc_access_count += 2 * n - 1 if n else 0

    row0 = matrix[0]
    depot_leg = [row0[c] for c in perm]
    walk = [0.0] * n  # walk[k]: tour length from perm[0] to perm[k]
    for k in range(1, n):
        walk[k] = walk[k - 1] + matrix[perm[k - 1]][perm[k]]

    demands = inst.demands
    cap = inst.cargo_capacity

    inf = math.inf
    prev_row = [inf] * (n + 1)
    prev_row[0] = 0.0
    pred: list[list[int]] = []
    best_cost = inf
    best_k = -1
    for k in range(1, fleet + 1):
        cur_row = [inf] * (n + 1)
        cur_pred = [-1] * (n + 1)
        for i in range(n):
            base = prev_row[i]
            if base == inf:
                continue
            load = 0.0
            j = i + 1
            while j <= n:
                load += demands[perm[j - 1]]
                if load > cap:
                    break
                cost = base + depot_leg[i] + (walk[j - 1] - walk[i]) \
                    + depot_leg[j - 1]
                if cost < cur_row[j]:
                    cur_row[j] = cost
                    cur_pred[j] = i
                j += 1
        pred.append(cur_pred)
        prev_row = cur_row
        if cur_row[n] < best_cost:
            best_cost = cur_row[n]
            best_k = k
    if best_k < 0:
        raise SplitInfeasible(
            f"no capacity-feasible split into <= {fleet} routes")

    cuts = [n]
    j = n
    for k in range(best_k - 1, -1, -1):
        j = pred[k][j]
        cuts.append(j)
    cuts.reverse()
    routes = [list(perm[cuts[t]:cuts[t + 1]]) for t in range(best_k)]
    routes.extend([] for _ in range(fleet - best_k))
    return routes


def first_fit_split(perm, inst: InstanceSpec):
    """Greedy fallback segmentation; raises InstanceInfeasible beyond fleet."""
    routes = [[]]
    load = 0.0
    for c in perm:
        if load + inst.demands[c] > inst.cargo_capacity:
            routes.append([])
            load = 0.0
        routes[-1].append(c)
        load += inst.demands[c]
    if len(routes) > inst.fleet_size:
        raise InstanceInfeasible(
            f"even first-fit needs {len(routes)} > {inst.fleet_size} vehicles")
    routes.extend([] for _ in range(inst.fleet_size - len(routes)))
    return routes


def split_initial(perm, inst: InstanceSpec, oracle: DistanceOracle) -> RoutingPlan:
    """Public split entry point; falls back to first-fit segmentation."""
    try:
        routes = split_giant_tour(perm, inst, oracle)
    except SplitInfeasible:
        routes = first_fit_split(perm, inst)
    return RoutingPlan.from_lists(routes)


# ---------------------------------------------------------------------------
# Search engine
# ---------------------------------------------------------------------------

@dataclass
class _Incumbent:
    routes: tuple
    slots: tuple
    total: float
    detour: float
    surrogate: float


class _Engine:
    """Mutable run state: routes, loads, tracked surrogate, counters."""

    def __init__(self, inst: InstanceSpec, params: SearchParams,
                 budget: EvaluationBudget, toggles: AblationToggles = NO_TOGGLES,
                 trace_level: str = "phase", hooks=None,
                 oracle: DistanceOracle | None = None):
        self.inst = inst
        self.params = params
        self.budget = budget
        self.toggles = toggles
        self.rng = random.Random(params.seed)
        self.oracle = oracle if oracle is not None \
            else DistanceOracle.for_instance(inst, budget)
        self.matrix = self.oracle.matrix
        self.demands = list(inst.demands)
        self.cap = inst.cargo_capacity
        self.arc_limit = budget.max_arc_accesses \
            if budget.max_arc_accesses is not None else math.inf
        self.wall_limited = budget.wall_clock_limit is not None
        self.trace = SearchTrace()
        self.trace_full = trace_level == "full"
        self.hooks = hooks or {}
        self.table = None           # built lazily, unmetered shared data
        self.gamma = 0.0 if toggles.gamma_zero else params.follower_threshold
        self.explore_ops = list(range(7)) if toggles.no_m8 else list(range(8))

        self.routes: list[list[int]] = [[] for _ in range(inst.fleet_size)]
        self.loads: list[float] = [0.0] * inst.fleet_size
        self.nonempty: list[int] = []
        self.empties: list[int] = list(range(inst.fleet_size))
        self.phi = 0.0
        self.iteration = 0
        self.restarts = 0
        self.incumbent: _Incumbent | None = None

    # -- state loading -------------------------------------------------

    def load_plan(self, routes) -> None:
        budget = self.budget
        matrix = self.matrix
        self.routes = [list(r) for r in routes]
        while len(self.routes) < self.inst.fleet_size:
            self.routes.append([])
        self.loads = [math.fsum(self.demands[c] for c in r) for r in self.routes]
        self.nonempty = [t for t, r in enumerate(self.routes) if r]
        self.empties = [t for t, r in enumerate(self.routes) if not r]
        phi = 0.0
        for r in self.routes:
            if not r:
                continue
            if budget is not None:
                budget.arc_access_count += len(r) + 1
            prev = 0
            for node in r:
                phi += matrix[prev][node]
                prev = node
            phi += matrix[prev][0]
        self.phi = phi

    def snapshot(self) -> list:
        return [list(r) for r in self.routes]

    # -- tracing ---------------------------------------------------------

    def _emit(self, event: str, phi_best: float = math.nan) -> None:
        inc = self.incumbent
        self.trace.records.append(TraceRecord(
            self.budget.arc_access_count, self.iteration, self.phi,
            phi_best, None if inc is None else inc.total, event))

    # -- candidate scans (shared by descent and exploration) -------------

    def _scan(self, op: int, t1: int, t2: int, pa: int, phi_vi: float) -> bool:
        """Try every candidate b for anchor (op, target, a) in deterministic
        order; apply and return True at the first acceptable one.

        Acceptance is phi_new < phi_vi or phi_new < phi; descent passes
        phi_vi = -inf so only strict improvements pass.  Every arc read is
        charged and the scan aborts when the meter runs out.
        """
        matrix = self.matrix
        budget = self.budget
        limit = self.arc_limit
        phi = self.phi
        phi_improve = phi - IMPROVE_EPS
        routes = self.routes
        demands = self.demands

        if op == M1:
            route = routes[t1]
            length = len(route)
            if length < 2:
                return False
            a = route[pa]
            prev_a = route[pa - 1] if pa else 0
            next_a = route[pa + 1] if pa + 1 < length else 0
            if budget.arc_access_count >= limit:
                return False
            budget.arc_access_count += 3
            row_a = matrix[a]
            removal = matrix[prev_a][next_a] - matrix[prev_a][a] - row_a[next_a]
            for pb in range(length):
                if pb == pa:
                    continue
                b = route[pb]
                # structural no-ops (reinserting a beside itself) are skipped:
                # their float-noise deltas could masquerade as improvements
                if pb != pa + 1:
                    left = route[pb - 1] if pb else 0
                    if left == a:
                        left = prev_a
                    if budget.arc_access_count >= limit:
                        return False
                    budget.arc_access_count += 3
                    delta = removal + matrix[left][a] + row_a[b] \
                        - matrix[left][b]
                    phi_new = phi + delta
                    if phi_new < phi_vi or phi_new < phi_improve:
                        self._apply_m1(t1, pa, pb, False, phi_new)
                        return True
                if pb != pa - 1:
                    right = route[pb + 1] if pb + 1 < length else 0
                    if right == a:
                        right = next_a
                    if budget.arc_access_count >= limit:
                        return False
                    budget.arc_access_count += 3
                    delta = removal + matrix[b][a] + row_a[right] \
                        - matrix[b][right]
                    phi_new = phi + delta
                    if phi_new < phi_vi or phi_new < phi_improve:
                        self._apply_m1(t1, pa, pb, True, phi_new)
                        return True
            return False

        if op == M2:
            r1 = routes[t1]
            r2 = routes[t2]
            a = r1[pa]
            if self.loads[t2] + demands[a] > self.cap:
                return False
            length1 = len(r1)
            length2 = len(r2)
            prev_a = r1[pa - 1] if pa else 0
            next_a = r1[pa + 1] if pa + 1 < length1 else 0
            if budget.arc_access_count >= limit:
                return False
            budget.arc_access_count += 3
            row_a = matrix[a]
            removal = matrix[prev_a][next_a] - matrix[prev_a][a] - row_a[next_a]
            for pb in range(length2):
                b = r2[pb]
                right = r2[pb + 1] if pb + 1 < length2 else 0
                if budget.arc_access_count >= limit:
                    return False
                budget.arc_access_count += 3
                delta = removal + matrix[b][a] + row_a[right] - matrix[b][right]
                phi_new = phi + delta
                if phi_new < phi_vi or phi_new < phi_improve:
                    self._apply_m2(t1, t2, pa, pb, phi_new)
                    return True
            return False

        if op == M3:
            route = routes[t1]
            length = len(route)
            if length < 2:
                return False
            a = route[pa]
            prev_a = route[pa - 1] if pa else 0
            next_a = route[pa + 1] if pa + 1 < length else 0
            row_a = matrix[a]
            for pb in range(length):
                if pb == pa:
                    continue
                b = route[pb]
                row_b = matrix[b]
                if budget.arc_access_count >= limit:
                    return False
                lo, hi = (pa, pb) if pa < pb else (pb, pa)
                if hi == lo + 1:
                    u, w = route[lo], route[hi]
                    prev_u = route[lo - 1] if lo else 0
                    next_w = route[hi + 1] if hi + 1 < length else 0
                    budget.arc_access_count += 4
                    delta = (matrix[prev_u][w] + matrix[u][next_w]
                             - matrix[prev_u][u] - matrix[w][next_w])
                else:
                    prev_b = route[pb - 1] if pb else 0
                    next_b = route[pb + 1] if pb + 1 < length else 0
                    budget.arc_access_count += 8
                    delta = (matrix[prev_a][b] + row_b[next_a]
                             + matrix[prev_b][a] + row_a[next_b]
                             - matrix[prev_a][a] - row_a[next_a]
                             - matrix[prev_b][b] - row_b[next_b])
                phi_new = phi + delta
                if phi_new < phi_vi or phi_new < phi_improve:
                    route[pa], route[pb] = route[pb], route[pa]
                    self.phi = phi_new
                    return True
            return False

        if op == M4:
            r1 = routes[t1]
            r2 = routes[t2]
            a = r1[pa]
            demand_a = demands[a]
            load1 = self.loads[t1]
            load2 = self.loads[t2]
            length1 = len(r1)
            length2 = len(r2)
            prev_a = r1[pa - 1] if pa else 0
            next_a = r1[pa + 1] if pa + 1 < length1 else 0
            row_a = matrix[a]
            for pb in range(length2):
                b = r2[pb]
                demand_b = demands[b]
                if load1 - demand_a + demand_b > self.cap or \
                        load2 - demand_b + demand_a > self.cap:
                    continue
                if budget.arc_access_count >= limit:
                    return False
                budget.arc_access_count += 8
                row_b = matrix[b]
                prev_b = r2[pb - 1] if pb else 0
                next_b = r2[pb + 1] if pb + 1 < length2 else 0
                delta = (matrix[prev_a][b] + row_b[next_a]
                         - matrix[prev_a][a] - row_a[next_a]
                         + matrix[prev_b][a] + row_a[next_b]
                         - matrix[prev_b][b] - row_b[next_b])
                phi_new = phi + delta
                if phi_new < phi_vi or phi_new < phi_improve:
                    r1[pa], r2[pb] = b, a
                    self.loads[t1] = load1 - demand_a + demand_b
                    self.loads[t2] = load2 - demand_b + demand_a
                    self.phi = phi_new
                    return True
            return False

        if op == M5:
            route = routes[t1]
            length = len(route)
            a = route[pa]
            if pa + 2 >= length:
                return False
            next_a = route[pa + 1]
            if budget.arc_access_count >= limit:
                return False
            budget.arc_access_count += 2
            row_a = matrix[a]
            row_an = matrix[next_a]
            d_a_an = row_a[next_a]
            for pb in range(pa + 2, length):
                b = route[pb]
                next_b = route[pb + 1] if pb + 1 < length else 0
                if budget.arc_access_count >= limit:
                    return False
                budget.arc_access_count += 3
                delta = (row_a[b] + row_an[next_b] - d_a_an
                         - matrix[b][next_b])
                phi_new = phi + delta
                if phi_new < phi_vi or phi_new < phi_improve:
                    routes[t1] = route[:pa + 1] + route[pa + 1:pb + 1][::-1] \
                        + route[pb + 1:]
                    self.phi = phi_new
                    return True
            return False

        if op == M6:
            r1 = routes[t1]
            r2 = routes[t2]
            a = r1[pa]
            length1 = len(r1)
            length2 = len(r2)
            next_a = r1[pa + 1] if pa + 1 < length1 else 0
            head1 = 0.0
            for k in range(pa + 1):
                head1 += demands[r1[k]]
            tail1 = self.loads[t1] - head1
            load2 = self.loads[t2]
            if budget.arc_access_count >= limit:
                return False
            budget.arc_access_count += 1
            row_a = matrix[a]
            row_an = matrix[next_a]
            d_a_an = row_a[next_a]
            head2 = 0.0
            for pb in range(length2):
                b = r2[pb]
                head2 += demands[b]
                if head1 + head2 > self.cap or tail1 + load2 - head2 > self.cap:
                    continue
                next_b = r2[pb + 1] if pb + 1 < length2 else 0
                if budget.arc_access_count >= limit:
                    return False
                budget.arc_access_count += 3
                delta = (row_a[b] + row_an[next_b] - d_a_an
                         - matrix[b][next_b])
                phi_new = phi + delta
                if phi_new < phi_vi or phi_new < phi_improve:
                    self._apply_m6(t1, t2, pa, pb, head1 + head2, phi_new)
                    return True
            return False

        if op == M7:
            r1 = routes[t1]
            r2 = routes[t2]
            a = r1[pa]
            length1 = len(r1)
            length2 = len(r2)
            next_a = r1[pa + 1] if pa + 1 < length1 else 0
            head1 = 0.0
            for k in range(pa + 1):
                head1 += demands[r1[k]]
            tail1 = self.loads[t1] - head1
            load2 = self.loads[t2]
            a_last = pa + 1 == length1
            if budget.arc_access_count >= limit:
                return False
            budget.arc_access_count += 1
            row_a = matrix[a]
            row_an = matrix[next_a]
            d_a_an = row_a[next_a]
            head2 = 0.0
            for pb in range(length2):
                b = r2[pb]
                head2 += demands[b]
                if a_last and pb + 1 == length2:
                    continue  # reconnecting two final arcs changes nothing
                if head1 + load2 - head2 > self.cap or head2 + tail1 > self.cap:
                    continue
                next_b = r2[pb + 1] if pb + 1 < length2 else 0
                if budget.arc_access_count >= limit:
                    return False
                budget.arc_access_count += 3
                delta = (row_a[next_b] + matrix[b][next_a] - d_a_an
                         - matrix[b][next_b])
                phi_new = phi + delta
                if phi_new < phi_vi or phi_new < phi_improve:
                    self._apply_m7(t1, t2, pa, pb, head1 + load2 - head2,
                                   phi_new)
                    return True
            return False

        # M8: move a to the first empty route slot
        if not self.empties:
            return False
        route = routes[t1]
        a = route[pa]
        if budget.arc_access_count >= limit:
            return False
        budget.arc_access_count += 4
        prev_a = route[pa - 1] if pa else 0
        next_a = route[pa + 1] if pa + 1 < len(route) else 0
        out_back = 2.0 * matrix[0][a]
        delta = matrix[prev_a][next_a] - matrix[prev_a][a] \
            - matrix[a][next_a] + out_back
        phi_new = phi + delta
        if phi_new < phi_vi or phi_new < phi_improve:
            self._apply_m8(t1, pa, out_back, phi_new)
            return True
        return False

    # -- apply helpers ----------------------------------------------------

    def _mark_empty(self, t: int) -> None:
        self.nonempty.remove(t)
        insort(self.empties, t)

    def _mark_used(self, t: int) -> None:
        self.empties.remove(t)
        insort(self.nonempty, t)

    def _apply_m1(self, t, pa, pb, after, phi_new):
        route = self.routes[t]
        a = route.pop(pa)
        pb_adj = pb - 1 if pa < pb else pb
        route.insert(pb_adj + 1 if after else pb_adj, a)
        self.phi = phi_new

    def _apply_m2(self, t1, t2, pa, pb, phi_new):
        a = self.routes[t1].pop(pa)
        self.routes[t2].insert(pb + 1, a)
        self.loads[t1] -= self.demands[a]
        self.loads[t2] += self.demands[a]
        self.phi = phi_new
        if not self.routes[t1]:
            self._mark_empty(t1)

    def _apply_m6(self, t1, t2, pa, pb, new_load1, phi_new):
        r1, r2 = self.routes[t1], self.routes[t2]
        total = self.loads[t1] + self.loads[t2]
        self.routes[t1] = r1[:pa + 1] + r2[:pb + 1][::-1]
        self.routes[t2] = r1[pa + 1:][::-1] + r2[pb + 1:]
        self.loads[t1] = new_load1
        self.loads[t2] = total - new_load1
        self.phi = phi_new
        if not self.routes[t2]:
            self._mark_empty(t2)

    def _apply_m7(self, t1, t2, pa, pb, new_load1, phi_new):
        r1, r2 = self.routes[t1], self.routes[t2]
        total = self.loads[t1] + self.loads[t2]
        self.routes[t1] = r1[:pa + 1] + r2[pb + 1:]
        self.routes[t2] = r2[:pb + 1] + r1[pa + 1:]
        self.loads[t1] = new_load1
        self.loads[t2] = total - new_load1
        self.phi = phi_new

    def _apply_m8(self, t1, pa, out_back, phi_new):
        dest = self.empties[0]
        a = self.routes[t1].pop(pa)
        self.routes[dest] = [a]
        self.loads[t1] -= self.demands[a]
        self.loads[dest] = self.demands[a]
        self.phi = phi_new
        self._mark_used(dest)
        if not self.routes[t1]:
            self._mark_empty(t1)

    # -- greedy descent ----------------------------------------------------

    def descend(self) -> None:
        """First-improvement descent over the seven partition-preserving
        operators, shuffled each outer pass, until no operator improves."""
        rng = self.rng
        ops = [M1, M2, M3, M4, M5, M6, M7]
        fleet = self.inst.fleet_size
        budget = self.budget
        limit = self.arc_limit
        while True:
            any_improved = False
            rng.shuffle(ops)
            for op in ops:
                if budget.arc_access_count >= limit:
                    return
                improved = False
                if op in (M1, M3, M5):
                    for t in range(fleet):
                        improved |= self._descend_target(op, t, -1)
                else:
                    for t1 in range(fleet):
                        for t2 in range(fleet):
                            if t1 != t2:
                                improved |= self._descend_target(op, t1, t2)
                any_improved |= improved
            if not any_improved or budget.arc_access_count >= limit:
                return

    def _descend_target(self, op, t1, t2) -> bool:
        """Rescan one target until no pair (a, b) improves it."""
        budget = self.budget
        limit = self.arc_limit
        improved = False
        while True:
            moved = False
            r1 = self.routes[t1]
            if not r1 or (t2 >= 0 and not self.routes[t2]):
                return improved
            for pa in range(len(r1)):
                if budget.arc_access_count >= limit:
                    return improved
                if self._scan(op, t1, t2, pa, NEG_INF):
                    moved = True
                    improved = True
                    break
            if not moved:
                return improved

    # -- neighborhood exploration ------------------------------------------

    def explore(self, phi_vi: float) -> bool:
        """One exploration call: draw an operator once, then up to
        max_attempts random targets; True when a candidate was accepted.

        Index draws use int(random() * n): one float per draw instead of
        the rejection sampling of randrange, still from the single seeded
        stream in program order.
        """
        draw = self.rng.random
        ops = self.explore_ops
        op = ops[int(draw() * len(ops))]
        budget = self.budget
        limit = self.arc_limit
        nonempty = self.nonempty
        inter = op == M2 or op == M4 or op == M6 or op == M7
        on_accept = self.hooks.get("on_accept")
        for _ in range(self.params.max_attempts):
            if budget.arc_access_count >= limit:
                return False
            count = len(nonempty)
            if inter:
                if count < 2:
                    continue
                i = int(draw() * count)
                j = int(draw() * (count - 1))
                if j >= i:
                    j += 1
                t1 = nonempty[i]
                t2 = nonempty[j]
            else:
                t1 = nonempty[int(draw() * count)]
                t2 = -1
            route = self.routes[t1]
            pa = int(draw() * len(route))
            phi_before = self.phi
            if self._scan(op, t1, t2, pa, phi_vi):
                if on_accept is not None:
                    on_accept(self.phi, phi_before, phi_vi)
                if self.trace_full:
                    self._emit("accept")
                return True
        return False

    # -- follower calls ------------------------------------------------------

    def _ensure_table(self):
        if self.table is None:
            self.table = build_best_station_table(self.inst, self.oracle)
        return self.table

    def _challenge_incumbent(self, phi_best: float) -> bool:
        """Run the cheap follower on the current plan and keep it if the
        full cost improves on the incumbent.  False when the meter died."""
        try:
            result = solve_se(self.routes, self.inst, self.oracle,
                              self._ensure_table(), enforce_budget=True)
        except BudgetExhausted:
            return False
        hook = self.hooks.get("on_follower")
        total = None
        if result.feasible:
            total = result.surrogate + result.detour_cost
            pair_hook = self.hooks.get("on_pair")
            if pair_hook is not None:
                # fresh surrogate, not the delta-tracked one: recorded pairs
                # must satisfy F >= phi exactly
                pair_hook(self.routes, result.surrogate, total)
            if self.incumbent is None or total < self.incumbent.total:
                self.incumbent = _Incumbent(
                    routes=tuple(tuple(r) for r in self.routes),
                    slots=result.plan.slots,
                    total=total,
                    detour=result.detour_cost,
                    surrogate=result.surrogate,
                )
                self._emit("incumbent", phi_best)
        if hook is not None:
            hook(self.phi, phi_best, result.feasible, total)
        return True

    # -- the full run ---------------------------------------------------------

    def run(self) -> tuple[CompleteSolution, SearchTrace]:
        inst = self.inst
        params = self.params
        rng = self.rng
        budget = self.budget
        history_len = params.history_length
        budget.restart_clock()

        customers = list(inst.customers)
        # split + plan loading charge about 3*pz arcs as blocks; entering a
        # cycle without that much headroom could overshoot the pz allowance
        init_margin = 3 * inst.pz
        first_cycle = True
        while True:
            if budget.arc_access_count + init_margin > self.arc_limit \
                    or budget.exceeded():
                break
            if not first_cycle:
                self.restarts += 1
                self._emit("restart")
            first_cycle = False

            # initialization: random tour, split, descent, first follower call.
            # A single unlucky permutation can be unsplittable even on a
            # feasible instance, so resample before giving up.
            routes = None
            for _ in range(64):
                perm = customers[:]
                rng.shuffle(perm)
                try:
                    routes = split_giant_tour(perm, inst, self.oracle)
                    break
                except SplitInfeasible:
                    try:
                        routes = first_fit_split(perm, inst)
                        break
                    except InstanceInfeasible:
                        continue
            if routes is None:
                raise InstanceInfeasible(
                    "no sampled permutation admits a capacity-feasible split "
                    f"into {inst.fleet_size} routes")
            self.load_plan(routes)
            self.iteration = 0
            self._emit("init", self.phi)
            if not self.toggles.no_greedy_descent:
                self.descend()
                self._emit("descent_done", self.phi)
            if budget.arc_access_count >= self.arc_limit:
                break
            self._challenge_incumbent(self.phi)

            phi_best = self.phi
            idle = 0
            accepted = history_len          # primes the first ratio at 1.0
            success_ratio = 1.0
            history = [phi_best * rng.uniform(params.alpha_lb, params.alpha_ub)
                       for _ in range(history_len)]
            slot = history_len - 1
            iteration = 0

            while True:
                phi_before = self.phi
                moved = self.explore(history[slot])
                if self.phi < phi_before:
                    idle = 0
                    if self.phi < phi_best:
                        phi_best = self.phi
                else:
                    idle += 1

                slot = iteration % history_len
                if slot == 0:
                    success_ratio = accepted / history_len
                    accepted = 0
                if moved:
                    accepted += 1
                    if self.phi < history[slot]:
                        history[slot] = self.phi
                    if self.phi < self.gamma * phi_best:
                        if self.trace_full:
                            self._emit("follower_hit", phi_best)
                        if not self._challenge_incumbent(phi_best):
                            break  # meter died inside the follower

                iteration += 1
                self.iteration = iteration
                converged = (iteration >= 100_000 and idle >= 0.02 * iteration) \
                    or success_ratio <= 0.001
                out_of_budget = budget.arc_access_count >= self.arc_limit or (
                    self.wall_limited and iteration & 1023 == 0
                    and budget.exceeded())
                if converged or out_of_budget:
                    if converged and not out_of_budget:
                        self._emit("converged", phi_best)
                    break

            if budget.arc_access_count >= self.arc_limit or budget.exceeded():
                break

        # final refinement of the incumbent with the exhaustive follower
        if self.incumbent is None:
            raise IncumbentInfeasible(
                "no battery-feasible solution found within the budget")
        inc = self.incumbent
        if not self.toggles.no_final_refinement:
            refined = solve_exhaustive(inc.routes, inst, self.oracle.unmetered())
            if refined.feasible:
                total = refined.surrogate + refined.detour_cost
                if total < inc.total:
                    inc = _Incumbent(inc.routes, refined.plan.slots, total,
                                     refined.detour_cost, refined.surrogate)
                    self.incumbent = inc
            self._emit("refined", inc.surrogate)

        solution = CompleteSolution(
            routing=RoutingPlan(inc.routes),
            charging=ChargingPlan(inc.slots),
            total_cost=inc.total,
            detour_cost=inc.detour,
            surrogate=inc.surrogate,
        )
        return solution, self.trace


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------

def run_blahc(inst: InstanceSpec, params: SearchParams,
              budget: EvaluationBudget, *, trace_level: str = "phase",
              hooks=None) -> tuple[CompleteSolution, SearchTrace]:
    """Run the full search under the given budget and return the incumbent
    plus the run trace.  Deterministic in (inst, params, budget limits)."""
    engine = _Engine(inst, params, budget, NO_TOGGLES, trace_level, hooks)
    return engine.run()


def run_ablation(inst: InstanceSpec, params: SearchParams,
                 budget: EvaluationBudget, toggles: AblationToggles, *,
                 trace_level: str = "phase", hooks=None
                 ) -> tuple[CompleteSolution, SearchTrace]:
    """run_blahc with components disabled; all-off toggles reproduce
    run_blahc exactly, including the trace."""
    engine = _Engine(inst, params, budget, toggles, trace_level, hooks)
    return engine.run()


def greedy_descent(plan, inst: InstanceSpec, oracle: DistanceOracle,
                   rng: random.Random) -> RoutingPlan:
    """Drive a capacity-feasible plan to a local optimum of the seven
    partition-preserving operators under the surrogate cost."""
    budget = oracle.budget if oracle.budget is not None else EvaluationBudget()
    engine = _Engine(inst, SearchParams(), budget, oracle=oracle)
    engine.rng = rng
    engine.load_plan(plan.routes if isinstance(plan, RoutingPlan) else plan)
    engine.descend()
    return RoutingPlan.from_lists(engine.routes)


def neighborhood_explore(plan, phi_vi: float, max_attempts: int,
                         inst: InstanceSpec, oracle: DistanceOracle,
                         rng: random.Random):
    """One exploration step from plan; returns (new plan, accepted flag)."""
    budget = oracle.budget if oracle.budget is not None else EvaluationBudget()
    engine = _Engine(inst, SearchParams(max_attempts=max_attempts), budget,
                     oracle=oracle)
    engine.rng = rng
    engine.load_plan(plan.routes if isinstance(plan, RoutingPlan) else plan)
    moved = engine.explore(phi_vi)
    return RoutingPlan.from_lists(engine.routes), moved
