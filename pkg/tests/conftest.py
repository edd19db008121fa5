import pytest

from ecvrp.instance import DistanceOracle, EvaluationBudget, InstanceSpec


def make_instance(customers, stations, *, demands=None, capacity=100.0,
                  battery=1e9, rate=1.0, fleet=3, name="fixture"):
    """Build an InstanceSpec from depot-relative coordinates.

    customers/stations are (x, y) lists; the depot sits at the origin.
    A huge default battery makes charging irrelevant unless a test says
    otherwise.
    """
    if demands is None:
        demands = [1.0] * len(customers)
    coords = [(0.0, 0.0)] + list(customers) + list(stations)
    return InstanceSpec(
        name=name,
        coords=tuple((float(x), float(y)) for x, y in coords),
        demands=tuple([0.0] + [float(d) for d in demands]
                      + [0.0] * len(stations)),
        num_customers=len(customers),
        num_stations=len(stations),
        cargo_capacity=float(capacity),
        battery_capacity=float(battery),
        consumption_rate=float(rate),
        fleet_size=fleet,
    )


@pytest.fixture
def quad_instance():
    """Four customers with hand-checkable arc lengths, one far-off station."""
    return make_instance(
        customers=[(3, 4), (3, 10), (-6, 8), (-6, 0)],
        stations=[(50, 50)],
        demands=[2, 3, 1, 2],
        capacity=5,
        fleet=3,
    )


@pytest.fixture
def metered(quad_instance):
    budget = EvaluationBudget(max_arc_accesses=10**9)
    return DistanceOracle.for_instance(quad_instance, budget), budget
