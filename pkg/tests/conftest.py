"""Shared fixtures: small networks, scenarios and travel functions."""
import pytest

from urbanroute.fixtures import grid_network, random_scenario
from urbanroute.network import build_matrix, hybrid_travel_fn


def scenario_locations(scenario):
    locs = {o.location for o in scenario.orders.values()}
    locs |= {d.location for d in scenario.depots.values()}
    return sorted(locs)


def matrix_travel_fn(network, scenario, bucket_seconds=1800.0, horizon=43200.0):
    """Travel function backed by a precomputed matrix over scenario locations,
    falling back to exact shortest paths for other nodes."""
    buckets = [i * bucket_seconds for i in range(int(horizon // bucket_seconds))]
    matrix = build_matrix(network, scenario_locations(scenario), buckets)
    return hybrid_travel_fn(network, matrix)


@pytest.fixture
def small_net():
    return grid_network(4)


@pytest.fixture
def small_scenario(small_net):
    return random_scenario(small_net, 5, 2, seed=11)


@pytest.fixture
def small_travel_fn(small_net, small_scenario):
    return matrix_travel_fn(small_net, small_scenario)
