"""Deterministic generators for synthetic road networks and delivery scenarios."""
from __future__ import annotations

import math
import random

from .domain import Scenario
from .network import RoadNetwork, load_network

BASE_LON = 23.72  # roughly central Athens; only cosmetic
BASE_LAT = 37.98
GRID_SPACING_M = 200.0

# Degrees per meter at the base latitude.
_DEG_LAT_PER_M = 1.0 / 111_320.0


def _deg_lon_per_m(lat: float) -> float:
    return 1.0 / (111_320.0 * math.cos(math.radians(lat)))


def grid_network_document(
    side: int,
    spacing_m: float = GRID_SPACING_M,
    rush_hour: bool = True,
    base_speed: float = 10.0,
) -> dict:
    """side x side grid with bidirectional edges and a simple daily speed profile."""
    nodes = []
    for r in range(side):
        for c in range(side):
            nodes.append(
                {
                    "id": f"n{r}_{c}",
                    "lon": BASE_LON + c * spacing_m * _deg_lon_per_m(BASE_LAT),
                    "lat": BASE_LAT + r * spacing_m * _DEG_LAT_PER_M,
                }
            )
    speeds = [base_speed] * 24
    if rush_hour:
        for h in (8, 9, 17, 18):
            speeds[h] = base_speed * 0.6
    profiles = [
        {"id": "urban", "bucket_seconds": 3600, "speeds": speeds},
    ]
    edges = []
    eid = 0

    def add_edge(a, b):
        nonlocal eid
        edges.append(
            {
                "id": f"e{eid}",
                "from_node": a,
                "to_node": b,
                "length": spacing_m,
                "speed_profile_id": "urban",
            }
        )
        eid += 1

    for r in range(side):
        for c in range(side):
            if c + 1 < side:
                add_edge(f"n{r}_{c}", f"n{r}_{c+1}")
                add_edge(f"n{r}_{c+1}", f"n{r}_{c}")
            if r + 1 < side:
                add_edge(f"n{r}_{c}", f"n{r+1}_{c}")
                add_edge(f"n{r+1}_{c}", f"n{r}_{c}")
    return {"nodes": nodes, "edges": edges, "speed_profiles": profiles}


def grid_network(side: int, **kwargs) -> RoadNetwork:
    return load_network(grid_network_document(side, **kwargs))


def random_scenario_document(
    network: RoadNetwork,
    n_orders: int,
    n_vehicles: int,
    seed: int,
    horizon: float = 6 * 3600.0,
    capacity: int = 50,
    max_demand: int = 8,
    window_min: float = 3600.0,
    depot_node: str | None = None,
    fixed_cost: float = 100.0,
    cost_per_meter: float = 0.01,
) -> dict:
    """Random but reproducible orders + fleet over an existing network."""
    rng = random.Random(seed)
    node_ids = sorted(network.nodes)
    depot = depot_node or node_ids[0]
    orders = []
    for i in range(n_orders):
        loc = rng.choice(node_ids)
        earliest = rng.uniform(0, horizon * 0.5)
        width = rng.uniform(window_min, horizon * 0.5)
        orders.append(
            {
                "id": f"o{i:03d}",
                "customer_name": f"customer-{i}",
                "demand": rng.randint(1, max_demand),
                "location": loc,
                "time_window": {"earliest": round(earliest), "latest": round(earliest + width)},
                "service_duration": rng.choice([120, 180, 300]),
            }
        )
    vehicles = []
    drivers = []
    for i in range(n_vehicles):
        vid = f"v{i:02d}"
        vehicles.append(
            {
                "id": vid,
                "depot_id": "d0",
                "capacity": capacity,
                "fixed_cost": fixed_cost,
                "cost_per_meter": cost_per_meter,
            }
        )
        drivers.append(
            {
                "id": f"drv{i:02d}",
                "name": f"driver-{i}",
                "shift": {"earliest": 0, "latest": round(horizon * 2)},
                "assigned_vehicle_id": vid,
            }
        )
    return {
        "orders": orders,
        "vehicles": vehicles,
        "drivers": drivers,
        "depots": [{"id": "d0", "location": depot}],
    }


def random_scenario(network: RoadNetwork, n_orders: int, n_vehicles: int, seed: int, **kwargs) -> Scenario:
    return Scenario.from_dict(random_scenario_document(network, n_orders, n_vehicles, seed, **kwargs))


def random_network_document(n_nodes: int, seed: int, extra_edges: int = 0, base_speed: float = 10.0) -> dict:
    """Random strongly connected sparse graph: a cycle plus random chords."""
    rng = random.Random(seed)
    nodes = [
        {
            "id": f"n{i}",
            "lon": BASE_LON + rng.uniform(0, 0.02),
            "lat": BASE_LAT + rng.uniform(0, 0.02),
        }
        for i in range(n_nodes)
    ]
    profiles = [
        {
            "id": f"p{k}",
            "bucket_seconds": 3600,
            "speeds": [max(2.0, base_speed + rng.uniform(-4, 4)) for _ in range(24)],
        }
        for k in range(3)
    ]
    edges = []
    eid = 0

    def add(a, b):
        nonlocal eid
        edges.append(
            {
                "id": f"e{eid}",
                "from_node": f"n{a}",
                "to_node": f"n{b}",
                "length": rng.uniform(100, 1500),
                "speed_profile_id": f"p{rng.randrange(3)}",
            }
        )
        eid += 1

    for i in range(n_nodes):
        add(i, (i + 1) % n_nodes)
    for _ in range(extra_edges):
        a, b = rng.randrange(n_nodes), rng.randrange(n_nodes)
        if a != b:
            add(a, b)
    return {"nodes": nodes, "edges": edges, "speed_profiles": profiles}
