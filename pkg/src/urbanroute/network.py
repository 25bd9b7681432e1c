"""Time-dependent road graph: loading, shortest paths, matrices, GPS speed estimation.

Edges carry piecewise-constant speed profiles, cyclic over a 24h day, which
gives the FIFO (non-overtaking) property for free: departing later can never
yield an earlier arrival.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

DAY_SECONDS = 86400
EARTH_RADIUS_M = 6_371_000.0
DEFAULT_FREE_FLOW_SPEED = 13.9  # m/s, ~50 km/h urban


class NetworkError(Exception):
    pass


class DanglingEdge(NetworkError):
    def __init__(self, edge_id: str, node_id: str):
        self.edge_id = edge_id
        self.node_id = node_id
        super().__init__(f"edge {edge_id!r} references missing node {node_id!r}")


class NonPositiveLength(NetworkError):
    def __init__(self, edge_id: str):
        super().__init__(f"edge {edge_id!r} has non-positive length")


class BadProfile(NetworkError):
    def __init__(self, profile_id: str, reason: str):
        super().__init__(f"speed profile {profile_id!r}: {reason}")


class Unreachable(NetworkError):
    def __init__(self, src: str, dst: str):
        self.src = src
        self.dst = dst
        super().__init__(f"no path from {src!r} to {dst!r}")


@dataclass(frozen=True)
class SpeedProfile:
    bucket_seconds: int
    speeds: tuple  # m/s per bucket, cyclic over 24h

    @staticmethod
    def validate(profile_id: str, bucket_seconds: int, speeds) -> "SpeedProfile":
        if bucket_seconds <= 0 or DAY_SECONDS % bucket_seconds != 0:
            raise BadProfile(profile_id, f"bucket_seconds {bucket_seconds} must divide 86400")
        speeds = tuple(float(s) for s in speeds)
        if len(speeds) * bucket_seconds != DAY_SECONDS:
            raise BadProfile(profile_id, "len(speeds) * bucket_seconds must equal 86400")
        if any(s <= 0 for s in speeds):
            raise BadProfile(profile_id, "all speeds must be > 0")
        return SpeedProfile(bucket_seconds, speeds)

    @staticmethod
    def constant(speed: float, bucket_seconds: int = 3600) -> "SpeedProfile":
        return SpeedProfile(bucket_seconds, tuple([speed] * (DAY_SECONDS // bucket_seconds)))

    def speed_at(self, t: float) -> float:
        return self.speeds[int(t % DAY_SECONDS) // self.bucket_seconds]

    def to_dict(self) -> dict:
        return {"bucket_seconds": self.bucket_seconds, "speeds": list(self.speeds)}


@dataclass(frozen=True)
class Node:
    id: str
    lon: float
    lat: float


@dataclass(frozen=True)
class Edge:
    id: str
    from_node: str
    to_node: str
    length: float  # meters
    speed_profile_id: Optional[str]


@dataclass
class RoadNetwork:
    nodes: dict  # id -> Node
    edges: dict  # id -> Edge
    profiles: dict  # id -> SpeedProfile
    default_speed: float = DEFAULT_FREE_FLOW_SPEED
    adjacency: dict = field(default_factory=dict)  # node id -> list[Edge]

    def __post_init__(self):
        if not self.adjacency:
            adj: dict[str, list] = {nid: [] for nid in self.nodes}
            for e in self.edges.values():
                adj[e.from_node].append(e)
            self.adjacency = adj

    def profile_for(self, edge: Edge) -> SpeedProfile:
        if edge.speed_profile_id is not None and edge.speed_profile_id in self.profiles:
            return self.profiles[edge.speed_profile_id]
        return SpeedProfile.constant(self.default_speed)

    def with_profiles(self, overrides: dict) -> "RoadNetwork":
        """Copy of this network with some edge profiles replaced (by edge id)."""
        profiles = dict(self.profiles)
        edges = dict(self.edges)
        for edge_id, profile in overrides.items():
            if edge_id not in edges:
                continue
            key = f"__live__{edge_id}"
            profiles[key] = profile
            e = edges[edge_id]
            edges[edge_id] = Edge(e.id, e.from_node, e.to_node, e.length, key)
        return RoadNetwork(self.nodes, edges, profiles, self.default_speed)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "lon": n.lon, "lat": n.lat} for n in self.nodes.values()],
            "edges": [
                {
                    "id": e.id,
                    "from_node": e.from_node,
                    "to_node": e.to_node,
                    "length": e.length,
                    "speed_profile_id": e.speed_profile_id,
                }
                for e in self.edges.values()
            ],
            "speed_profiles": [
                {"id": pid, **p.to_dict()} for pid, p in self.profiles.items() if not pid.startswith("__live__")
            ],
        }


def load_network(document: dict, default_speed: float = DEFAULT_FREE_FLOW_SPEED) -> RoadNetwork:
    """Build and validate a RoadNetwork from its JSON document form."""
    profiles = {}
    for p in document.get("speed_profiles", []):
        profiles[p["id"]] = SpeedProfile.validate(p["id"], p["bucket_seconds"], p["speeds"])
    nodes = {n["id"]: Node(n["id"], n["lon"], n["lat"]) for n in document.get("nodes", [])}
    edges = {}
    for e in document.get("edges", []):
        if e["from_node"] not in nodes:
            raise DanglingEdge(e["id"], e["from_node"])
        if e["to_node"] not in nodes:
            raise DanglingEdge(e["id"], e["to_node"])
        if e["length"] <= 0:
            raise NonPositiveLength(e["id"])
        pid = e.get("speed_profile_id")
        if pid is not None and pid not in profiles:
            raise BadProfile(pid, f"referenced by edge {e['id']!r} but not defined")
        edges[e["id"]] = Edge(e["id"], e["from_node"], e["to_node"], float(e["length"]), pid)
    return RoadNetwork(nodes, edges, profiles, default_speed)


def edge_travel_time(edge: Edge, profile: SpeedProfile, depart: float) -> float:
    """Traversal time by integrating piecewise-constant speed from ``depart``."""
    remaining = edge.length
    t = depart
    while True:
        speed = profile.speed_at(t)
        # Time until the next bucket boundary.
        into_bucket = (t % DAY_SECONDS) % profile.bucket_seconds
        slack = profile.bucket_seconds - into_bucket
        reachable = speed * slack
        if remaining <= reachable:
            return t + remaining / speed - depart
        remaining -= reachable
        t += slack


def shortest_path(
    network: RoadNetwork, src: str, dst: str, depart: float
) -> tuple[list, float, float]:
    """Time-dependent earliest-arrival search; returns (node path, seconds, meters).

    Label-setting is valid because edge travel times satisfy FIFO.
    """
    if src not in network.nodes:
        raise KeyError(src)
    if dst not in network.nodes:
        raise KeyError(dst)
    if src == dst:
        return [src], 0.0, 0.0
    best: dict[str, float] = {src: depart}
    prev: dict[str, tuple] = {}
    heap = [(depart, src)]
    while heap:
        arrival, node = heapq.heappop(heap)
        if arrival > best.get(node, math.inf):
            continue
        if node == dst:
            break
        for edge in network.adjacency.get(node, []):
            tt = edge_travel_time(edge, network.profile_for(edge), arrival)
            cand = arrival + tt
            if cand < best.get(edge.to_node, math.inf):
                best[edge.to_node] = cand
                prev[edge.to_node] = (node, edge)
                heapq.heappush(heap, (cand, edge.to_node))
    if dst not in best:
        raise Unreachable(src, dst)
    path = [dst]
    meters = 0.0
    node = dst
    while node != src:
        parent, edge = prev[node]
        meters += edge.length
        path.append(parent)
        node = parent
    path.reverse()
    return path, best[dst] - depart, meters


@dataclass
class TravelTimeMatrix:
    locations: list  # node ids
    depart_buckets: list  # start seconds
    seconds: dict  # (i, j, b) -> travel seconds
    meters: dict  # (i, j) -> distance meters; from the bucket-0 path

    def index(self, location: str) -> int:
        return self.locations.index(location)

    def travel_fn(self):
        """Piecewise-constant travel function keyed on the depart bucket floor.

        Deterministic and self-consistent: the solver, validator and timing
        propagation all query this same function.
        """
        idx = {loc: i for i, loc in enumerate(self.locations)}
        buckets = self.depart_buckets
        seconds = self.seconds
        meters = self.meters

        def fn(src: str, dst: str, depart: float) -> tuple[float, float]:
            i, j = idx[src], idx[dst]
            if i == j:
                return 0.0, 0.0
            b = 0
            for k, start in enumerate(buckets):
                if depart >= start:
                    b = k
                else:
                    break
            return seconds[(i, j, b)], meters[(i, j)]

        return fn


def build_matrix(network: RoadNetwork, locations: list, depart_buckets: list) -> TravelTimeMatrix:
    """Distance and transit-time matrices via one-to-many searches per (origin, bucket)."""
    locset = set(locations)
    seconds: dict = {}
    meters: dict = {}
    for i, src in enumerate(locations):
        for b, depart in enumerate(depart_buckets):
            # One-to-all label-setting, stopped when all targets are settled.
            best: dict[str, float] = {src: float(depart)}
            prev: dict[str, tuple] = {}
            settled: set = set()
            heap = [(float(depart), src)]
            while heap and not locset <= settled:
                arrival, node = heapq.heappop(heap)
                if arrival > best.get(node, math.inf):
                    continue
                settled.add(node)
                for edge in network.adjacency.get(node, []):
                    tt = edge_travel_time(edge, network.profile_for(edge), arrival)
                    cand = arrival + tt
                    if cand < best.get(edge.to_node, math.inf):
                        best[edge.to_node] = cand
                        prev[edge.to_node] = (node, edge)
                        heapq.heappush(heap, (cand, edge.to_node))
            for j, dst in enumerate(locations):
                if i == j:
                    seconds[(i, j, b)] = 0.0
                    meters[(i, j)] = 0.0
                    continue
                if dst not in best:
                    raise Unreachable(src, dst)
                seconds[(i, j, b)] = best[dst] - depart
                if b == 0:
                    m = 0.0
                    node = dst
                    while node != src:
                        parent, edge = prev[node]
                        m += edge.length
                        node = parent
                    meters[(i, j)] = m
    return TravelTimeMatrix(list(locations), list(depart_buckets), seconds, meters)


def hybrid_travel_fn(network: RoadNetwork, matrix: TravelTimeMatrix):
    """Matrix lookups for known location pairs, exact time-dependent search for
    anything else (e.g. a vehicle's mid-route position).  Deterministic; exact
    fallbacks are cached by (src, dst, depart)."""
    base = matrix.travel_fn()
    known = set(matrix.locations)
    cache: dict = {}

    def fn(src: str, dst: str, depart: float) -> tuple[float, float]:
        if src in known and dst in known:
            return base(src, dst, depart)
        key = (src, dst, round(depart, 6))
        if key not in cache:
            _, secs, meters = shortest_path(network, src, dst, depart)
            cache[key] = (secs, meters)
        return cache[key]

    return fn


def network_travel_fn(network: RoadNetwork):
    """Exact per-query travel function; suitable for small fixtures and validation."""

    def fn(src: str, dst: str, depart: float) -> tuple[float, float]:
        _, secs, meters = shortest_path(network, src, dst, depart)
        return secs, meters

    return fn


def haversine_m(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Great-circle distance in meters."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


@dataclass(frozen=True)
class GpsPing:
    vehicle_id: str
    lon: float
    lat: float
    timestamp: float

    def to_dict(self) -> dict:
        return {"vehicle_id": self.vehicle_id, "lon": self.lon, "lat": self.lat, "timestamp": self.timestamp}

    @classmethod
    def from_dict(cls, d: dict) -> "GpsPing":
        return cls(d["vehicle_id"], d["lon"], d["lat"], d["timestamp"])


def snap_to_node(network: RoadNetwork, lon: float, lat: float) -> str:
    """Nearest network node by haversine distance."""
    return min(network.nodes.values(), key=lambda n: haversine_m(lon, lat, n.lon, n.lat)).id


def estimate_edge_speeds(network: RoadNetwork, pings: list, bucket_seconds: int = 3600):
    """Derive observed edge speeds from consecutive GPS pings.

    Snaps each ping to its nearest node; consecutive pings whose snapped nodes
    are adjacent yield one observation attributed to the first ping's time
    bucket.  Returns (observations, unmatched_count).
    """
    by_vehicle: dict[str, list] = {}
    for p in pings:
        by_vehicle.setdefault(p.vehicle_id, []).append(p)
    edge_by_pair = {(e.from_node, e.to_node): e for e in network.edges.values()}
    observations = []
    unmatched = 0
    for vid in sorted(by_vehicle):
        vp = sorted(by_vehicle[vid], key=lambda p: p.timestamp)
        snapped = [snap_to_node(network, p.lon, p.lat) for p in vp]
        for (p1, n1), (p2, n2) in zip(zip(vp, snapped), zip(vp[1:], snapped[1:])):
            if n1 == n2:
                continue
            edge = edge_by_pair.get((n1, n2))
            dt = p2.timestamp - p1.timestamp
            if edge is None or dt <= 0:
                unmatched += 1
                continue
            observations.append(
                {
                    "edge_id": edge.id,
                    "time_bucket": int(p1.timestamp % DAY_SECONDS) // bucket_seconds,
                    "observed_speed": edge.length / dt,
                }
            )
    return observations, unmatched


def path_geojson(network: RoadNetwork, path: list, properties: Optional[dict] = None) -> dict:
    """GeoJSON LineString feature for a node path."""
    coords = [[network.nodes[n].lon, network.nodes[n].lat] for n in path]
    return {
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords},
        "properties": properties or {},
    }
