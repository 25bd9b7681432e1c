"""Shared domain model: orders, fleet, plans, events, and the plan validator.

All times are seconds since the scenario epoch (midnight of day 0), distances
in meters, loads in abstract integer units.  A travel function has signature
``travel_fn(from_node, to_node, depart) -> (seconds, meters)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

TravelFn = Callable[[str, str, float], tuple[float, float]]

# Timing consistency tolerance for the validator (seconds / cost units).
TIME_EPS = 1e-6
COST_EPS = 1e-9

ORDER_STATUSES = ("pending", "planned", "in_transit", "delivered", "cancelled", "unassigned")

# Allowed order status transitions.
_ORDER_TRANSITIONS = {
    "pending": {"planned", "cancelled", "unassigned"},
    "planned": {"in_transit", "cancelled"},
    "in_transit": {"delivered"},
    "delivered": set(),
    "cancelled": set(),
    "unassigned": set(),
}

VEHICLE_STATUSES = ("available", "broken", "retired")


class DomainError(Exception):
    """Base class for domain-level failures."""


class EntityReferenceError(DomainError):
    """A plan or event references an entity that does not exist."""

    def __init__(self, kind: str, entity_id: str):
        self.kind = kind
        self.entity_id = entity_id
        super().__init__(f"unknown {kind}: {entity_id!r}")


class IllegalTransition(DomainError):
    """Order status transition not allowed by the status machine."""

    def __init__(self, order_id: str, old: str, new: str):
        self.order_id = order_id
        self.old = old
        self.new = new
        super().__init__(f"order {order_id!r}: illegal transition {old} -> {new}")


class ValidationError(DomainError):
    """Raised when scenario data violates a type invariant."""


@dataclass(frozen=True)
class TimeWindow:
    earliest: float
    latest: float

    def __post_init__(self):
        if self.earliest < 0 or self.latest < 0:
            raise ValidationError(f"time window bounds must be >= 0: {self}")
        if self.earliest > self.latest:
            raise ValidationError(f"time window earliest > latest: {self}")

    def to_dict(self) -> dict:
        return {"earliest": self.earliest, "latest": self.latest}

    @classmethod
    def from_dict(cls, d: dict) -> "TimeWindow":
        return cls(earliest=d["earliest"], latest=d["latest"])


@dataclass
class Order:
    id: str
    customer_name: str
    demand: int
    location: str
    time_window: TimeWindow
    service_duration: float = 0.0
    status: str = "pending"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.demand <= 0:
            raise ValidationError(f"order {self.id!r}: demand must be > 0")
        if self.service_duration < 0:
            raise ValidationError(f"order {self.id!r}: service_duration must be >= 0")
        if self.status not in ORDER_STATUSES:
            raise ValidationError(f"order {self.id!r}: unknown status {self.status!r}")

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "customer_name": self.customer_name,
            "demand": self.demand,
            "location": self.location,
            "time_window": self.time_window.to_dict(),
            "service_duration": self.service_duration,
            "status": self.status,
        }
        if self.metadata:
            d["metadata"] = self.metadata
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Order":
        return cls(
            id=d["id"],
            customer_name=d.get("customer_name", ""),
            demand=d["demand"],
            location=d["location"],
            time_window=TimeWindow.from_dict(d["time_window"]),
            service_duration=d.get("service_duration", 0.0),
            status=d.get("status", "pending"),
            metadata=d.get("metadata", {}),
        )


def transition_order_status(order: Order, new_status: str, audit: Optional[list] = None) -> Order:
    """Return a copy of ``order`` in ``new_status``; raise IllegalTransition otherwise.

    ``audit``, when given, receives an ``(order_id, old, new)`` entry.
    """
    if new_status not in ORDER_STATUSES:
        raise ValidationError(f"unknown status {new_status!r}")
    if new_status not in _ORDER_TRANSITIONS[order.status]:
        raise IllegalTransition(order.id, order.status, new_status)
    if audit is not None:
        audit.append((order.id, order.status, new_status))
    return replace(order, status=new_status)


@dataclass
class Vehicle:
    id: str
    depot_id: str
    capacity: int
    fixed_cost: float = 0.0
    cost_per_meter: float = 0.0
    status: str = "available"

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValidationError(f"vehicle {self.id!r}: capacity must be > 0")
        if self.fixed_cost < 0 or self.cost_per_meter < 0:
            raise ValidationError(f"vehicle {self.id!r}: costs must be >= 0")
        if self.status not in VEHICLE_STATUSES:
            raise ValidationError(f"vehicle {self.id!r}: unknown status {self.status!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "depot_id": self.depot_id,
            "capacity": self.capacity,
            "fixed_cost": self.fixed_cost,
            "cost_per_meter": self.cost_per_meter,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vehicle":
        return cls(
            id=d["id"],
            depot_id=d["depot_id"],
            capacity=d["capacity"],
            fixed_cost=d.get("fixed_cost", 0.0),
            cost_per_meter=d.get("cost_per_meter", 0.0),
            status=d.get("status", "available"),
        )


@dataclass
class Driver:
    id: str
    name: str
    shift: TimeWindow
    assigned_vehicle_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "shift": self.shift.to_dict(),
            "assigned_vehicle_id": self.assigned_vehicle_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Driver":
        return cls(
            id=d["id"],
            name=d.get("name", ""),
            shift=TimeWindow.from_dict(d["shift"]),
            assigned_vehicle_id=d.get("assigned_vehicle_id"),
        )


@dataclass
class Depot:
    id: str
    location: str

    def to_dict(self) -> dict:
        return {"id": self.id, "location": self.location}

    @classmethod
    def from_dict(cls, d: dict) -> "Depot":
        return cls(id=d["id"], location=d["location"])


STOP_EXECUTION_STATUSES = ("pending", "committed", "completed")


@dataclass
class Stop:
    """One visit on a route.  ``order_id`` is None for the depot start/end markers."""

    order_id: Optional[str]
    arrival_time: float
    wait_time: float
    service_start: float
    departure_time: float
    execution_status: str = "pending"

    def to_dict(self) -> dict:
        return {
            "order_id": self.order_id,
            "arrival_time": self.arrival_time,
            "wait_time": self.wait_time,
            "service_start": self.service_start,
            "departure_time": self.departure_time,
            "execution_status": self.execution_status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Stop":
        return cls(
            order_id=d.get("order_id"),
            arrival_time=d["arrival_time"],
            wait_time=d["wait_time"],
            service_start=d["service_start"],
            departure_time=d["departure_time"],
            execution_status=d.get("execution_status", "pending"),
        )


@dataclass
class Route:
    vehicle_id: str
    driver_id: Optional[str]
    departure_time: float
    stops: list  # list[Stop]; first and last are depot markers (order_id None)

    def customer_stops(self) -> list:
        return [s for s in self.stops if s.order_id is not None]

    def order_ids(self) -> list:
        return [s.order_id for s in self.stops if s.order_id is not None]

    def to_dict(self) -> dict:
        return {
            "vehicle_id": self.vehicle_id,
            "driver_id": self.driver_id,
            "departure_time": self.departure_time,
            "stops": [s.to_dict() for s in self.stops],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Route":
        return cls(
            vehicle_id=d["vehicle_id"],
            driver_id=d.get("driver_id"),
            departure_time=d["departure_time"],
            stops=[Stop.from_dict(s) for s in d["stops"]],
        )


PLAN_KINDS = ("static", "dynamic")


@dataclass
class Plan:
    id: str
    routes: list  # list[Route]
    unassigned: list  # list[str] order ids
    total_cost: float
    revision: int = 0
    created_at: float = 0.0
    kind: str = "static"

    def routed_order_ids(self) -> list:
        out = []
        for r in self.routes:
            out.extend(r.order_ids())
        return out

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "routes": [r.to_dict() for r in self.routes],
            "unassigned": list(self.unassigned),
            "total_cost": self.total_cost,
            "revision": self.revision,
            "created_at": self.created_at,
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Plan":
        return cls(
            id=d["id"],
            routes=[Route.from_dict(r) for r in d["routes"]],
            unassigned=list(d.get("unassigned", [])),
            total_cost=d["total_cost"],
            revision=d.get("revision", 0),
            created_at=d.get("created_at", 0.0),
            kind=d.get("kind", "static"),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


EVENT_KINDS = (
    "order_cancel",
    "order_new",
    "time_window_change",
    "vehicle_breakdown",
    "traffic_update",
    "delay_observed",
)


@dataclass
class Event:
    id: str
    timestamp: float
    kind: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValidationError(f"event {self.id!r}: unknown kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"id": self.id, "timestamp": self.timestamp, "kind": self.kind, "payload": self.payload}

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(id=d["id"], timestamp=d["timestamp"], kind=d["kind"], payload=d.get("payload", {}))


@dataclass
class Scenario:
    """Orders plus fleet data; the unit a plan is computed over."""

    orders: dict  # id -> Order
    vehicles: dict  # id -> Vehicle
    drivers: dict  # id -> Driver
    depots: dict  # id -> Depot

    def __post_init__(self):
        for v in self.vehicles.values():
            if v.depot_id not in self.depots:
                raise EntityReferenceError("depot", v.depot_id)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        orders = [Order.from_dict(o) for o in d.get("orders", [])]
        if len({o.id for o in orders}) != len(orders):
            raise ValidationError("duplicate order ids in scenario")
        return cls(
            orders={o.id: o for o in orders},
            vehicles={v["id"]: Vehicle.from_dict(v) for v in d.get("vehicles", [])},
            drivers={dr["id"]: Driver.from_dict(dr) for dr in d.get("drivers", [])},
            depots={dp["id"]: Depot.from_dict(dp) for dp in d.get("depots", [])},
        )

    def to_dict(self) -> dict:
        return {
            "orders": [o.to_dict() for o in self.orders.values()],
            "vehicles": [v.to_dict() for v in self.vehicles.values()],
            "drivers": [d.to_dict() for d in self.drivers.values()],
            "depots": [d.to_dict() for d in self.depots.values()],
        }

    def driver_for_vehicle(self, vehicle_id: str) -> Optional[Driver]:
        for d in self.drivers.values():
            if d.assigned_vehicle_id == vehicle_id:
                return d
        return None


@dataclass(frozen=True)
class Violation:
    rule: str
    route_index: Optional[int]
    stop_index: Optional[int]
    order_id: Optional[str]
    message: str

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "route_index": self.route_index,
            "stop_index": self.stop_index,
            "order_id": self.order_id,
            "message": self.message,
        }


def _node_of(scenario: Scenario, stop: Stop, depot_location: str) -> str:
    if stop.order_id is None:
        return depot_location
    return scenario.orders[stop.order_id].location


def validate_plan(plan: Plan, scenario: Scenario, travel_fn: TravelFn) -> list:
    """Check every route invariant; return a list of Violations (empty iff valid).

    Raises EntityReferenceError for references to entities the scenario does
    not contain (that is a malformed plan, not a constraint violation).
    """
    violations: list[Violation] = []
    seen: dict[str, int] = {}

    for ri, route in enumerate(plan.routes):
        vehicle = scenario.vehicles.get(route.vehicle_id)
        if vehicle is None:
            raise EntityReferenceError("vehicle", route.vehicle_id)
        depot = scenario.depots.get(vehicle.depot_id)
        if depot is None:
            raise EntityReferenceError("depot", vehicle.depot_id)
        driver = None
        if route.driver_id is not None:
            driver = scenario.drivers.get(route.driver_id)
            if driver is None:
                raise EntityReferenceError("driver", route.driver_id)
        for s in route.customer_stops():
            if s.order_id not in scenario.orders:
                raise EntityReferenceError("order", s.order_id)
            seen[s.order_id] = seen.get(s.order_id, 0) + 1

        if len(route.stops) < 2 or route.stops[0].order_id is not None or route.stops[-1].order_id is not None:
            violations.append(Violation("route_shape", ri, None, None, "route must start and end at the depot"))
            continue

        load = sum(scenario.orders[oid].demand for oid in route.order_ids())
        if load > vehicle.capacity:
            violations.append(
                Violation("capacity", ri, None, None, f"load {load} exceeds capacity {vehicle.capacity}")
            )

        # Forward timing consistency from the depot departure.
        prev_node = depot.location
        prev_departure = route.departure_time
        for si, stop in enumerate(route.stops):
            if si == 0:
                if abs(stop.departure_time - route.departure_time) > TIME_EPS:
                    violations.append(
                        Violation("timing", ri, si, None, "depot departure mismatch with route departure_time")
                    )
                continue
            node = _node_of(scenario, stop, depot.location)
            tt, _ = travel_fn(prev_node, node, prev_departure)
            expected_arrival = prev_departure + tt
            if abs(stop.arrival_time - expected_arrival) > TIME_EPS:
                violations.append(
                    Violation(
                        "timing",
                        ri,
                        si,
                        stop.order_id,
                        f"arrival {stop.arrival_time} != departure+travel {expected_arrival}",
                    )
                )
            if stop.order_id is not None:
                order = scenario.orders[stop.order_id]
                if stop.wait_time < -TIME_EPS:
                    violations.append(Violation("timing", ri, si, stop.order_id, "negative wait"))
                if abs(stop.service_start - (stop.arrival_time + stop.wait_time)) > TIME_EPS:
                    violations.append(
                        Violation("timing", ri, si, stop.order_id, "service_start != arrival + wait")
                    )
                tw = order.time_window
                if stop.service_start < tw.earliest - TIME_EPS or stop.service_start > tw.latest + TIME_EPS:
                    violations.append(
                        Violation(
                            "time_window",
                            ri,
                            si,
                            stop.order_id,
                            f"service_start {stop.service_start} outside [{tw.earliest}, {tw.latest}]",
                        )
                    )
                if abs(stop.departure_time - (stop.service_start + order.service_duration)) > TIME_EPS:
                    violations.append(
                        Violation("timing", ri, si, stop.order_id, "departure != service_start + service")
                    )
            prev_node = node
            prev_departure = stop.departure_time

        if driver is not None:
            if route.departure_time < driver.shift.earliest - TIME_EPS:
                violations.append(
                    Violation("shift", ri, None, None, "route departs before driver shift start")
                )
            if route.stops[-1].arrival_time > driver.shift.latest + TIME_EPS:
                violations.append(
                    Violation("shift", ri, None, None, "route returns after driver shift end")
                )

    for oid in plan.unassigned:
        if oid not in scenario.orders:
            raise EntityReferenceError("order", oid)
        seen[oid] = seen.get(oid, 0) + 1

    for oid, n in seen.items():
        if n > 1:
            violations.append(Violation("duplicate_order", None, None, oid, f"order appears {n} times"))
    for oid, order in scenario.orders.items():
        if order.status in ("cancelled",):
            continue
        if oid not in seen:
            violations.append(Violation("missing_order", None, None, oid, "order not routed nor unassigned"))

    if abs(plan.total_cost - plan_cost(plan, scenario, travel_fn)) > COST_EPS:
        violations.append(
            Violation("cost", None, None, None, "stored total_cost differs from recomputed cost")
        )
    return violations


def route_distance(route: Route, scenario: Scenario, travel_fn: TravelFn) -> float:
    """Total meters driven along a route's leg sequence."""
    vehicle = scenario.vehicles[route.vehicle_id]
    depot_location = scenario.depots[vehicle.depot_id].location
    meters = 0.0
    prev_node = depot_location
    prev_departure = route.departure_time
    for stop in route.stops[1:]:
        node = _node_of(scenario, stop, depot_location)
        _, m = travel_fn(prev_node, node, prev_departure)
        meters += m
        prev_node = node
        prev_departure = stop.departure_time
    return meters


def plan_cost(plan: Plan, scenario: Scenario, travel_fn: TravelFn) -> float:
    """Fixed cost per used vehicle plus distance cost, summed over routes."""
    total = 0.0
    for route in plan.routes:
        if not route.customer_stops():
            continue
        vehicle = scenario.vehicles[route.vehicle_id]
        total += vehicle.fixed_cost + vehicle.cost_per_meter * route_distance(route, scenario, travel_fn)
    return total


def conservation_ok(plan: Plan, orders: Iterable[Order]) -> bool:
    """Routed ∪ unassigned equals the non-cancelled input orders, no duplicates."""
    routed = plan.routed_order_ids()
    combined = routed + list(plan.unassigned)
    if len(set(combined)) != len(combined):
        return False
    expected = {o.id for o in orders if o.status != "cancelled"}
    return set(combined) == expected
