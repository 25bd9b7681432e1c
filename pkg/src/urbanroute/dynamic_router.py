"""Dynamic rerouting: consume live events during execution and repair the
active plan without touching committed work (completed or in-progress stops)."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .domain import (
    Event,
    Order,
    Plan,
    Route,
    Scenario,
    Stop,
    TimeWindow,
    TravelFn,
    transition_order_status,
)
from .static_router import (
    Infeasible,
    SolverConfig,
    VehicleContext,
    _Solver,
    contexts_from_scenario,
    propagate,
    schedule_route,
)

DEFAULT_THETA = 300.0  # seconds of predicted lateness that triggers a replan


class DynamicError(Exception):
    pass


class UnknownOrder(DynamicError):
    def __init__(self, order_id: str):
        super().__init__(f"unknown order {order_id!r}")


class IllegalEvent(DynamicError):
    pass


class StaleRevision(DynamicError):
    pass


@dataclass
class VehicleExecState:
    position_node: str
    position_time: float  # vehicle is (or will be) at position_node at this time
    completed: list = field(default_factory=list)  # order ids, prefix of its route
    in_progress: Optional[str] = None  # order the vehicle is currently heading to / serving
    broken: bool = False


@dataclass
class ExecutionState:
    clock: float
    vehicles: dict  # vehicle_id -> VehicleExecState

    @classmethod
    def at_plan_start(cls, plan: Plan, scenario: Scenario) -> "ExecutionState":
        vehicles = {}
        clock = 0.0
        for route in plan.routes:
            depot = scenario.depots[scenario.vehicles[route.vehicle_id].depot_id]
            vehicles[route.vehicle_id] = VehicleExecState(
                position_node=depot.location, position_time=route.departure_time
            )
            clock = min(clock, route.departure_time) if vehicles else route.departure_time
        clock = min((r.departure_time for r in plan.routes), default=0.0)
        return cls(clock=clock, vehicles=vehicles)


@dataclass
class NoChange:
    reason: str
    event_id: Optional[str] = None


@dataclass
class ReplanResult:
    plan: Plan
    diff: dict  # {"moved": {...}, "removed": [...], "added": {...}} order ids per vehicle
    trigger: str  # event id


def route_progress(route: Route, state: ExecutionState):
    """Split a route into (committed customer stops, pending order ids).

    Committed = completed stops plus the in-progress one; they must form a
    prefix of the route's customer stops.
    """
    vs = state.vehicles.get(route.vehicle_id)
    if vs is None:
        return [], route.order_ids()
    committed_ids = list(vs.completed)
    if vs.in_progress is not None:
        committed_ids.append(vs.in_progress)
    stops = route.customer_stops()
    prefix = [s.order_id for s in stops[: len(committed_ids)]]
    if prefix != committed_ids:
        raise DynamicError(
            f"completed stops are not a route prefix for vehicle {route.vehicle_id!r}: "
            f"{committed_ids} vs {prefix}"
        )
    committed = stops[: len(committed_ids)]
    pending = [s.order_id for s in stops[len(committed_ids) :]]
    return committed, pending


def remainder_context(
    route: Route, state: ExecutionState, scenario: Scenario, travel_fn: TravelFn
) -> Optional[VehicleContext]:
    """Planning context for a vehicle's pending work: starts where its committed
    work ends, with the capacity already consumed subtracted."""
    vehicle = scenario.vehicles[route.vehicle_id]
    vs = state.vehicles.get(route.vehicle_id)
    depot = scenario.depots[vehicle.depot_id]
    if vs is None:
        vs = VehicleExecState(position_node=depot.location, position_time=route.departure_time)
    if vs.broken or vehicle.status == "broken":
        return None
    committed, _pending = route_progress(route, state)
    committed_demand = sum(scenario.orders[s.order_id].demand for s in committed)
    if vs.in_progress is not None:
        order = scenario.orders[vs.in_progress]
        t0 = max(vs.position_time, state.clock)
        tt, _ = travel_fn(vs.position_node, order.location, t0)
        arrival = t0 + tt
        service_start = max(arrival, order.time_window.earliest)
        start_node = order.location
        start_time = service_start + order.service_duration
    else:
        start_node = vs.position_node
        start_time = max(vs.position_time, state.clock)
    driver = scenario.drivers.get(route.driver_id) if route.driver_id else None
    return VehicleContext(
        vehicle_id=route.vehicle_id,
        start_node=start_node,
        start_time=start_time,
        end_node=depot.location,
        capacity=vehicle.capacity - committed_demand,
        fixed_cost=vehicle.fixed_cost,
        cost_per_meter=vehicle.cost_per_meter,
        latest_return=driver.shift.latest if driver else None,
        charge_fixed=False if committed else True,
        driver_id=route.driver_id,
    )


def predicted_lateness(
    plan: Plan, state: ExecutionState, scenario: Scenario, travel_fn: TravelFn
) -> dict:
    """Re-propagate timings from current positions; order id -> lateness seconds."""
    lateness: dict[str, float] = {}
    for route in plan.routes:
        vs = state.vehicles.get(route.vehicle_id)
        if vs is None or vs.broken:
            continue
        committed, pending = route_progress(route, state)
        t = max(vs.position_time, state.clock)
        node = vs.position_node
        remaining = ([vs.in_progress] if vs.in_progress else []) + pending
        for oid in remaining:
            order = scenario.orders[oid]
            tt, _ = travel_fn(node, order.location, t)
            arrival = t + tt
            service_start = max(arrival, order.time_window.earliest)
            lateness[oid] = max(0.0, service_start - order.time_window.latest)
            t = service_start + order.service_duration
            node = order.location
    return lateness


def _stitch_route(
    route: Route,
    committed: list,
    pending_seq: list,
    ctx: VehicleContext,
    scenario: Scenario,
    travel_fn: TravelFn,
) -> Route:
    """Committed prefix (bit-identical) plus a freshly scheduled pending tail."""
    stops = [route.stops[0]] + [replace(s) for s in committed]
    tail = schedule_route(pending_seq, ctx, scenario.orders, travel_fn)
    assert not isinstance(tail, Infeasible), f"stitching infeasible tail: {tail.reason}"
    for s in tail.stops[1:-1]:
        s.execution_status = "pending"
    new_stops = stops + tail.stops[1:-1] + [tail.stops[-1]]
    return Route(
        vehicle_id=route.vehicle_id,
        driver_id=route.driver_id,
        departure_time=route.departure_time,
        stops=new_stops,
    )


def _truncate_route(route: Route, committed: list) -> Route:
    """Route reduced to its committed prefix (for broken vehicles)."""
    end = route.stops[-1]
    last_departure = committed[-1].departure_time if committed else route.departure_time
    stops = [route.stops[0]] + [replace(s) for s in committed] + [
        Stop(None, last_departure, 0.0, last_departure, last_departure, "completed")
    ]
    return Route(route.vehicle_id, route.driver_id, route.departure_time, stops)


def _committed_meters_cost(route: Route, committed: list, scenario: Scenario, travel_fn: TravelFn) -> float:
    """Distance cost of the committed legs, using the route's recorded departures."""
    vehicle = scenario.vehicles[route.vehicle_id]
    depot = scenario.depots[vehicle.depot_id]
    node = depot.location
    t = route.departure_time
    meters = 0.0
    for s in committed:
        loc = scenario.orders[s.order_id].location
        _, m = travel_fn(node, loc, t)
        meters += m
        node = loc
        t = s.departure_time
    return vehicle.cost_per_meter * meters


def rebuild_plan(
    plan: Plan,
    state: ExecutionState,
    scenario: Scenario,
    travel_fn: TravelFn,
    new_pending: dict,  # vehicle_id -> pending order id sequence
    unassigned: list,
    trigger: str,
) -> ReplanResult:
    """Assemble revision N+1: committed prefixes untouched, pending tails new."""
    old_assignment = {}
    routes = []
    total = 0.0
    for route in plan.routes:
        committed, old_pending = route_progress(route, state)
        for oid in old_pending:
            old_assignment[oid] = route.vehicle_id
        vehicle = scenario.vehicles[route.vehicle_id]
        ctx = remainder_context(route, state, scenario, travel_fn)
        if ctx is None:  # broken vehicle keeps only its history
            new_route = _truncate_route(route, committed)
            routes.append(new_route)
            if committed:
                total += vehicle.fixed_cost + _committed_meters_cost(route, committed, scenario, travel_fn)
            continue
        pending_seq = new_pending.get(route.vehicle_id, [])
        new_route = _stitch_route(route, committed, pending_seq, ctx, scenario, travel_fn)
        vs = state.vehicles.get(route.vehicle_id)
        if vs is not None:
            for s in new_route.customer_stops():
                if s.order_id in vs.completed:
                    s.execution_status = "completed"
                elif s.order_id == vs.in_progress:
                    s.execution_status = "committed"
                else:
                    s.execution_status = "pending"
        if committed or pending_seq:
            routes.append(new_route)
            result = propagate(pending_seq, ctx, scenario.orders, travel_fn)
            _, _, tail_meters = result
            total += vehicle.fixed_cost + vehicle.cost_per_meter * tail_meters
            total += _committed_meters_cost(route, committed, scenario, travel_fn)
    # Vehicles that had no route but now get pending work.
    routed_vids = {r.vehicle_id for r in plan.routes}
    for vid, seq in sorted(new_pending.items()):
        if vid in routed_vids or not seq:
            continue
        vehicle = scenario.vehicles[vid]
        depot = scenario.depots[vehicle.depot_id]
        driver = scenario.driver_for_vehicle(vid)
        ctx = VehicleContext(
            vehicle_id=vid,
            start_node=depot.location,
            start_time=max(state.clock, driver.shift.earliest if driver else state.clock),
            end_node=depot.location,
            capacity=vehicle.capacity,
            fixed_cost=vehicle.fixed_cost,
            cost_per_meter=vehicle.cost_per_meter,
            latest_return=driver.shift.latest if driver else None,
            driver_id=driver.id if driver else None,
        )
        route = schedule_route(list(seq), ctx, scenario.orders, travel_fn)
        assert not isinstance(route, Infeasible)
        routes.append(route)
        result = propagate(list(seq), ctx, scenario.orders, travel_fn)
        total += vehicle.fixed_cost + vehicle.cost_per_meter * result[2]

    new_plan = Plan(
        id=plan.id,
        routes=routes,
        unassigned=sorted(unassigned),
        total_cost=total,
        revision=plan.revision + 1,
        created_at=plan.created_at,
        kind="dynamic",
    )
    moved: dict[str, str] = {}
    added: dict[str, str] = {}
    for vid, seq in new_pending.items():
        for oid in seq:
            if oid not in old_assignment:
                added[oid] = vid
            elif old_assignment[oid] != vid:
                moved[oid] = vid
    removed = sorted(
        oid
        for oid in old_assignment
        if oid not in {o for seq in new_pending.values() for o in seq} and oid not in unassigned
    )
    diff = {"moved": moved, "removed": removed, "added": added}
    return ReplanResult(plan=new_plan, diff=diff, trigger=trigger)


def current_pending(plan: Plan, state: ExecutionState) -> tuple[dict, list]:
    pend = {}
    for route in plan.routes:
        _, pending = route_progress(route, state)
        pend[route.vehicle_id] = pending
    return pend, list(plan.unassigned)


def reoptimize_remainder(
    plan: Plan,
    state: ExecutionState,
    scenario: Scenario,
    travel_fn: TravelFn,
    config: SolverConfig,
    trigger: str = "",
    extra_pool: Optional[list] = None,
) -> ReplanResult:
    """LNS restricted to pending stops; committed work is a fixed prefix."""
    contexts = []
    initial_routes = []
    for route in plan.routes:
        ctx = remainder_context(route, state, scenario, travel_fn)
        if ctx is None:
            continue
        _, pending = route_progress(route, state)
        contexts.append(ctx)
        initial_routes.append(list(pending))
    # Idle vehicles (no route in the current plan) are fair game for repair;
    # they start from their depot at the current clock.
    routed_vids = {route.vehicle_id for route in plan.routes}
    for ctx in contexts_from_scenario(scenario, state.clock):
        if ctx.vehicle_id not in routed_vids:
            contexts.append(ctx)
            initial_routes.append([])
    pool = sorted(set(list(plan.unassigned) + list(extra_pool or [])))
    # Changed conditions (delays, new windows) can make a route's current
    # pending sequence infeasible; eject those orders into the pool and let
    # the repair step reinsert whatever still fits.
    for i, (ctx, seq) in enumerate(zip(contexts, initial_routes)):
        if seq and isinstance(propagate(seq, ctx, scenario.orders, travel_fn), Infeasible):
            pool = sorted(set(pool + seq))
            initial_routes[i] = []
    solver = _Solver(contexts, scenario.orders, travel_fn, config)
    unassigned = solver.regret_repair(initial_routes, pool)
    best, best_un = solver.lns(initial_routes, unassigned)
    new_pending = {ctx.vehicle_id: seq for ctx, seq in zip(contexts, best)}
    return rebuild_plan(plan, state, scenario, travel_fn, new_pending, best_un, trigger)


def apply_event(
    plan: Plan,
    state: ExecutionState,
    event: Event,
    scenario: Scenario,
    travel_fn: TravelFn,
    config: SolverConfig,
    theta: float = DEFAULT_THETA,
):
    """Kind-specific quick repair, escalating to remainder reoptimization.

    Returns a ReplanResult or NoChange.  The scenario is updated in place
    (order statuses, windows, vehicle status).
    """
    kind = event.kind
    payload = event.payload

    if kind == "order_cancel":
        oid = payload.get("order_id")
        if oid not in scenario.orders:
            raise UnknownOrder(oid)
        order = scenario.orders[oid]
        for route in plan.routes:
            vs = state.vehicles.get(route.vehicle_id)
            if vs and oid in vs.completed:
                return NoChange("AlreadyDelivered", event.id)
            if vs and vs.in_progress == oid:
                return NoChange("InProgress", event.id)
        if order.status == "delivered":
            return NoChange("AlreadyDelivered", event.id)
        if order.status == "cancelled":
            return NoChange("AlreadyCancelled", event.id)
        pend, unassigned = current_pending(plan, state)
        found = oid in unassigned or any(oid in seq for seq in pend.values())
        if not found:
            raise IllegalEvent(f"order {oid!r} not in the active plan")
        new_pending = {vid: [o for o in seq if o != oid] for vid, seq in pend.items()}
        new_un = [o for o in unassigned if o != oid]
        scenario.orders[oid] = transition_order_status(order, "cancelled")
        return rebuild_plan(plan, state, scenario, travel_fn, new_pending, new_un, event.id)

    if kind == "order_new":
        order = Order.from_dict(payload["order"])
        if order.id in scenario.orders:
            raise IllegalEvent(f"order {order.id!r} already exists")
        scenario.orders[order.id] = order
        result = reoptimize_remainder(
            plan, state, scenario, travel_fn, config, trigger=event.id, extra_pool=[order.id]
        )
        routed = set(result.plan.routed_order_ids())
        new_status = "planned" if order.id in routed else "unassigned"
        scenario.orders[order.id] = transition_order_status(scenario.orders[order.id], new_status)
        return result

    if kind == "time_window_change":
        oid = payload.get("order_id")
        if oid not in scenario.orders:
            raise UnknownOrder(oid)
        order = scenario.orders[oid]
        if order.status in ("delivered", "cancelled"):
            raise IllegalEvent(f"cannot change window of {order.status} order {oid!r}")
        new_tw = TimeWindow.from_dict(payload["time_window"])
        scenario.orders[oid] = replace(order, time_window=new_tw)
        pend, unassigned = current_pending(plan, state)
        host_vid = next((vid for vid, seq in pend.items() if oid in seq), None)
        if host_vid is None:
            # Unassigned order: try to place it now that its window moved.
            return reoptimize_remainder(plan, state, scenario, travel_fn, config, trigger=event.id)
        host_route = next(r for r in plan.routes if r.vehicle_id == host_vid)
        ctx = remainder_context(host_route, state, scenario, travel_fn)
        if not isinstance(propagate(pend[host_vid], ctx, scenario.orders, travel_fn), Infeasible):
            # Still feasible in place: timing refresh only.
            return rebuild_plan(plan, state, scenario, travel_fn, pend, unassigned, event.id)
        # Eject and reinsert via full remainder reoptimization.
        pend[host_vid] = [o for o in pend[host_vid] if o != oid]
        ejected_plan = rebuild_plan(plan, state, scenario, travel_fn, pend, unassigned, event.id).plan
        ejected_plan.revision = plan.revision  # single revision bump for the whole event
        return reoptimize_remainder(
            ejected_plan, state, scenario, travel_fn, config, trigger=event.id, extra_pool=[oid]
        )

    if kind == "vehicle_breakdown":
        vid = payload.get("vehicle_id")
        if vid not in scenario.vehicles:
            raise UnknownOrder(vid)
        vehicle = scenario.vehicles[vid]
        if vehicle.status == "broken":
            return NoChange("AlreadyBroken", event.id)
        scenario.vehicles[vid] = replace(vehicle, status="broken")
        vs = state.vehicles.get(vid)
        if vs is not None:
            vs.broken = True
        pend, unassigned = current_pending(plan, state)
        orphaned = pend.pop(vid, [])
        base = rebuild_plan(plan, state, scenario, travel_fn, pend, unassigned, event.id).plan
        base.revision = plan.revision
        return reoptimize_remainder(
            base, state, scenario, travel_fn, config, trigger=event.id, extra_pool=orphaned
        )

    if kind in ("traffic_update", "delay_observed"):
        late = predicted_lateness(plan, state, scenario, travel_fn)
        worst = max(late.values(), default=0.0)
        if worst <= theta:
            return NoChange(f"below_threshold:{worst:.1f}", event.id)
        return reoptimize_remainder(plan, state, scenario, travel_fn, config, trigger=event.id)

    raise IllegalEvent(f"unhandled event kind {kind!r}")


def validate_remainder(
    plan: Plan, state: ExecutionState, scenario: Scenario, travel_fn: TravelFn
) -> list:
    """Validator for the pending portion of an in-execution plan.

    Checks capacity over the whole route, and window/shift/timing consistency
    of pending stops propagated from the vehicle's current position.
    """
    from .domain import Violation

    violations = []
    for ri, route in enumerate(plan.routes):
        vehicle = scenario.vehicles[route.vehicle_id]
        load = sum(scenario.orders[oid].demand for oid in route.order_ids())
        if load > vehicle.capacity:
            violations.append(Violation("capacity", ri, None, None, f"load {load} > {vehicle.capacity}"))
        ctx = remainder_context(route, state, scenario, travel_fn)
        if ctx is None:
            continue
        _, pending = route_progress(route, state)
        result = propagate(pending, ctx, scenario.orders, travel_fn)
        if isinstance(result, Infeasible):
            violations.append(Violation(result.reason, ri, None, None, "pending tail infeasible"))
            continue
        times, _, _ = result
        stored = [s for s in route.customer_stops() if s.order_id in pending]
        for si, (stop, (arrival, wait, start, depart)) in enumerate(zip(stored, times)):
            if abs(stop.service_start - start) > 1e-6:
                violations.append(
                    Violation("timing", ri, si, stop.order_id, f"stored {stop.service_start} != {start}")
                )
    return violations


@dataclass
class PlanManager:
    """Serial event-processing loop for one active plan.

    Guards against replayed / stale events and keeps the revision history.
    """

    plan: Plan
    state: ExecutionState
    scenario: Scenario
    travel_fn: TravelFn
    config: SolverConfig
    theta: float = DEFAULT_THETA
    applied_events: set = field(default_factory=set)
    revisions: list = field(default_factory=list)  # [(revision_plan, diff, trigger)]

    def __post_init__(self):
        if not self.revisions:
            self.revisions = [(self.plan, {"moved": {}, "removed": [], "added": {}}, None)]

    def process(self, event: Event):
        if event.id in self.applied_events:
            raise StaleRevision(f"event {event.id!r} already applied")
        expected = event.payload.get("plan_revision")
        if expected is not None and expected < self.plan.revision:
            raise StaleRevision(
                f"event {event.id!r} targets revision {expected}, current is {self.plan.revision}"
            )
        result = apply_event(
            self.plan, self.state, event, self.scenario, self.travel_fn, self.config, self.theta
        )
        self.applied_events.add(event.id)
        if isinstance(result, ReplanResult):
            self.plan = result.plan
            self.revisions.append((result.plan, result.diff, event.id))
        return result
