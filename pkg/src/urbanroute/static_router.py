"""Static VRPTW solver: sequential cheapest insertion, LNS improvement with
random/worst removal and regret-2 repair, plus an exhaustive oracle for tests.

The solver works on per-vehicle contexts (start node/time, remaining capacity,
return node, latest return) so the dynamic router can reuse it for replanning
the pending remainder of a plan in execution.
"""
from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Optional

from .domain import (
    Order,
    Plan,
    Route,
    Scenario,
    Stop,
    TravelFn,
)

TIME_EPS = 1e-9


@dataclass
class SolverConfig:
    seed: int = 0
    lns_iterations: int = 2000
    destroy_fraction: float = 0.15
    regret_k: int = 2
    time_limit_seconds: Optional[float] = None

    def __post_init__(self):
        if self.lns_iterations < 0:
            raise ValueError("lns_iterations must be >= 0")
        if not (0 < self.destroy_fraction < 1):
            raise ValueError("destroy_fraction must be in (0,1)")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "lns_iterations": self.lns_iterations,
            "destroy_fraction": self.destroy_fraction,
            "regret_k": self.regret_k,
            "time_limit_seconds": self.time_limit_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(
            seed=d.get("seed", 0),
            lns_iterations=d.get("lns_iterations", 2000),
            destroy_fraction=d.get("destroy_fraction", 0.15),
            regret_k=d.get("regret_k", 2),
            time_limit_seconds=d.get("time_limit_seconds"),
        )


@dataclass(frozen=True)
class Infeasible:
    reason: str


@dataclass
class VehicleContext:
    """Where a vehicle's plannable work starts and ends."""

    vehicle_id: str
    start_node: str
    start_time: float
    end_node: str
    capacity: int
    fixed_cost: float
    cost_per_meter: float
    latest_return: Optional[float] = None
    charge_fixed: bool = True  # False when the vehicle is already out on a route
    driver_id: Optional[str] = None


def contexts_from_scenario(scenario: Scenario, start_time: float = 0.0) -> list:
    """One context per available vehicle, starting and ending at its depot."""
    contexts = []
    for vid in sorted(scenario.vehicles):
        vehicle = scenario.vehicles[vid]
        if vehicle.status != "available":
            continue
        depot = scenario.depots[vehicle.depot_id]
        driver = scenario.driver_for_vehicle(vid)
        depart = start_time
        latest_return = None
        if driver is not None:
            depart = max(depart, driver.shift.earliest)
            latest_return = driver.shift.latest
        contexts.append(
            VehicleContext(
                vehicle_id=vid,
                start_node=depot.location,
                start_time=depart,
                end_node=depot.location,
                capacity=vehicle.capacity,
                fixed_cost=vehicle.fixed_cost,
                cost_per_meter=vehicle.cost_per_meter,
                latest_return=latest_return,
                driver_id=driver.id if driver else None,
            )
        )
    return contexts


def propagate(seq: list, ctx: VehicleContext, orders: dict, travel_fn: TravelFn):
    """Forward schedule propagation for an order-id sequence.

    Returns (stop_times, return_arrival, meters) or an Infeasible.  stop_times
    entries are (arrival, wait, service_start, departure).
    """
    load = 0
    for oid in seq:
        load += orders[oid].demand
    if load > ctx.capacity:
        return Infeasible("capacity")
    t = ctx.start_time
    node = ctx.start_node
    meters = 0.0
    times = []
    for oid in seq:
        order = orders[oid]
        tt, m = travel_fn(node, order.location, t)
        arrival = t + tt
        meters += m
        service_start = max(arrival, order.time_window.earliest)
        if service_start > order.time_window.latest + TIME_EPS:
            return Infeasible("time_window")
        times.append((arrival, service_start - arrival, service_start, service_start + order.service_duration))
        t = service_start + order.service_duration
        node = order.location
    tt, m = travel_fn(node, ctx.end_node, t)
    meters += m
    return_arrival = t + tt
    if ctx.latest_return is not None and return_arrival > ctx.latest_return + TIME_EPS:
        return Infeasible("shift")
    return times, return_arrival, meters


def schedule_route(
    seq: list, ctx: VehicleContext, orders: dict, travel_fn: TravelFn
):
    """Build a full Route (depot markers included) for an order sequence,
    or an Infeasible naming the violated constraint."""
    result = propagate(seq, ctx, orders, travel_fn)
    if isinstance(result, Infeasible):
        return result
    times, return_arrival, _ = result
    stops = [Stop(None, ctx.start_time, 0.0, ctx.start_time, ctx.start_time)]
    for oid, (arrival, wait, start, depart) in zip(seq, times):
        stops.append(Stop(oid, arrival, wait, start, depart))
    stops.append(Stop(None, return_arrival, 0.0, return_arrival, return_arrival))
    return Route(
        vehicle_id=ctx.vehicle_id,
        driver_id=ctx.driver_id,
        departure_time=ctx.start_time,
        stops=stops,
    )


class _Solver:
    """Shared machinery for construction and LNS over vehicle contexts."""

    def __init__(self, contexts: list, orders: dict, travel_fn: TravelFn, config: SolverConfig):
        self.contexts = contexts
        self.orders = orders
        self.travel_fn = travel_fn
        self.config = config
        self._eval_cache: dict = {}

    def route_eval(self, ci: int, seq: tuple):
        """(cost, meters) of a context's sequence, or None if infeasible. Cached."""
        key = (ci, seq)
        hit = self._eval_cache.get(key, 0)
        if hit != 0:
            return hit
        ctx = self.contexts[ci]
        result = propagate(list(seq), ctx, self.orders, self.travel_fn)
        if isinstance(result, Infeasible):
            value = None
        else:
            _, _, meters = result
            cost = ctx.cost_per_meter * meters
            if seq and ctx.charge_fixed:
                cost += ctx.fixed_cost
            value = (cost, meters)
        self._eval_cache[key] = value
        return value

    def solution_cost(self, routes: list) -> float:
        total = 0.0
        for ci, seq in enumerate(routes):
            ev = self.route_eval(ci, tuple(seq))
            total += ev[0]
        return total

    def best_insertions(self, oid: str, routes: list, k: int = 2):
        """Up to ``k`` cheapest feasible insertions for an order, as
        (cost_delta, context_index, position), deterministic order."""
        candidates = []
        for ci, seq in enumerate(routes):
            base = self.route_eval(ci, tuple(seq))
            if base is None:
                continue
            for pos in range(len(seq) + 1):
                new_seq = tuple(seq[:pos]) + (oid,) + tuple(seq[pos:])
                ev = self.route_eval(ci, new_seq)
                if ev is None:
                    continue
                candidates.append((ev[0] - base[0], ci, pos))
        candidates.sort()
        return candidates[:k]

    def construct(self, order_ids: list):
        """Sequential cheapest insertion: one open route at a time."""
        routes = [[] for _ in self.contexts]
        remaining = sorted(order_ids)
        for ci in range(len(self.contexts)):
            while remaining:
                best = None
                base = self.route_eval(ci, tuple(routes[ci]))
                if base is None:
                    break
                for oid in remaining:
                    for pos in range(len(routes[ci]) + 1):
                        new_seq = tuple(routes[ci][:pos]) + (oid,) + tuple(routes[ci][pos:])
                        ev = self.route_eval(ci, new_seq)
                        if ev is None:
                            continue
                        delta = ev[0] - base[0]
                        cand = (delta, oid, pos)
                        if best is None or cand < best:
                            best = cand
                if best is None:
                    break
                _, oid, pos = best
                routes[ci].insert(pos, oid)
                remaining.remove(oid)
            if not remaining:
                break
        return routes, remaining

    def regret_repair(self, routes: list, pool: list):
        """Regret-2 insertion of pooled orders; returns leftover unassigned."""
        pool = sorted(pool)
        unassigned = []
        while pool:
            best_choice = None
            for oid in pool:
                ins = self.best_insertions(oid, routes, k=max(2, self.config.regret_k))
                if not ins:
                    continue
                if len(ins) == 1:
                    regret = math.inf
                else:
                    regret = ins[1][0] - ins[0][0]
                # Highest regret first; ties by cheaper insertion, then id.
                cand = (-regret, ins[0][0], oid, ins[0][1], ins[0][2])
                if best_choice is None or cand < best_choice:
                    best_choice = cand
            if best_choice is None:
                unassigned.extend(pool)
                break
            _, _, oid, ci, pos = best_choice
            routes[ci].insert(pos, oid)
            pool.remove(oid)
        return unassigned

    def removal_saving(self, ci: int, seq: list, pos: int) -> float:
        with_cost = self.route_eval(ci, tuple(seq))[0]
        without = tuple(seq[:pos]) + tuple(seq[pos + 1 :])
        ev = self.route_eval(ci, without)
        # Removal keeps feasibility under FIFO; guard anyway.
        if ev is None:
            return 0.0
        return with_cost - ev[0]

    def lns(self, routes: list, unassigned: list):
        """Iterated destroy/repair; lexicographic accept on (unassigned, cost)."""
        import time as _time

        rng = random.Random(self.config.seed)
        deadline = None
        if self.config.time_limit_seconds is not None:
            deadline = _time.monotonic() + self.config.time_limit_seconds
        current = [list(r) for r in routes]
        current_un = sorted(unassigned)
        current_key = (len(current_un), self.solution_cost(current))
        best, best_un, best_key = [list(r) for r in current], list(current_un), current_key

        for it in range(self.config.lns_iterations):
            if deadline is not None and _time.monotonic() > deadline:
                break
            routed = [(ci, pos, oid) for ci, seq in enumerate(current) for pos, oid in enumerate(seq)]
            if not routed and not current_un:
                break
            q = max(1, math.ceil(self.config.destroy_fraction * len(routed))) if routed else 0
            cand = [list(r) for r in current]
            removed = []
            if routed:
                if it % 2 == 0:
                    chosen = rng.sample(sorted(oid for _, _, oid in routed), min(q, len(routed)))
                else:
                    savings = sorted(
                        ((-self.removal_saving(ci, current[ci], pos), oid) for ci, pos, oid in routed),
                    )
                    chosen = [oid for _, oid in savings[:q]]
                removed = sorted(chosen)
                for ci in range(len(cand)):
                    cand[ci] = [oid for oid in cand[ci] if oid not in removed]
            pool = removed + list(current_un)
            cand_un = sorted(self.regret_repair(cand, pool))
            cand_key = (len(cand_un), self.solution_cost(cand))
            if cand_key[0] < current_key[0] or (
                cand_key[0] == current_key[0] and cand_key[1] < current_key[1] - TIME_EPS
            ):
                current, current_un, current_key = cand, cand_un, cand_key
                if cand_key[0] < best_key[0] or (
                    cand_key[0] == best_key[0] and cand_key[1] < best_key[1] - TIME_EPS
                ):
                    best = [list(r) for r in cand]
                    best_un, best_key = list(cand_un), cand_key
        return best, best_un


def materialize_plan(
    routes: list,
    unassigned: list,
    contexts: list,
    orders: dict,
    travel_fn: TravelFn,
    plan_id: str = "plan-0",
    revision: int = 0,
    created_at: float = 0.0,
    kind: str = "static",
) -> Plan:
    """Turn sequences into a Plan with scheduled stops and a recomputed cost."""
    plan_routes = []
    total = 0.0
    for ctx, seq in zip(contexts, routes):
        if not seq:
            continue
        route = schedule_route(list(seq), ctx, orders, travel_fn)
        assert not isinstance(route, Infeasible), f"materializing infeasible route: {route.reason}"
        result = propagate(list(seq), ctx, orders, travel_fn)
        _, _, meters = result
        total += ctx.cost_per_meter * meters
        if ctx.charge_fixed:
            total += ctx.fixed_cost
        plan_routes.append(route)
    return Plan(
        id=plan_id,
        routes=plan_routes,
        unassigned=sorted(unassigned),
        total_cost=total,
        revision=revision,
        created_at=created_at,
        kind=kind,
    )


def _plannable_order_ids(scenario: Scenario) -> list:
    return sorted(
        oid for oid, o in scenario.orders.items() if o.status in ("pending", "planned", "unassigned")
    )


def construct_initial(
    scenario: Scenario,
    travel_fn: TravelFn,
    config: SolverConfig,
    start_time: float = 0.0,
    plan_id: str = "plan-0",
) -> Plan:
    contexts = contexts_from_scenario(scenario, start_time)
    solver = _Solver(contexts, scenario.orders, travel_fn, config)
    routes, unassigned = solver.construct(_plannable_order_ids(scenario))
    return materialize_plan(
        routes, unassigned, contexts, scenario.orders, travel_fn, plan_id=plan_id, created_at=start_time
    )


def lns_improve(
    plan: Plan,
    scenario: Scenario,
    travel_fn: TravelFn,
    config: SolverConfig,
    start_time: float = 0.0,
) -> Plan:
    contexts = contexts_from_scenario(scenario, start_time)
    by_vid = {ctx.vehicle_id: i for i, ctx in enumerate(contexts)}
    routes = [[] for _ in contexts]
    for route in plan.routes:
        if route.vehicle_id in by_vid:
            routes[by_vid[route.vehicle_id]] = route.order_ids()
    solver = _Solver(contexts, scenario.orders, travel_fn, config)
    best, best_un = solver.lns(routes, list(plan.unassigned))
    return materialize_plan(
        best,
        best_un,
        contexts,
        scenario.orders,
        travel_fn,
        plan_id=plan.id,
        revision=plan.revision,
        created_at=plan.created_at,
        kind=plan.kind,
    )


def solve_static(
    scenario: Scenario,
    travel_fn: TravelFn,
    config: SolverConfig,
    start_time: float = 0.0,
    plan_id: str = "plan-0",
) -> Plan:
    """Initial construction followed by LNS improvement; revision 0, kind static."""
    initial = construct_initial(scenario, travel_fn, config, start_time, plan_id)
    improved = lns_improve(initial, scenario, travel_fn, config, start_time)
    improved.kind = "static"
    improved.revision = 0
    return improved


def optimize_contexts(
    contexts: list,
    orders: dict,
    travel_fn: TravelFn,
    config: SolverConfig,
    initial_routes: Optional[list] = None,
    initial_unassigned: Optional[list] = None,
):
    """Construction + LNS over arbitrary contexts; returns (routes, unassigned).

    Used by the dynamic router to replan pending work from current positions.
    """
    solver = _Solver(contexts, orders, travel_fn, config)
    if initial_routes is None:
        routes, unassigned = solver.construct(sorted(orders))
    else:
        routes = [list(r) for r in initial_routes]
        unassigned = list(initial_unassigned or [])
    best, best_un = solver.lns(routes, unassigned)
    return best, best_un


class TooLarge(Exception):
    pass


def brute_force_oracle(
    scenario: Scenario,
    travel_fn: TravelFn,
    start_time: float = 0.0,
    max_customers: int = 7,
    max_vehicles: int = 3,
    contexts: Optional[list] = None,
    plan_id: str = "oracle-0",
) -> Plan:
    """Exhaustive enumeration over all vehicle assignments and visit orders.

    Objective is lexicographic (fewest unassigned, cost, fewest vehicles,
    smallest order-id route signature); only valid at toy sizes.
    """
    if contexts is None:
        contexts = contexts_from_scenario(scenario, start_time)
    order_ids = _plannable_order_ids(scenario)
    if len(order_ids) > max_customers:
        raise TooLarge(f"{len(order_ids)} customers > {max_customers}")
    if len(contexts) > max_vehicles:
        raise TooLarge(f"{len(contexts)} vehicles > {max_vehicles}")
    solver = _Solver(contexts, scenario.orders, travel_fn, SolverConfig(lns_iterations=0))
    k = len(contexts)
    best = None  # (unassigned_count, cost, used_vehicles, signature, routes, unassigned)
    for assignment in itertools.product(range(k + 1), repeat=len(order_ids)):
        groups = [[] for _ in range(k)]
        unassigned = []
        for oid, g in zip(order_ids, assignment):
            if g == k:
                unassigned.append(oid)
            else:
                groups[g].append(oid)
        # Best permutation per group independently.
        routes = []
        feasible = True
        cost = 0.0
        for ci, group in enumerate(groups):
            if not group:
                routes.append([])
                continue
            group_best = None
            for perm in itertools.permutations(group):
                ev = solver.route_eval(ci, perm)
                if ev is None:
                    continue
                cand = (ev[0], perm)
                if group_best is None or cand < group_best:
                    group_best = cand
            if group_best is None:
                feasible = False
                break
            cost += group_best[0]
            routes.append(list(group_best[1]))
        if not feasible:
            continue
        signature = tuple(tuple(r) for r in routes)
        used = sum(1 for r in routes if r)
        key = (len(unassigned), cost, used, signature)
        if best is None or key < best[:4]:
            best = (*key, routes, unassigned)
    assert best is not None  # all-unassigned is always feasible
    routes, unassigned = best[4], best[5]
    return materialize_plan(
        routes, unassigned, contexts, scenario.orders, travel_fn, plan_id=plan_id, created_at=start_time
    )
