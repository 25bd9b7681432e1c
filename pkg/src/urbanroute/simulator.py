"""Discrete-tick fleet simulator: executes a plan on the road network with
noisy realized speeds and scripted incidents, emits GPS pings and a journal,
and raises deviation events for the dynamic router."""
from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from typing import Optional

from .domain import Event, Plan, Scenario, TravelFn
from .dynamic_router import ExecutionState, VehicleExecState, predicted_lateness, route_progress
from .network import RoadNetwork, shortest_path


class SimError(Exception):
    pass


class InvalidPlan(SimError):
    pass


@dataclass(frozen=True)
class Incident:
    edge_id: str
    start: float
    end: float
    speed_factor: float

    def __post_init__(self):
        if not (0 < self.speed_factor <= 1):
            raise ValueError("speed_factor must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "edge_id": self.edge_id,
            "start": self.start,
            "end": self.end,
            "speed_factor": self.speed_factor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Incident":
        return cls(d["edge_id"], d["start"], d["end"], d["speed_factor"])


@dataclass
class SimConfig:
    seed: int = 0
    tick_seconds: float = 10.0
    speed_noise_sigma: float = 0.1
    ping_interval_seconds: float = 30.0
    incidents: list = field(default_factory=list)

    def __post_init__(self):
        if self.tick_seconds <= 0:
            raise ValueError("tick_seconds must be > 0")
        if self.ping_interval_seconds % self.tick_seconds != 0:
            raise ValueError("tick_seconds must divide ping_interval_seconds")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "tick_seconds": self.tick_seconds,
            "speed_noise_sigma": self.speed_noise_sigma,
            "ping_interval_seconds": self.ping_interval_seconds,
            "incidents": [i.to_dict() for i in self.incidents],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(
            seed=d.get("seed", 0),
            tick_seconds=d.get("tick_seconds", 10.0),
            speed_noise_sigma=d.get("speed_noise_sigma", 0.1),
            ping_interval_seconds=d.get("ping_interval_seconds", 30.0),
            incidents=[Incident.from_dict(i) for i in d.get("incidents", [])],
        )


NOISE_CLAMP = (0.3, 2.0)


@dataclass
class _VehicleSim:
    vehicle_id: str
    depot_node: str
    departure_time: float
    pending: list  # order ids still to visit
    phase: str = "idle"  # idle | driving | waiting | serving | done
    node: str = ""
    target_order: Optional[str] = None  # None while returning to depot
    path_edges: list = field(default_factory=list)
    edge_index: int = 0
    offset: float = 0.0
    noise_factor: float = 1.0
    until: float = 0.0  # waiting/serving end time
    returned: bool = False


class Simulator:
    def __init__(self, plan: Plan, scenario: Scenario, network: RoadNetwork, config: SimConfig):
        for route in plan.routes:
            if route.vehicle_id not in scenario.vehicles:
                raise InvalidPlan(f"plan references unknown vehicle {route.vehicle_id!r}")
        self.plan = plan
        self.scenario = scenario
        self.network = network
        self.config = config
        self.rng = random.Random(config.seed)
        self.journal: list = []
        self.pings: list = []
        self._fired_revisions: set = set()
        departures = [r.departure_time for r in plan.routes] or [0.0]
        self.clock = min(departures)
        self.exec_state = ExecutionState(clock=self.clock, vehicles={})
        self.vehicles: dict[str, _VehicleSim] = {}
        for route in plan.routes:
            vehicle = scenario.vehicles[route.vehicle_id]
            depot = scenario.depots[vehicle.depot_id]
            self.vehicles[route.vehicle_id] = _VehicleSim(
                vehicle_id=route.vehicle_id,
                depot_node=depot.location,
                departure_time=route.departure_time,
                pending=route.order_ids(),
                node=depot.location,
            )
            self.exec_state.vehicles[route.vehicle_id] = VehicleExecState(
                position_node=depot.location, position_time=route.departure_time
            )
        self._record(
            "sim_start",
            clock=self.clock,
            plan_revision=plan.revision,
            vehicles=sorted(self.vehicles),
        )

    # -- journal helpers ---------------------------------------------------
    def _record(self, kind: str, **fields):
        rec = {"t": round(self.clock, 6), "kind": kind}
        rec.update(fields)
        self.journal.append(rec)

    def _record_at(self, t: float, kind: str, **fields):
        rec = {"t": round(t, 6), "kind": kind}
        rec.update(fields)
        self.journal.append(rec)

    # -- speed model -------------------------------------------------------
    def _incident_factor(self, edge_id: str, t: float) -> float:
        factor = 1.0
        for inc in self.config.incidents:
            if inc.edge_id == edge_id and inc.start <= t < inc.end:
                factor = min(factor, inc.speed_factor)
        return factor

    def _draw_noise(self) -> float:
        if self.config.speed_noise_sigma <= 0:
            return 1.0
        f = math.exp(self.rng.gauss(0.0, self.config.speed_noise_sigma))
        return min(max(f, NOISE_CLAMP[0]), NOISE_CLAMP[1])

    # -- plan adoption -----------------------------------------------------
    def adopt_plan(self, new_plan: Plan):
        """Take over a replanned revision; committed work is untouched by
        construction, so only the pending order lists change."""
        self.plan = new_plan
        route_by_vid = {r.vehicle_id: r for r in new_plan.routes}
        for vid, vsim in self.vehicles.items():
            route = route_by_vid.get(vid)
            if route is None:
                vsim.pending = []
                continue
            if self.scenario.vehicles[vid].status == "broken":
                vsim.pending = []
                vsim.phase = "done"
                continue
            _, pending = route_progress(route, self.exec_state)
            vsim.pending = list(pending)
            if vsim.phase == "done" and pending:
                vsim.phase = "idle"
                vsim.returned = False
        for vid, route in route_by_vid.items():
            if vid not in self.vehicles and route.customer_stops():
                vehicle = self.scenario.vehicles[vid]
                depot = self.scenario.depots[vehicle.depot_id]
                self.vehicles[vid] = _VehicleSim(
                    vehicle_id=vid,
                    depot_node=depot.location,
                    departure_time=route.departure_time,
                    pending=route.order_ids(),
                    node=depot.location,
                )
                self.exec_state.vehicles[vid] = VehicleExecState(
                    position_node=depot.location, position_time=route.departure_time
                )
        self._record("plan_adopted", revision=new_plan.revision)

    # -- movement ----------------------------------------------------------
    def _start_leg(self, vsim: _VehicleSim, t: float, target_order: Optional[str]):
        dst = (
            self.scenario.orders[target_order].location
            if target_order is not None
            else vsim.depot_node
        )
        vs = self.exec_state.vehicles[vsim.vehicle_id]
        vs.in_progress = target_order
        if dst == vsim.node:
            vsim.path_edges = []
        else:
            path, _, _ = shortest_path(self.network, vsim.node, dst, t)
            edges = []
            by_pair = {}
            for e in self.network.edges.values():
                key = (e.from_node, e.to_node)
                if key not in by_pair or e.length < by_pair[key].length:
                    by_pair[key] = e
            for a, b in zip(path, path[1:]):
                edges.append(by_pair[(a, b)])
            vsim.path_edges = edges
        vsim.edge_index = 0
        vsim.offset = 0.0
        vsim.target_order = target_order
        vsim.phase = "driving"
        vsim.noise_factor = self._draw_noise() if vsim.path_edges else 1.0
        self._record_at(t, "leg_start", vehicle_id=vsim.vehicle_id, target=target_order, from_node=vsim.node)
        if target_order is not None:
            order = self.scenario.orders[target_order]
            if order.status == "planned":
                from .domain import transition_order_status

                self.scenario.orders[target_order] = transition_order_status(order, "in_transit")

    def _arrive(self, vsim: _VehicleSim, t: float):
        vs = self.exec_state.vehicles[vsim.vehicle_id]
        if vsim.target_order is None:
            vsim.phase = "done" if not vsim.pending else "idle"
            vsim.returned = not vsim.pending
            vs.position_node = vsim.node
            vs.position_time = t
            self._record_at(t, "return", vehicle_id=vsim.vehicle_id)
            return
        order = self.scenario.orders[vsim.target_order]
        self._record_at(t, "arrive", vehicle_id=vsim.vehicle_id, order_id=order.id)
        vsim.phase = "waiting"
        vsim.until = max(t, order.time_window.earliest)

    def _finish_service(self, vsim: _VehicleSim, t: float):
        oid = vsim.target_order
        vs = self.exec_state.vehicles[vsim.vehicle_id]
        vs.completed.append(oid)
        vs.in_progress = None
        vs.position_node = vsim.node
        vs.position_time = t
        order = self.scenario.orders[oid]
        if order.status == "in_transit":
            from .domain import transition_order_status

            self.scenario.orders[oid] = transition_order_status(order, "delivered")
        self._record_at(t, "service_end", vehicle_id=vsim.vehicle_id, order_id=oid)
        if oid in vsim.pending:
            vsim.pending.remove(oid)
        vsim.target_order = None
        if vsim.pending:
            self._start_leg(vsim, t, vsim.pending[0])
        else:
            self._start_leg(vsim, t, None)

    def _advance_vehicle(self, vsim: _VehicleSim, t_end: float):
        t = self.clock
        guard = 0
        while t < t_end - 1e-9 and vsim.phase != "done":
            guard += 1
            if guard > 100000:
                raise SimError("simulation stalled")
            if vsim.phase == "idle":
                start_at = max(t, vsim.departure_time)
                if not vsim.pending:
                    if vsim.node == vsim.depot_node:
                        vsim.phase = "done"
                        continue
                    if start_at >= t_end:
                        return
                    self._start_leg(vsim, start_at, None)
                    t = start_at
                    continue
                if start_at >= t_end:
                    return
                t = start_at
                self._record_at(t, "depart", vehicle_id=vsim.vehicle_id)
                self._start_leg(vsim, t, vsim.pending[0])
            elif vsim.phase == "driving":
                if not vsim.path_edges:
                    self._arrive(vsim, t)
                    continue
                edge = vsim.path_edges[vsim.edge_index]
                profile = self.network.profile_for(edge)
                speed = (
                    profile.speed_at(t)
                    * vsim.noise_factor
                    * self._incident_factor(edge.id, t)
                )
                time_to_end = (edge.length - vsim.offset) / speed
                if t + time_to_end > t_end + 1e-9:
                    vsim.offset += speed * (t_end - t)
                    return
                t += time_to_end
                vs = self.exec_state.vehicles[vsim.vehicle_id]
                vsim.node = edge.to_node
                vs.position_node = vsim.node
                vs.position_time = t
                vsim.edge_index += 1
                vsim.offset = 0.0
                if vsim.edge_index >= len(vsim.path_edges):
                    self._arrive(vsim, t)
                else:
                    vsim.noise_factor = self._draw_noise()
            elif vsim.phase == "waiting":
                if vsim.until > t_end:
                    return
                t = max(t, vsim.until)
                order = self.scenario.orders[vsim.target_order]
                self._record_at(t, "service_start", vehicle_id=vsim.vehicle_id, order_id=order.id)
                vsim.phase = "serving"
                vsim.until = t + order.service_duration
            elif vsim.phase == "serving":
                if vsim.until > t_end:
                    return
                t = max(t, vsim.until)
                self._finish_service(vsim, t)

    def _vehicle_lonlat(self, vsim: _VehicleSim):
        if vsim.phase == "driving" and vsim.path_edges:
            edge = vsim.path_edges[vsim.edge_index]
            a = self.network.nodes[edge.from_node]
            b = self.network.nodes[edge.to_node]
            frac = vsim.offset / edge.length
            return a.lon + (b.lon - a.lon) * frac, a.lat + (b.lat - a.lat) * frac
        n = self.network.nodes[vsim.node]
        return n.lon, n.lat

    def tick(self, dt: Optional[float] = None):
        dt = dt if dt is not None else self.config.tick_seconds
        if dt <= 0:
            raise ValueError("dt must be > 0")
        t_end = self.clock + dt
        for vid in sorted(self.vehicles):
            self._advance_vehicle(self.vehicles[vid], t_end)
        self.clock = t_end
        self.exec_state.clock = t_end
        if t_end % self.config.ping_interval_seconds < 1e-9:
            for vid in sorted(self.vehicles):
                vsim = self.vehicles[vid]
                if vsim.phase == "done":
                    continue
                lon, lat = self._vehicle_lonlat(vsim)
                ping = {"vehicle_id": vid, "lon": lon, "lat": lat, "timestamp": t_end}
                self.pings.append(ping)
                self._record("ping", **ping)
        return self

    def completed(self) -> bool:
        return all(v.phase == "done" for v in self.vehicles.values())

    def run(self, max_ticks: int = 100000, on_tick=None):
        """Tick until every vehicle is done; ``on_tick(sim)`` can inject events."""
        for _ in range(max_ticks):
            if self.completed():
                break
            self.tick()
            if on_tick is not None:
                on_tick(self)
        self._record("sim_end", clock=self.clock)
        return self

    # -- deviation detection ----------------------------------------------
    def detect_deviation(self, travel_fn: TravelFn, theta: float, event_id: str) -> Optional[Event]:
        """Emit one delay_observed event per plan revision when predicted
        lateness from actual positions exceeds the threshold."""
        if self.plan.revision in self._fired_revisions:
            return None
        late = predicted_lateness(self.plan, self.exec_state, self.scenario, travel_fn)
        worst = max(late.values(), default=0.0)
        if worst <= theta:
            return None
        self._fired_revisions.add(self.plan.revision)
        event = Event(
            id=event_id,
            timestamp=self.clock,
            kind="delay_observed",
            payload={"max_lateness": worst, "plan_revision": self.plan.revision},
        )
        self._record("deviation", event_id=event_id, max_lateness=worst)
        return event

    # -- digests and replay ------------------------------------------------
    def state_digest(self) -> str:
        """Digest of the observable end state (clock, deliveries, done flags).

        For a completed run, replaying the journal yields the same digest.
        """
        doc = {
            "clock": round(self.clock, 6),
            "vehicles": {
                vid: {
                    "completed": list(self.exec_state.vehicles[vid].completed),
                    "done": self.vehicles[vid].phase == "done",
                }
                for vid in sorted(self.vehicles)
            },
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def replay_journal_digest(journal: list) -> str:
    """Reconstruct the final-state digest from a journal alone."""
    completed: dict[str, list] = {}
    done: dict[str, bool] = {}
    clock = 0.0
    for rec in journal:
        clock = max(clock, rec["t"])
        kind = rec["kind"]
        vid = rec.get("vehicle_id")
        if kind == "sim_start":
            for v in rec.get("vehicles", []):
                completed.setdefault(v, [])
                done[v] = True  # vehicles with no work finish immediately
        elif kind == "service_end":
            completed.setdefault(vid, []).append(rec["order_id"])
        elif kind == "leg_start":
            done[vid] = False
        elif kind == "return":
            done[vid] = True
        elif kind == "sim_end":
            clock = rec["clock"]
    return hashlib.sha256(
        json.dumps(
            {
                "clock": round(clock, 6),
                "vehicles": {
                    vid: {"completed": completed.get(vid, []), "done": done.get(vid, True)}
                    for vid in sorted(completed)
                },
            },
            sort_keys=True,
        ).encode()
    ).hexdigest()


def journal_to_lines(journal: list) -> str:
    return "\n".join(json.dumps(rec, sort_keys=True) for rec in journal) + "\n"
