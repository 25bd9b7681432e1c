"""HTTP/JSON dispatch service: asset and order intake, async plan jobs,
event ingestion with dynamic rerouting, simulation control and tracking.

State is reconstructed from the append-only storage log on startup, so the
service is stateless between requests apart from that log.
"""
from __future__ import annotations

import os
import threading
import uuid
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse

from . import domain
from .domain import Event, Order, Plan, Scenario, ValidationError
from .dynamic_router import (
    DynamicError,
    ExecutionState,
    IllegalEvent,
    NoChange,
    PlanManager,
    ReplanResult,
    StaleRevision,
    UnknownOrder,
    VehicleExecState,
)
from .forecast import ForecastModel
from .network import RoadNetwork, Unreachable, build_matrix, load_network, shortest_path
from .simulator import SimConfig, Simulator
from .static_router import SolverConfig, solve_static
from .storage import Storage

DEFAULT_MATRIX_BUCKET_SECONDS = 1800
DEFAULT_MATRIX_HORIZON = 12 * 3600


def _exec_state_to_doc(state: ExecutionState) -> dict:
    return {
        "clock": state.clock,
        "vehicles": {
            vid: {
                "position_node": vs.position_node,
                "position_time": vs.position_time,
                "completed": list(vs.completed),
                "in_progress": vs.in_progress,
                "broken": vs.broken,
            }
            for vid, vs in state.vehicles.items()
        },
    }


def _exec_state_from_doc(doc: dict) -> ExecutionState:
    return ExecutionState(
        clock=doc["clock"],
        vehicles={
            vid: VehicleExecState(
                position_node=v["position_node"],
                position_time=v["position_time"],
                completed=list(v["completed"]),
                in_progress=v.get("in_progress"),
                broken=v.get("broken", False),
            )
            for vid, v in doc["vehicles"].items()
        },
    )


class PlanEntry:
    """Everything the service knows about one plan job."""

    def __init__(self, plan_id: str, config: dict, depart_time: float, order_ids: list):
        self.plan_id = plan_id
        self.status = "queued"  # queued | solving | ready | failed
        self.config = config
        self.depart_time = depart_time
        self.order_ids = order_ids
        self.error: Optional[str] = None
        self.revisions: list = []  # [{"plan": doc, "diff": ..., "trigger": ...}]
        self.scenario_doc: Optional[dict] = None
        self.exec_state_doc: Optional[dict] = None
        self.applied_events: set = set()
        self.live_overrides: dict = {}  # edge_id -> live speed (m/s)
        self.manager: Optional[PlanManager] = None
        self.sim: Optional[Simulator] = None
        self.sim_config_doc: Optional[dict] = None
        self.theta: float = float(config.get("theta", 300.0))

    @property
    def current_plan_doc(self) -> Optional[dict]:
        return self.revisions[-1]["plan"] if self.revisions else None


class ServiceState:
    def __init__(self, data_dir: str):
        self.storage = Storage(data_dir)
        self.lock = threading.RLock()
        self.network: Optional[RoadNetwork] = None
        self.network_doc: Optional[dict] = None
        self.depots: dict = {}
        self.vehicles: dict = {}
        self.drivers: dict = {}
        self.orders: dict = {}
        self.plans: dict = {}
        self.pings: list = []
        self.forecast = ForecastModel()
        self.event_count = 0
        self._replay()

    # -- log replay --------------------------------------------------------
    def _replay(self):
        for rec in self.storage.read_all(strict=False):
            if rec.kind == "network":
                self.network_doc = rec.payload
                self.network = load_network(rec.payload)
            elif rec.kind in ("depot", "vehicle", "driver", "order"):
                getattr(self, rec.kind + "s")[rec.id] = rec.payload
            elif rec.kind == "observation_batch":
                from .forecast import SpeedObservation

                self.forecast.ingest(
                    [SpeedObservation(**o) for o in rec.payload["observations"]]
                )
            elif rec.kind == "plan_job":
                p = rec.payload
                entry = self.plans.get(rec.id)
                if entry is None:
                    entry = PlanEntry(rec.id, p.get("config", {}), p.get("depart_time", 0.0), p.get("order_ids", []))
                    self.plans[rec.id] = entry
                entry.status = p["status"]
                entry.error = p.get("error")
            elif rec.kind == "plan_revision":
                entry = self.plans.get(rec.id)
                if entry is not None:
                    p = rec.payload
                    entry.revisions.append(
                        {"plan": p["plan"], "diff": p["diff"], "trigger": p["trigger"]}
                    )
                    entry.scenario_doc = p["scenario"]
                    if p.get("exec_state") is not None:
                        entry.exec_state_doc = p["exec_state"]
                    entry.live_overrides = p.get("live_overrides", {})
            elif rec.kind == "event":
                self.event_count += 1
                plan_id = rec.payload.get("plan_id")
                if plan_id in self.plans:
                    self.plans[plan_id].applied_events.add(rec.id)
            elif rec.kind == "sim":
                entry = self.plans.get(rec.id)
                if entry is not None:
                    entry.sim_config_doc = rec.payload.get("config")
            elif rec.kind == "sim_state":
                entry = self.plans.get(rec.id)
                if entry is not None:
                    entry.exec_state_doc = rec.payload["exec_state"]
                    self.pings.extend(rec.payload.get("pings", []))

    # -- travel function ---------------------------------------------------
    def travel_fn_for(self, entry: PlanEntry):
        if self.network is None:
            raise HTTPException(422, detail="no road network loaded")
        scenario = Scenario.from_dict(entry.scenario_doc)
        locations = sorted(
            {o.location for o in scenario.orders.values()}
            | {d.location for d in scenario.depots.values()}
        )
        net = self.network
        overrides = {}
        for edge_id, live_speed in sorted(entry.live_overrides.items()):
            if edge_id not in net.edges:
                continue
            static = net.profile_for(net.edges[edge_id])
            clock = entry.exec_state_doc["clock"] if entry.exec_state_doc else entry.depart_time
            overrides[edge_id] = self.forecast.blend_realtime(
                edge_id, live_speed, clock, static_profile=static
            )
        if overrides:
            net = net.with_profiles(overrides)
        buckets = list(
            range(
                int(entry.depart_time),
                int(entry.depart_time) + DEFAULT_MATRIX_HORIZON,
                DEFAULT_MATRIX_BUCKET_SECONDS,
            )
        )
        from .network import hybrid_travel_fn

        return hybrid_travel_fn(net, build_matrix(net, locations, buckets))

    def manager_for(self, entry: PlanEntry) -> PlanManager:
        if entry.manager is not None:
            return entry.manager
        scenario = Scenario.from_dict(entry.scenario_doc)
        plan = Plan.from_dict(entry.current_plan_doc)
        if entry.sim is not None:
            state = entry.sim.exec_state
        elif entry.exec_state_doc is not None:
            state = _exec_state_from_doc(entry.exec_state_doc)
        else:
            state = ExecutionState.at_plan_start(plan, scenario)
        entry.manager = PlanManager(
            plan=plan,
            state=state,
            scenario=scenario,
            travel_fn=self.travel_fn_for(entry),
            config=SolverConfig.from_dict(entry.config.get("solver_config", {"lns_iterations": 200})),
            theta=entry.theta,
            applied_events=set(entry.applied_events),
        )
        return entry.manager

    def persist_revision(self, entry: PlanEntry, result: ReplanResult):
        mgr = entry.manager
        entry.revisions.append(
            {"plan": result.plan.to_dict(), "diff": result.diff, "trigger": result.trigger}
        )
        entry.scenario_doc = mgr.scenario.to_dict()
        entry.exec_state_doc = _exec_state_to_doc(mgr.state)
        self.storage.append(
            "plan_revision",
            entry.plan_id,
            {
                "plan": result.plan.to_dict(),
                "diff": result.diff,
                "trigger": result.trigger,
                "scenario": entry.scenario_doc,
                "exec_state": entry.exec_state_doc,
                "live_overrides": entry.live_overrides,
            },
        )
        # Keep the service-level order mirror in sync with the scenario.
        for oid, order in mgr.scenario.orders.items():
            self.orders[oid] = order.to_dict()
            self.storage.append("order", oid, order.to_dict())
        for vid, vehicle in mgr.scenario.vehicles.items():
            self.vehicles[vid] = vehicle.to_dict()


def plan_geojson(network: RoadNetwork, plan: Plan, scenario: Scenario) -> dict:
    """Routes as LineStrings (full road geometry per leg) + order Points."""
    features = []
    for route in plan.routes:
        vehicle = scenario.vehicles[route.vehicle_id]
        depot = scenario.depots[vehicle.depot_id]
        coords: list = []
        node = depot.location
        t = route.departure_time
        for stop in route.stops[1:]:
            target = depot.location if stop.order_id is None else scenario.orders[stop.order_id].location
            try:
                path, _, _ = shortest_path(network, node, target, t)
            except Unreachable:
                path = [node, target]
            seg = [[network.nodes[n].lon, network.nodes[n].lat] for n in path]
            coords.extend(seg if not coords else seg[1:])
            node = target
            t = stop.departure_time
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {
                    "vehicle_id": route.vehicle_id,
                    "stops": route.order_ids(),
                    "departure_time": route.departure_time,
                },
            }
        )
    for oid, order in sorted(scenario.orders.items()):
        if order.status == "cancelled":
            continue
        n = network.nodes.get(order.location)
        if n is None:
            continue
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [n.lon, n.lat]},
                "properties": {
                    "order_id": oid,
                    "status": order.status,
                    "unassigned": oid in plan.unassigned,
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def create_app(data_dir: Optional[str] = None, token: Optional[str] = None) -> FastAPI:
    data_dir = data_dir or os.environ.get("URBANROUTE_DATA_DIR", "./urbanroute-data")
    token = token if token is not None else os.environ.get("URBANROUTE_TOKEN")
    state = ServiceState(data_dir)
    app = FastAPI(title="urbanroute", version="0.1.0")
    app.state.service = state
    solver_slots = threading.Semaphore(4)

    async def require_auth(request: Request):
        if token and request.headers.get("authorization") != f"Bearer {token}":
            raise HTTPException(401, detail="missing or invalid token")

    dep = [Depends(require_auth)]

    @app.exception_handler(ValidationError)
    async def _validation_handler(request, exc):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.exception_handler(domain.EntityReferenceError)
    async def _ref_handler(request, exc):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.get("/api/v1/healthz")
    async def healthz():
        return {"status": "ok"}

    # -- network -----------------------------------------------------------
    @app.post("/api/v1/network", dependencies=dep)
    async def post_network(document: dict):
        try:
            net = load_network(document)
        except Exception as exc:
            raise HTTPException(400, detail=str(exc))
        with state.lock:
            state.network = net
            state.network_doc = document
            state.storage.append("network", "main", document)
        return {"nodes": len(net.nodes), "edges": len(net.edges)}

    @app.get("/api/v1/network", dependencies=dep)
    async def get_network():
        if state.network_doc is None:
            raise HTTPException(404, detail="no network loaded")
        return state.network_doc

    # -- assets ------------------------------------------------------------
    def _validate_asset(kind: str, doc: dict):
        try:
            if kind == "depots":
                parsed = domain.Depot.from_dict(doc)
                if state.network is not None and parsed.location not in state.network.nodes:
                    raise HTTPException(
                        422, detail=[{"rule": "location", "message": f"unknown node {parsed.location!r}"}]
                    )
            elif kind == "vehicles":
                parsed = domain.Vehicle.from_dict(doc)
                if parsed.depot_id not in state.depots:
                    raise HTTPException(
                        422, detail=[{"rule": "depot_id", "message": f"unknown depot {parsed.depot_id!r}"}]
                    )
            elif kind == "drivers":
                parsed = domain.Driver.from_dict(doc)
            else:
                raise HTTPException(404, detail=f"unknown asset kind {kind!r}")
            return parsed.to_dict()
        except (KeyError, TypeError) as exc:
            raise HTTPException(400, detail=f"malformed {kind[:-1]} document: {exc}")
        except ValidationError as exc:
            raise HTTPException(422, detail=[{"rule": "invariant", "message": str(exc)}])

    @app.post("/api/v1/assets/{kind}", dependencies=dep)
    async def post_assets(kind: str, request: Request):
        try:
            body = await request.json()
        except ValueError:
            raise HTTPException(400, detail="body must be JSON")
        docs = body if isinstance(body, list) else [body]
        stored = []
        with state.lock:
            for doc in docs:
                clean = _validate_asset(kind, doc)
                getattr(state, kind)[clean["id"]] = clean
                state.storage.append(kind[:-1], clean["id"], clean)
                stored.append(clean["id"])
        return {"stored": stored}

    @app.get("/api/v1/assets/{kind}", dependencies=dep)
    async def get_assets(kind: str):
        if kind not in ("depots", "vehicles", "drivers"):
            raise HTTPException(404, detail=f"unknown asset kind {kind!r}")
        return sorted(getattr(state, kind).values(), key=lambda d: d["id"])

    # -- orders ------------------------------------------------------------
    @app.post("/api/v1/orders", dependencies=dep)
    async def post_orders(request: Request):
        try:
            body = await request.json()
        except ValueError:
            raise HTTPException(400, detail="body must be JSON")
        docs = body if isinstance(body, list) else [body]
        stored = []
        with state.lock:
            for doc in docs:
                try:
                    order = Order.from_dict(doc)
                except (KeyError, TypeError) as exc:
                    raise HTTPException(400, detail=f"malformed order document: {exc}")
                except ValidationError as exc:
                    raise HTTPException(422, detail=[{"rule": "invariant", "message": str(exc)}])
                if state.network is not None and order.location not in state.network.nodes:
                    raise HTTPException(
                        422,
                        detail=[{"rule": "location", "message": f"unknown node {order.location!r}"}],
                    )
                state.orders[order.id] = order.to_dict()
                state.storage.append("order", order.id, order.to_dict())
                stored.append(order.id)
        return {"stored": stored}

    @app.get("/api/v1/orders", dependencies=dep)
    async def get_orders():
        return sorted(state.orders.values(), key=lambda d: d["id"])

    # -- plans -------------------------------------------------------------
    def _solve_job(entry: PlanEntry):
        try:
            scenario = Scenario.from_dict(entry.scenario_doc)
            travel_fn = state.travel_fn_for(entry)
            config = SolverConfig.from_dict(entry.config.get("solver_config", {}))
            plan = solve_static(
                scenario, travel_fn, config, start_time=entry.depart_time, plan_id=entry.plan_id
            )
            with state.lock:
                for oid in plan.routed_order_ids():
                    order = scenario.orders[oid]
                    if order.status == "pending":
                        scenario.orders[oid] = domain.transition_order_status(order, "planned")
                entry.scenario_doc = scenario.to_dict()
                entry.revisions.append(
                    {"plan": plan.to_dict(), "diff": {"moved": {}, "removed": [], "added": {}}, "trigger": None}
                )
                entry.status = "ready"
                exec_doc = _exec_state_to_doc(ExecutionState.at_plan_start(plan, scenario))
                entry.exec_state_doc = exec_doc
                state.storage.append(
                    "plan_revision",
                    entry.plan_id,
                    {
                        "plan": plan.to_dict(),
                        "diff": {"moved": {}, "removed": [], "added": {}},
                        "trigger": None,
                        "scenario": entry.scenario_doc,
                        "exec_state": exec_doc,
                        "live_overrides": {},
                    },
                )
                state.storage.append(
                    "plan_job",
                    entry.plan_id,
                    {
                        "status": "ready",
                        "config": entry.config,
                        "depart_time": entry.depart_time,
                        "order_ids": entry.order_ids,
                    },
                )
                for oid, order in scenario.orders.items():
                    state.orders[oid] = order.to_dict()
                    state.storage.append("order", oid, order.to_dict())
        except Exception as exc:  # failed job is a terminal, reported state
            with state.lock:
                entry.status = "failed"
                entry.error = str(exc)
                state.storage.append(
                    "plan_job",
                    entry.plan_id,
                    {
                        "status": "failed",
                        "error": str(exc),
                        "config": entry.config,
                        "depart_time": entry.depart_time,
                        "order_ids": entry.order_ids,
                    },
                )
        finally:
            solver_slots.release()

    @app.post("/api/v1/plans", status_code=202, dependencies=dep)
    async def post_plans(body: dict):
        if state.network is None:
            raise HTTPException(422, detail="no road network loaded")
        depart_time = float(body.get("depart_time", 0))
        order_ids = body.get("order_ids")
        config = {
            "solver_config": body.get("solver_config", {}),
            "theta": body.get("theta", 300.0),
        }
        with state.lock:
            if order_ids is None:
                order_ids = sorted(
                    oid for oid, o in state.orders.items() if o.get("status", "pending") == "pending"
                )
            for oid in order_ids:
                if oid not in state.orders:
                    raise HTTPException(404, detail=f"unknown order {oid!r}")
            plan_id = f"plan-{uuid.uuid4().hex[:12]}"
            entry = PlanEntry(plan_id, config, depart_time, list(order_ids))
            entry.scenario_doc = {
                "orders": [state.orders[oid] for oid in order_ids],
                "vehicles": sorted(state.vehicles.values(), key=lambda d: d["id"]),
                "drivers": sorted(state.drivers.values(), key=lambda d: d["id"]),
                "depots": sorted(state.depots.values(), key=lambda d: d["id"]),
            }
            try:
                Scenario.from_dict(entry.scenario_doc)
            except ValidationError as exc:
                raise HTTPException(422, detail=[{"rule": "scenario", "message": str(exc)}])
            if not solver_slots.acquire(blocking=False):
                raise HTTPException(503, detail="solver saturated, retry later")
            entry.status = "solving"
            state.plans[plan_id] = entry
            state.storage.append(
                "plan_job",
                plan_id,
                {
                    "status": "solving",
                    "config": config,
                    "depart_time": depart_time,
                    "order_ids": list(order_ids),
                },
            )
        threading.Thread(target=_solve_job, args=(entry,), daemon=True).start()
        return {"plan_id": plan_id}

    def _entry_or_404(plan_id: str) -> PlanEntry:
        entry = state.plans.get(plan_id)
        if entry is None:
            raise HTTPException(404, detail=f"unknown plan {plan_id!r}")
        return entry

    @app.get("/api/v1/plans/{plan_id}", dependencies=dep)
    async def get_plan(plan_id: str):
        entry = _entry_or_404(plan_id)
        with state.lock:
            out = {"plan_id": plan_id, "status": entry.status}
            if entry.status == "failed":
                out["error"] = entry.error
            if entry.status == "ready" and entry.revisions:
                plan = Plan.from_dict(entry.current_plan_doc)
                scenario = Scenario.from_dict(entry.scenario_doc)
                out["plan"] = entry.current_plan_doc
                out["geojson"] = plan_geojson(state.network, plan, scenario)
                if entry.exec_state_doc is not None:
                    out["execution"] = entry.exec_state_doc
            return out

    @app.get("/api/v1/plans/{plan_id}/routes/{vehicle_id}", dependencies=dep)
    async def get_driver_route(plan_id: str, vehicle_id: str):
        entry = _entry_or_404(plan_id)
        if entry.status != "ready":
            raise HTTPException(404, detail=f"plan {plan_id!r} not ready")
        with state.lock:
            plan = Plan.from_dict(entry.current_plan_doc)
            scenario = Scenario.from_dict(entry.scenario_doc)
            for route in plan.routes:
                if route.vehicle_id == vehicle_id:
                    single = Plan(
                        id=plan.id,
                        routes=[route],
                        unassigned=[],
                        total_cost=plan.total_cost,
                        revision=plan.revision,
                        created_at=plan.created_at,
                        kind=plan.kind,
                    )
                    return {
                        "plan_id": plan_id,
                        "revision": plan.revision,
                        "route": route.to_dict(),
                        "geojson": plan_geojson(state.network, single, scenario),
                    }
        raise HTTPException(404, detail=f"vehicle {vehicle_id!r} has no route in plan {plan_id!r}")

    @app.get("/api/v1/plans/{plan_id}/revisions", dependencies=dep)
    async def get_revisions(plan_id: str):
        entry = _entry_or_404(plan_id)
        with state.lock:
            return [
                {
                    "revision": rev["plan"]["revision"],
                    "trigger": rev["trigger"],
                    "diff": rev["diff"],
                    "plan": rev["plan"],
                }
                for rev in entry.revisions
            ]

    # -- events ------------------------------------------------------------
    @app.post("/api/v1/events", status_code=202, dependencies=dep)
    async def post_events(body: dict):
        plan_id = body.get("plan_id")
        if plan_id is None:
            raise HTTPException(400, detail="plan_id is required")
        entry = _entry_or_404(plan_id)
        if entry.status != "ready":
            raise HTTPException(409, detail=f"plan {plan_id!r} is {entry.status}, not ready")
        kind = body.get("kind")
        if kind not in domain.EVENT_KINDS:
            raise HTTPException(400, detail=f"unknown event kind {kind!r}")
        with state.lock:
            state.event_count += 1
            event_id = body.get("event_id") or f"ev-{state.event_count:06d}"
            timestamp = float(
                body.get(
                    "timestamp",
                    entry.exec_state_doc["clock"] if entry.exec_state_doc else entry.depart_time,
                )
            )
            event = Event(id=event_id, timestamp=timestamp, kind=kind, payload=body.get("payload", {}))
            # Acknowledge before processing.
            state.storage.append("event", event_id, {"plan_id": plan_id, "event": event.to_dict()})
            try:
                mgr = state.manager_for(entry)
                if kind == "traffic_update":
                    payload = event.payload
                    edge_id = payload.get("edge_id")
                    live_speed = payload.get("live_speed")
                    if edge_id is None or live_speed is None:
                        raise HTTPException(400, detail="traffic_update needs edge_id and live_speed")
                    if edge_id not in state.network.edges:
                        raise HTTPException(404, detail=f"unknown edge {edge_id!r}")
                    if live_speed <= 0:
                        raise HTTPException(422, detail=[{"rule": "speed", "message": "live_speed must be > 0"}])
                    entry.live_overrides[edge_id] = float(live_speed)
                    mgr.travel_fn = state.travel_fn_for(entry)
                result = mgr.process(event)
            except UnknownOrder as exc:
                raise HTTPException(404, detail=str(exc))
            except StaleRevision as exc:
                raise HTTPException(409, detail=str(exc))
            except (IllegalEvent, domain.IllegalTransition) as exc:
                raise HTTPException(409, detail=str(exc))
            except DynamicError as exc:
                raise HTTPException(422, detail=[{"rule": "dynamic", "message": str(exc)}])
            entry.applied_events.add(event_id)
            out = {"event_id": event_id, "plan_id": plan_id}
            if isinstance(result, ReplanResult):
                state.persist_revision(entry, result)
                if entry.sim is not None:
                    entry.sim.adopt_plan(mgr.plan)
                out["result"] = "replanned"
                out["revision"] = mgr.plan.revision
            else:
                out["result"] = "no_change"
                out["reason"] = result.reason
            state.storage.append(
                "event_result", event_id, {k: v for k, v in out.items() if k != "event_id"}
            )
            return out

    # -- tracking ----------------------------------------------------------
    @app.get("/api/v1/vehicles/{vehicle_id}/track", dependencies=dep)
    async def get_track(vehicle_id: str, since: float = Query(default=0.0)):
        with state.lock:
            pings = [
                p for p in state.pings if p["vehicle_id"] == vehicle_id and p["timestamp"] > since
            ]
        return {"vehicle_id": vehicle_id, "pings": pings}

    # -- simulation control --------------------------------------------------
    @app.post("/api/v1/sim/start", dependencies=dep)
    async def sim_start(body: dict):
        plan_id = body.get("plan_id")
        entry = _entry_or_404(plan_id)
        if entry.status != "ready":
            raise HTTPException(409, detail=f"plan {plan_id!r} is {entry.status}, not ready")
        with state.lock:
            if entry.sim is not None:
                raise HTTPException(409, detail="simulation already running")
            sim_config = SimConfig.from_dict(body.get("sim_config", {}))
            mgr = state.manager_for(entry)
            sim = Simulator(mgr.plan, mgr.scenario, state.network, sim_config)
            mgr.state = sim.exec_state
            entry.sim = sim
            entry.sim_config_doc = sim_config.to_dict()
            state.storage.append("sim", plan_id, {"config": sim_config.to_dict()})
        return {"plan_id": plan_id, "clock": sim.clock}

    @app.post("/api/v1/sim/tick", dependencies=dep)
    async def sim_tick(body: dict, n: int = Query(default=1, ge=1, le=100000)):
        plan_id = body.get("plan_id")
        entry = _entry_or_404(plan_id)
        with state.lock:
            if entry.sim is None:
                raise HTTPException(409, detail="simulation not running")
            sim = entry.sim
            mgr = state.manager_for(entry)
            ping_start = len(sim.pings)
            replans = []
            for _ in range(n):
                if sim.completed():
                    break
                sim.tick()
                state.event_count += 1
                event = sim.detect_deviation(
                    mgr.travel_fn, entry.theta, f"ev-{state.event_count:06d}"
                )
                if event is None:
                    state.event_count -= 1
                    continue
                state.storage.append("event", event.id, {"plan_id": plan_id, "event": event.to_dict()})
                result = mgr.process(event)
                entry.applied_events.add(event.id)
                if isinstance(result, ReplanResult):
                    state.persist_revision(entry, result)
                    sim.adopt_plan(mgr.plan)
                    replans.append(mgr.plan.revision)
            new_pings = sim.pings[ping_start:]
            state.pings.extend(new_pings)
            entry.exec_state_doc = _exec_state_to_doc(sim.exec_state)
            state.storage.append(
                "sim_state",
                plan_id,
                {"exec_state": entry.exec_state_doc, "pings": new_pings, "clock": sim.clock},
            )
            # Deliveries recorded by the sim update order status durably.
            for oid, order in mgr.scenario.orders.items():
                if state.orders.get(oid) != order.to_dict():
                    state.orders[oid] = order.to_dict()
                    state.storage.append("order", oid, order.to_dict())
            return {
                "plan_id": plan_id,
                "clock": sim.clock,
                "completed": sim.completed(),
                "replans": replans,
                "revision": mgr.plan.revision,
            }

    @app.post("/api/v1/sim/stop", dependencies=dep)
    async def sim_stop(body: dict):
        plan_id = body.get("plan_id")
        entry = _entry_or_404(plan_id)
        with state.lock:
            if entry.sim is None:
                raise HTTPException(409, detail="simulation not running")
            journal = entry.sim.journal
            digest = entry.sim.state_digest()
            state.storage.append(
                "sim_state",
                plan_id,
                {"exec_state": _exec_state_to_doc(entry.sim.exec_state), "pings": [], "stopped": True},
            )
            entry.sim = None
        return {"plan_id": plan_id, "journal_records": len(journal), "state_digest": digest}

    @app.get("/api/v1/sim/{plan_id}/journal", dependencies=dep)
    async def sim_journal(plan_id: str):
        entry = _entry_or_404(plan_id)
        if entry.sim is None:
            raise HTTPException(409, detail="simulation not running")
        return {"plan_id": plan_id, "journal": entry.sim.journal}

    return app
