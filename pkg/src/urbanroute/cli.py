"""Batch command-line driver: plan, simulate, bench, oracle, generators,
service runner and an end-to-end HTTP demo.  All randomness flows from
explicit --seed flags; no wall-clock entropy enters any output."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
import time

import click

from .domain import Event, Plan, Scenario, conservation_ok, transition_order_status, validate_plan
from .dynamic_router import PlanManager, ReplanResult, predicted_lateness
from .fixtures import grid_network_document, random_scenario_document
from .forecast import ForecastModel, read_observation_lines
from .network import build_matrix, load_network
from .simulator import Incident, SimConfig, Simulator, journal_to_lines
from .static_router import SolverConfig, TooLarge, brute_force_oracle, solve_static
from .service import plan_geojson


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: str, doc) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return _sha256_file(path)


def _fail(code: int, error: str, **extra):
    doc = {"error": error}
    doc.update(extra)
    click.echo(json.dumps(doc, sort_keys=True), err=True)
    sys.exit(code)


def _load_inputs(scenario_path: str, network_path: str):
    try:
        with open(network_path) as fh:
            network = load_network(json.load(fh))
    except Exception as exc:
        _fail(2, f"invalid network file: {exc}", file=network_path)
    try:
        with open(scenario_path) as fh:
            scenario = Scenario.from_dict(json.load(fh))
    except Exception as exc:
        _fail(2, f"invalid scenario file: {exc}", file=scenario_path)
    return scenario, network


def _travel_fn(network, scenario, depart: float, bucket_seconds: int = 1800, horizon: int = 43200):
    from .network import hybrid_travel_fn

    locations = sorted(
        {o.location for o in scenario.orders.values()}
        | {d.location for d in scenario.depots.values()}
    )
    buckets = list(range(int(depart), int(depart) + horizon, bucket_seconds))
    return hybrid_travel_fn(network, build_matrix(network, locations, buckets))


def _manifest(out_dir: str, command: str, inputs: dict, outputs: dict, seed: int, config: dict, wall: float):
    manifest = {
        "command": command,
        "config": config,
        "config_digest": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()
        ).hexdigest(),
        "inputs": {name: _sha256_file(path) for name, path in inputs.items()},
        "outputs": outputs,
        "seed": seed,
        "wall_time_seconds": round(wall, 3),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


@click.group()
def main():
    """Urban freight routing and dispatch toolkit."""


@main.command("plan")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--network", "network_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--iterations", default=2000, show_default=True)
@click.option("--destroy-fraction", default=0.15, show_default=True)
@click.option("--depart", default=0.0, show_default=True)
@click.option("--out-dir", default=".", show_default=True, type=click.Path())
def cli_plan(scenario_path, network_path, seed, iterations, destroy_fraction, depart, out_dir):
    """Solve the static VRPTW and write plan.json, plan.geojson and a manifest."""
    t0 = time.monotonic()
    scenario, network = _load_inputs(scenario_path, network_path)
    os.makedirs(out_dir, exist_ok=True)
    config = SolverConfig(seed=seed, lns_iterations=iterations, destroy_fraction=destroy_fraction)
    travel_fn = _travel_fn(network, scenario, depart)
    plan = solve_static(scenario, travel_fn, config, start_time=depart, plan_id=f"plan-{seed}")
    violations = validate_plan(plan, scenario, travel_fn)
    if violations:
        _fail(2, "solver output failed validation", violations=[v.to_dict() for v in violations])
    outputs = {
        "plan.json": _write_json(os.path.join(out_dir, "plan.json"), plan.to_dict()),
        "plan.geojson": _write_json(
            os.path.join(out_dir, "plan.geojson"), plan_geojson(network, plan, scenario)
        ),
    }
    _manifest(
        out_dir,
        "plan",
        {"scenario": scenario_path, "network": network_path},
        outputs,
        seed,
        config.to_dict(),
        time.monotonic() - t0,
    )
    click.echo(
        json.dumps(
            {
                "plan_id": plan.id,
                "cost": plan.total_cost,
                "routes": len(plan.routes),
                "unassigned": plan.unassigned,
            },
            sort_keys=True,
        )
    )


@main.command("simulate")
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True))
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--network", "network_path", required=True, type=click.Path(exists=True))
@click.option("--events", "events_path", type=click.Path(exists=True), default=None,
              help="newline-delimited JSON event script, injected at timestamps")
@click.option("--incidents", "incidents_path", type=click.Path(exists=True), default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--theta", default=300.0, show_default=True)
@click.option("--sim-noise", default=0.1, show_default=True)
@click.option("--iterations", default=200, show_default=True, help="LNS iterations per replan")
@click.option("--out-dir", default=".", show_default=True, type=click.Path())
def cli_simulate(plan_path, scenario_path, network_path, events_path, incidents_path,
                 seed, theta, sim_noise, iterations, out_dir):
    """Execute a plan in the simulator with the dynamic router in the loop."""
    t0 = time.monotonic()
    scenario, network = _load_inputs(scenario_path, network_path)
    try:
        with open(plan_path) as fh:
            plan = Plan.from_dict(json.load(fh))
    except Exception as exc:
        _fail(2, f"invalid plan file: {exc}", file=plan_path)
    incidents = []
    if incidents_path:
        with open(incidents_path) as fh:
            incidents = [Incident.from_dict(d) for d in json.load(fh)]
    script = []
    if events_path:
        with open(events_path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    script.append(Event.from_dict(json.loads(line)))
        script.sort(key=lambda e: e.timestamp)
    os.makedirs(out_dir, exist_ok=True)

    for oid in plan.routed_order_ids():
        if scenario.orders[oid].status == "pending":
            scenario.orders[oid] = transition_order_status(scenario.orders[oid], "planned")
    travel_fn = _travel_fn(network, scenario, plan.created_at)
    sim_config = SimConfig(seed=seed, speed_noise_sigma=sim_noise, incidents=incidents)
    sim = Simulator(plan, scenario, network, sim_config)
    solver_config = SolverConfig(seed=seed, lns_iterations=iterations, destroy_fraction=0.3)
    manager = PlanManager(
        plan=plan, state=sim.exec_state, scenario=scenario, travel_fn=travel_fn,
        config=solver_config, theta=theta,
    )
    revisions = [{"revision": plan.revision, "trigger": None, "plan": plan.to_dict()}]
    script_idx = 0
    auto_id = 0

    def handle(result, trigger):
        nonlocal revisions
        if isinstance(result, ReplanResult):
            sim.adopt_plan(manager.plan)
            revisions.append(
                {"revision": manager.plan.revision, "trigger": trigger, "plan": manager.plan.to_dict()}
            )

    max_ticks = 200000
    for _ in range(max_ticks):
        if sim.completed() and script_idx >= len(script):
            break
        sim.tick()
        while script_idx < len(script) and script[script_idx].timestamp <= sim.clock:
            event = script[script_idx]
            script_idx += 1
            handle(manager.process(event), event.id)
        auto_id += 1
        deviation = sim.detect_deviation(manager.travel_fn, theta, f"auto-{auto_id:04d}")
        if deviation is not None:
            handle(manager.process(deviation), deviation.id)
    sim._record("sim_end", clock=sim.clock)

    journal_path = os.path.join(out_dir, "journal.ndjson")
    with open(journal_path, "w") as fh:
        fh.write(journal_to_lines(sim.journal))
    outputs = {
        "journal.ndjson": _sha256_file(journal_path),
        "revisions.json": _write_json(os.path.join(out_dir, "revisions.json"), revisions),
        "final_plan.json": _write_json(os.path.join(out_dir, "final_plan.json"), manager.plan.to_dict()),
    }
    inputs = {"plan": plan_path, "scenario": scenario_path, "network": network_path}
    if events_path:
        inputs["events"] = events_path
    if incidents_path:
        inputs["incidents"] = incidents_path
    config = {"seed": seed, "theta": theta, "sim_noise": sim_noise, "iterations": iterations}
    _manifest(out_dir, "simulate", inputs, outputs, seed, config, time.monotonic() - t0)
    click.echo(
        json.dumps(
            {
                "clock": sim.clock,
                "completed": sim.completed(),
                "replans": len(revisions) - 1,
                "final_revision": manager.plan.revision,
                "state_digest": sim.state_digest(),
            },
            sort_keys=True,
        )
    )


@main.command("bench")
@click.option("--sizes", default="5,6", show_default=True, help="comma-separated customer counts")
@click.option("--instances", default=10, show_default=True)
@click.option("--vehicles", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--iterations", default=400, show_default=True)
@click.option("--side", default=5, show_default=True, help="grid network side length")
@click.option("--out", "out_path", default="bench.csv", show_default=True, type=click.Path())
def cli_bench(sizes, instances, vehicles, seed, iterations, side, out_path):
    """Heuristic vs exhaustive oracle on seeded instances; gap/runtime CSV."""
    network = load_network(grid_network_document(side))
    rows = []
    size_list = [int(s) for s in sizes.split(",") if s.strip()]
    for n in size_list:
        for k in range(instances):
            inst_seed = seed * 10007 + n * 101 + k
            scenario = Scenario.from_dict(
                random_scenario_document(network, n, vehicles, inst_seed)
            )
            travel_fn = _travel_fn(network, scenario, 0.0, bucket_seconds=14400)
            t0 = time.monotonic()
            plan = solve_static(
                scenario,
                travel_fn,
                SolverConfig(seed=inst_seed, lns_iterations=iterations, destroy_fraction=0.4),
            )
            heur_s = time.monotonic() - t0
            row = {
                "customers": n,
                "seed": inst_seed,
                "heuristic_cost": round(plan.total_cost, 6),
                "heuristic_unassigned": len(plan.unassigned),
                "heuristic_seconds": round(heur_s, 4),
                "oracle_cost": "",
                "gap": "",
            }
            try:
                oracle = brute_force_oracle(scenario, travel_fn)
                row["oracle_cost"] = round(oracle.total_cost, 6)
                if len(plan.unassigned) == len(oracle.unassigned) and oracle.total_cost > 0:
                    row["gap"] = round((plan.total_cost - oracle.total_cost) / oracle.total_cost, 6)
                elif len(plan.unassigned) == len(oracle.unassigned):
                    row["gap"] = 0.0
            except TooLarge:
                pass
            rows.append(row)
    fields = ["customers", "seed", "heuristic_cost", "heuristic_unassigned",
              "heuristic_seconds", "oracle_cost", "gap"]
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    click.echo(json.dumps({"rows": len(rows), "out": out_path}))


@main.command("oracle")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--network", "network_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default="oracle_plan.json", show_default=True, type=click.Path())
def cli_oracle(scenario_path, network_path, out_path):
    """Exhaustive optimum for toy instances (<= 7 customers, <= 3 vehicles)."""
    scenario, network = _load_inputs(scenario_path, network_path)
    travel_fn = _travel_fn(network, scenario, 0.0)
    try:
        plan = brute_force_oracle(scenario, travel_fn)
    except TooLarge as exc:
        _fail(2, str(exc))
    _write_json(out_path, plan.to_dict())
    click.echo(json.dumps({"cost": plan.total_cost, "unassigned": plan.unassigned}, sort_keys=True))


@main.command("gen-network")
@click.option("--side", default=10, show_default=True)
@click.option("--out", "out_path", default="network.json", show_default=True, type=click.Path())
def cli_gen_network(side, out_path):
    """Write a synthetic grid road network document."""
    _write_json(out_path, grid_network_document(side))
    click.echo(json.dumps({"nodes": side * side, "out": out_path}))


@main.command("gen-scenario")
@click.option("--network", "network_path", required=True, type=click.Path(exists=True))
@click.option("--orders", default=25, show_default=True)
@click.option("--vehicles", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", default="scenario.json", show_default=True, type=click.Path())
def cli_gen_scenario(network_path, orders, vehicles, seed, out_path):
    """Write a random (seeded) delivery scenario over a network."""
    with open(network_path) as fh:
        network = load_network(json.load(fh))
    _write_json(out_path, random_scenario_document(network, orders, vehicles, seed))
    click.echo(json.dumps({"orders": orders, "vehicles": vehicles, "out": out_path}))


@main.command("forecast")
@click.option("--observations", "obs_path", required=True, type=click.Path(exists=True),
              help="newline-delimited JSON speed observations")
@click.option("--alpha", default=0.3, show_default=True)
@click.option("--bucket-seconds", default=3600, show_default=True)
@click.option("--out", "out_path", default="forecast_model.json", show_default=True, type=click.Path())
def cli_forecast(obs_path, alpha, bucket_seconds, out_path):
    """Ingest observation history and export the forecast model snapshot."""
    with open(obs_path) as fh:
        observations = read_observation_lines(fh)
    model = ForecastModel(alpha=alpha, bucket_seconds=bucket_seconds)
    model.ingest(observations)
    _write_json(out_path, model.to_dict())
    click.echo(json.dumps({"observations": len(observations), "out": out_path}))


@main.command("serve")
@click.option("--data-dir", default="./urbanroute-data", show_default=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8040, show_default=True)
def cli_serve(data_dir, host, port):
    """Run the dispatch HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(data_dir=data_dir), host=host, port=port, log_level="warning")


def run_demo_against(client, seed: int, side: int, n_orders: int, n_vehicles: int,
                     iterations: int = 600, theta: float = 300.0,
                     incident_factor: float = 0.002, incident_end: float = 7470.0) -> dict:
    """Drive the full desk scenario through the HTTP API: upload, plan,
    simulate with one injected incident, observe exactly one replan."""
    network_doc = grid_network_document(side)
    r = client.post("/api/v1/network", json=network_doc)
    assert r.status_code == 200, r.text
    network = load_network(network_doc)
    scenario_doc = random_scenario_document(network, n_orders, n_vehicles, seed)
    for kind in ("depots", "vehicles", "drivers"):
        r = client.post(f"/api/v1/assets/{kind}", json=scenario_doc[kind])
        assert r.status_code == 200, r.text
    r = client.post("/api/v1/orders", json=scenario_doc["orders"])
    assert r.status_code == 200, r.text

    t0 = time.monotonic()
    r = client.post(
        "/api/v1/plans",
        json={
            "depart_time": 0,
            "theta": theta,
            "solver_config": {"seed": seed, "lns_iterations": iterations, "destroy_fraction": 0.25},
        },
    )
    assert r.status_code == 202, r.text
    plan_id = r.json()["plan_id"]
    while True:
        r = client.get(f"/api/v1/plans/{plan_id}")
        body = r.json()
        if body["status"] in ("ready", "failed"):
            break
        time.sleep(0.05)
    plan_seconds = time.monotonic() - t0
    assert body["status"] == "ready", body
    plan_doc = body["plan"]

    # Incident placement: choke the busiest route between its third and
    # fourth stop.  The vehicle gets stuck while travelling to a wide-window
    # stop, so the lateness shows up on the still-pending tail of the route,
    # which a single replan can hand over to the other vehicles.
    scenario = Scenario.from_dict(scenario_doc)
    busiest = max(plan_doc["routes"], key=lambda rt: sum(1 for s in rt["stops"] if s["order_id"]))
    stop_ids = [s["order_id"] for s in busiest["stops"] if s["order_id"]]
    from .network import shortest_path as sp

    path, _, _ = sp(
        network, scenario.orders[stop_ids[2]].location, scenario.orders[stop_ids[3]].location, 0
    )
    edge_id = next(
        e.id for e in network.edges.values() if e.from_node == path[0] and e.to_node == path[1]
    )

    # The incident physically chokes that edge until it clears; the matching
    # traffic_update below feeds a live speed for it into the travel model.
    live_speed = 0.1
    r = client.post("/api/v1/sim/start", json={"plan_id": plan_id, "sim_config": {
        "seed": seed, "speed_noise_sigma": 0.0,
        "incidents": [{"edge_id": edge_id, "start": 0.0, "end": incident_end,
                       "speed_factor": incident_factor}],
    }})
    assert r.status_code == 200, r.text

    r = client.post("/api/v1/events", json={
        "plan_id": plan_id, "kind": "traffic_update",
        "payload": {"edge_id": edge_id, "live_speed": live_speed},
    })
    assert r.status_code == 202, r.text
    traffic_result = r.json()

    replans = []
    for _ in range(400):
        r = client.post("/api/v1/sim/tick?n=50", json={"plan_id": plan_id})
        assert r.status_code == 200, r.text
        body = r.json()
        replans.extend(body["replans"])
        if body["completed"]:
            break
    r = client.get(f"/api/v1/plans/{plan_id}/revisions")
    revisions = r.json()
    r = client.get(f"/api/v1/sim/{plan_id}/journal")
    journal = r.json()["journal"]
    # Realized lateness: actual service start vs the order's window close.
    max_lateness = 0.0
    for rec in journal:
        if rec["kind"] == "service_start":
            latest = scenario.orders[rec["order_id"]].time_window.latest
            max_lateness = max(max_lateness, rec["t"] - latest)
    r = client.post("/api/v1/sim/stop", json={"plan_id": plan_id})
    final = r.json()
    return {
        "plan_id": plan_id,
        "plan_seconds": round(plan_seconds, 3),
        "initial_cost": plan_doc["total_cost"],
        "traffic_event": traffic_result,
        "replans": replans,
        "revisions": len(revisions),
        "final_revision": revisions[-1]["revision"],
        "final_unassigned": revisions[-1]["plan"]["unassigned"],
        "state_digest": final.get("state_digest"),
        "sim_clock": body["clock"],
        "max_lateness": max_lateness,
    }


@main.command("demo")
@click.option("--seed", default=42, show_default=True)
@click.option("--side", default=10, show_default=True)
@click.option("--orders", default=25, show_default=True)
@click.option("--vehicles", default=3, show_default=True)
@click.option("--port", default=8041, show_default=True)
@click.option("--data-dir", default=None, type=click.Path())
def cli_demo(seed, side, orders, vehicles, port, data_dir):
    """End-to-end desk scenario, entirely through the HTTP API."""
    import tempfile
    import threading

    import httpx
    import uvicorn

    from .service import create_app

    data_dir = data_dir or tempfile.mkdtemp(prefix="urbanroute-demo-")
    app = create_app(data_dir=data_dir)
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{port}"
    with httpx.Client(base_url=base, timeout=120.0) as client:
        for _ in range(100):
            try:
                if client.get("/api/v1/healthz").status_code == 200:
                    break
            except httpx.TransportError:
                time.sleep(0.05)
        t0 = time.monotonic()
        summary = run_demo_against(client, seed, side, orders, vehicles)
        summary["total_seconds"] = round(time.monotonic() - t0, 3)
    server.should_exit = True
    thread.join(timeout=5)
    click.echo(json.dumps(summary, sort_keys=True))


if __name__ == "__main__":
    main()
