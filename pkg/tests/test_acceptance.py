"""Release acceptance gates, one test per guarantee.

Each test here is an end-to-end check of a headline property of the platform:
solver quality against an exhaustive oracle, validator cleanliness at scale,
time-dependent routing invariants, event-driven repair behaviour, replay
determinism, forecast recovery, the full dispatch-desk scenario over the HTTP
API, and restart durability of the service.
"""
import concurrent.futures
import hashlib
import json
import math
import random
import tempfile
import time

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from urbanroute.cli import main, run_demo_against
from urbanroute.domain import (
    Event,
    Plan,
    Scenario,
    conservation_ok,
    transition_order_status,
    validate_plan,
)
from urbanroute.dynamic_router import (
    ExecutionState,
    NoChange,
    PlanManager,
    ReplanResult,
    predicted_lateness,
    route_progress,
)
from urbanroute.fixtures import (
    grid_network,
    grid_network_document,
    random_network_document,
    random_scenario,
    random_scenario_document,
)
from urbanroute.forecast import ForecastModel, SpeedObservation
from urbanroute.network import (
    Edge,
    SpeedProfile,
    build_matrix,
    edge_travel_time,
    hybrid_travel_fn,
    load_network,
    shortest_path,
)
from urbanroute.service import create_app
from urbanroute.simulator import replay_journal_digest
from urbanroute.static_router import (
    SolverConfig,
    brute_force_oracle,
    contexts_from_scenario,
    solve_static,
)

from conftest import matrix_travel_fn


def test_static_solver_matches_exhaustive_oracle_on_small_instances():
    """50 seeded instances with <= 6 customers and 2 vehicles: every heuristic
    plan is feasible, at least 90% hit the proven optimum, and where they hit
    it the cost agrees exactly (1e-9).  The whole sweep stays under a minute.
    """
    t0 = time.monotonic()
    matches = 0
    for seed in range(50):
        net = grid_network(4)
        sc = random_scenario(net, 3 + seed % 4, 2, seed=seed)
        fn = matrix_travel_fn(net, sc)
        plan = solve_static(
            sc, fn, SolverConfig(seed=seed, lns_iterations=400, destroy_fraction=0.4), 0.0
        )
        assert validate_plan(plan, sc, fn) == [], f"seed {seed} produced an invalid plan"
        oracle = brute_force_oracle(sc, fn, 0.0, max_customers=6)
        assert len(plan.unassigned) >= len(oracle.unassigned) - 0  # oracle is the bound
        assert plan.total_cost >= oracle.total_cost - 1e-9 or len(plan.unassigned) > len(
            oracle.unassigned
        )
        if (
            len(plan.unassigned) == len(oracle.unassigned)
            and abs(plan.total_cost - oracle.total_cost) <= 1e-9
        ):
            matches += 1
    elapsed = time.monotonic() - t0
    assert matches >= 45, f"only {matches}/50 instances matched the oracle optimum"
    assert elapsed < 60.0, f"oracle sweep took {elapsed:.1f}s"


def test_validator_clean_across_thousand_random_instances():
    """1,000 seeded instances (5-30 customers): the solver never emits a plan
    with a validator violation, and every order is accounted for exactly once
    across routes and the unassigned list."""
    net = grid_network(5)
    nodes = sorted(net.nodes)
    matrix = build_matrix(net, nodes, [b * 1800.0 for b in range(24)])
    fn = hybrid_travel_fn(net, matrix)
    for seed in range(1000):
        sc = random_scenario(net, 5 + seed % 26, 2 + seed % 3, seed=seed)
        plan = solve_static(
            sc, fn, SolverConfig(seed=seed, lns_iterations=40, destroy_fraction=0.3), 0.0
        )
        violations = validate_plan(plan, sc, fn)
        assert violations == [], f"seed {seed}: {violations}"
        assert conservation_ok(plan, sc.orders.values()), f"seed {seed}: conservation broken"
        routed = plan.routed_order_ids()
        assert len(routed) == len(set(routed)), f"seed {seed}: duplicated stop"


def test_fifo_and_arrival_monotonicity_at_scale():
    """10,000 random (edge, profile, departure pair) triples never overtake;
    shortest-path arrival is monotone in departure on 100 random graphs."""
    rng = random.Random(2024)
    bucket_choices = (1800, 3600, 7200, 10800)
    profiles = []
    for _ in range(200):
        bucket = rng.choice(bucket_choices)
        speeds = tuple(rng.uniform(2.0, 30.0) for _ in range(86400 // bucket))
        profiles.append(SpeedProfile(bucket, speeds))
    for i in range(10000):
        profile = rng.choice(profiles)
        edge = Edge(
            id=f"e{i}", from_node="a", to_node="b",
            length=rng.uniform(10.0, 5000.0), speed_profile_id="p",
        )
        t1 = rng.uniform(0.0, 2 * 86400.0)
        t2 = t1 + rng.uniform(0.0, 7200.0)
        a1 = t1 + edge_travel_time(edge, profile, t1)
        a2 = t2 + edge_travel_time(edge, profile, t2)
        assert a2 >= a1 - 1e-6, f"overtaking on triple {i}: {a1} vs {a2}"

    for g in range(100):
        net = load_network(random_network_document(10, seed=g, extra_edges=5))
        nodes = sorted(net.nodes)
        src, dst = rng.sample(nodes, 2)
        departs = sorted(rng.uniform(0.0, 86400.0) for _ in range(6))
        arrivals = []
        for t in departs:
            _, seconds, _ = shortest_path(net, src, dst, t)
            arrivals.append(t + seconds)
        for a, b in zip(arrivals, arrivals[1:]):
            assert b >= a - 1e-6, f"graph {g}: arrival not monotone"


class _Repair:
    """Shared machinery for the event-repair acceptance checks."""

    @staticmethod
    def solved(n_orders, n_vehicles, seed, iterations=300):
        net = grid_network(5)
        sc = random_scenario(net, n_orders, n_vehicles, seed=seed)
        fn = matrix_travel_fn(net, sc)
        plan = solve_static(
            sc, fn, SolverConfig(seed=seed, lns_iterations=iterations, destroy_fraction=0.4), 0.0
        )
        for oid in plan.routed_order_ids():
            sc.orders[oid] = transition_order_status(sc.orders[oid], "planned")
        state = ExecutionState.at_plan_start(plan, sc)
        mgr = PlanManager(
            plan=plan, state=state, scenario=sc, travel_fn=fn,
            config=SolverConfig(seed=seed, lns_iterations=200, destroy_fraction=0.4),
        )
        return net, sc, fn, mgr

    @staticmethod
    def advance(mgr, vehicle_id, n_stops):
        """Mark the first n stops of a vehicle's route as completed."""
        route = next(r for r in mgr.plan.routes if r.vehicle_id == vehicle_id)
        stops = route.customer_stops()[:n_stops]
        vs = mgr.state.vehicles[vehicle_id]
        vs.completed = [s.order_id for s in stops]
        sc = mgr.scenario
        for s in stops:
            sc.orders[s.order_id] = transition_order_status(
                transition_order_status(sc.orders[s.order_id], "in_transit"), "delivered"
            )
        last = stops[-1]
        vs.position_node = sc.orders[last.order_id].location
        vs.position_time = last.departure_time
        mgr.state.clock = last.departure_time


def _cancel_suite():
    _, sc, fn, mgr = _Repair.solved(8, 2, seed=4)
    busiest = max(mgr.plan.routes, key=lambda r: len(r.customer_stops()))
    vid = busiest.vehicle_id
    _Repair.advance(mgr, vid, 2)
    committed_before = [s.to_dict() for s in busiest.customer_stops()[:2]]
    for d in committed_before:  # the rebuild marks executed stops as completed
        d["execution_status"] = "completed"
    victim = busiest.customer_stops()[-1].order_id
    cost_before = mgr.plan.total_cost
    result = mgr.process(
        Event(id="acc-cancel", timestamp=mgr.state.clock, kind="order_cancel",
              payload={"order_id": victim})
    )
    assert isinstance(result, ReplanResult)
    assert victim not in result.plan.routed_order_ids()
    assert victim not in result.plan.unassigned
    assert mgr.scenario.orders[victim].status == "cancelled"
    route_after = next(r for r in result.plan.routes if r.vehicle_id == vid)
    committed_after = [s.to_dict() for s in route_after.customer_stops()[:2]]
    assert json.dumps(committed_after, sort_keys=True) == json.dumps(
        committed_before, sort_keys=True
    ), "committed prefix was rewritten by a cancellation"
    assert result.plan.total_cost <= cost_before + 1e-9
    return result.plan.digest()


def _breakdown_suite():
    _, sc, fn, mgr = _Repair.solved(6, 2, seed=9)
    victim_vid = max(mgr.plan.routes, key=lambda r: len(r.customer_stops())).vehicle_id
    orphans = [
        s.order_id
        for r in mgr.plan.routes
        if r.vehicle_id == victim_vid
        for s in r.customer_stops()
    ]
    result = mgr.process(
        Event(id="acc-breakdown", timestamp=0.0, kind="vehicle_breakdown",
              payload={"vehicle_id": victim_vid})
    )
    assert isinstance(result, ReplanResult)
    repaired = result.plan
    for route in repaired.routes:
        if route.vehicle_id == victim_vid:
            assert route.customer_stops() == []
    routed = set(repaired.routed_order_ids())
    for oid in orphans:
        assert oid in routed or oid in repaired.unassigned
    assert conservation_ok(repaired, sc.orders.values())

    # Remainder quality: within 1.5x of the exhaustive optimum over the
    # surviving fleet (the instance is small enough to enumerate).
    contexts = contexts_from_scenario(sc, 0.0)
    assert all(c.vehicle_id != victim_vid for c in contexts)
    oracle = brute_force_oracle(sc, fn, 0.0, max_customers=6, contexts=contexts)
    assert len(repaired.unassigned) == len(oracle.unassigned)
    assert repaired.total_cost <= 1.5 * oracle.total_cost + 1e-9
    return repaired.digest()


def _window_suite():
    _, sc, fn, mgr = _Repair.solved(8, 2, seed=4)
    busiest = max(mgr.plan.routes, key=lambda r: len(r.customer_stops()))
    target = busiest.customer_stops()[-1]
    oid = target.order_id
    revision_before = mgr.plan.revision

    # Widening the window keeps the assignment and just refreshes timings.
    wide = {"earliest": 0.0, "latest": 86400.0}
    result = mgr.process(
        Event(id="acc-tw-wide", timestamp=0.0, kind="time_window_change",
              payload={"order_id": oid, "time_window": wide})
    )
    assert isinstance(result, ReplanResult)
    assert oid in result.plan.routed_order_ids()
    assert result.plan.revision == revision_before + 1

    # An impossible tightening ejects the stop; reinsertion fails everywhere,
    # so it ends up unassigned after exactly one more revision.
    impossible = {"earliest": 1.0, "latest": 2.0}
    result = mgr.process(
        Event(id="acc-tw-tight", timestamp=0.0, kind="time_window_change",
              payload={"order_id": oid, "time_window": impossible})
    )
    assert isinstance(result, ReplanResult)
    assert oid not in result.plan.routed_order_ids()
    assert oid in result.plan.unassigned
    assert result.plan.revision == revision_before + 2
    return result.plan.digest()


def _traffic_suite():
    theta = 300.0
    _, sc, fn, mgr = _Repair.solved(8, 2, seed=4)
    # On-schedule fleet: predicted lateness is zero, so no replan may fire.
    assert max(predicted_lateness(mgr.plan, mgr.state, sc, fn).values()) <= theta
    result = mgr.process(
        Event(id="acc-traffic-calm", timestamp=0.0, kind="traffic_update", payload={})
    )
    assert isinstance(result, NoChange)
    assert result.reason.startswith("below_threshold")

    # Push the clock far past the plan without any progress: predicted
    # lateness blows through the threshold and a replan must fire.
    delay = 20000.0
    for vs in mgr.state.vehicles.values():
        vs.position_time += delay
    mgr.state.clock += delay
    assert max(predicted_lateness(mgr.plan, mgr.state, sc, fn).values()) > theta
    result = mgr.process(
        Event(id="acc-traffic-spike", timestamp=mgr.state.clock, kind="traffic_update", payload={})
    )
    assert isinstance(result, ReplanResult)
    return result.plan.digest()


def test_dynamic_repair_per_event_kind_with_fixed_seeds():
    """Scripted repair suites: cancellation preserves the committed prefix and
    never raises cost, breakdowns reassign orphans within 1.5x of the
    remainder optimum, window changes refresh or eject, and traffic updates
    replan exactly when predicted lateness exceeds the threshold.  Running
    each suite twice yields byte-identical plan digests."""
    suites = (_cancel_suite, _breakdown_suite, _window_suite, _traffic_suite)
    first = [suite() for suite in suites]
    second = [suite() for suite in suites]
    assert first == second, "event repair is not deterministic under fixed seeds"


def test_replay_reproduces_final_plan_digest(tmp_path):
    """Two consecutive scripted simulation runs produce identical journals,
    identical final plans, and a journal replay that reconstructs the end
    state digest; solving in worker threads changes nothing."""
    runner = CliRunner()
    net_path = str(tmp_path / "network.json")
    sc_path = str(tmp_path / "scenario.json")
    assert runner.invoke(main, ["gen-network", "--side", "5", "--out", net_path]).exit_code == 0
    assert runner.invoke(main, [
        "gen-scenario", "--network", net_path, "--orders", "8",
        "--vehicles", "2", "--seed", "11", "--out", sc_path,
    ]).exit_code == 0
    plan_dir = str(tmp_path / "plan")
    r = runner.invoke(main, [
        "plan", "--scenario", sc_path, "--network", net_path,
        "--seed", "11", "--iterations", "200", "--out-dir", plan_dir,
    ])
    assert r.exit_code == 0, r.output
    plan_path = f"{plan_dir}/plan.json"
    plan = Plan.from_dict(json.load(open(plan_path)))
    busiest = max(plan.routes, key=lambda rt: len(rt.customer_stops()))
    victim = busiest.customer_stops()[-1].order_id
    events_path = str(tmp_path / "events.ndjson")
    with open(events_path, "w") as fh:
        fh.write(json.dumps({
            "id": "replay-1", "timestamp": 400.0, "kind": "order_cancel",
            "payload": {"order_id": victim},
        }) + "\n")

    outcomes = []
    for sub in ("run-a", "run-b"):
        out = str(tmp_path / sub)
        r = runner.invoke(main, [
            "simulate", "--plan", plan_path, "--scenario", sc_path,
            "--network", net_path, "--seed", "6", "--sim-noise", "0.1",
            "--events", events_path, "--out-dir", out,
        ])
        assert r.exit_code == 0, r.output
        summary = json.loads(r.output.strip().splitlines()[-1])
        journal = [json.loads(l) for l in open(f"{out}/journal.ndjson")]
        final = Plan.from_dict(json.load(open(f"{out}/final_plan.json")))
        assert replay_journal_digest(journal) == summary["state_digest"]
        journal_sha = hashlib.sha256(open(f"{out}/journal.ndjson", "rb").read()).hexdigest()
        outcomes.append((journal_sha, final.digest(), summary["state_digest"]))
    assert outcomes[0] == outcomes[1], "consecutive runs diverged"

    # The solver must not care which thread it runs on, nor how many peers
    # run beside it.
    def solve_digest(_):
        net = grid_network(5)
        sc = random_scenario(net, 8, 2, seed=11)
        fn = matrix_travel_fn(net, sc)
        cfg = SolverConfig(seed=11, lns_iterations=200, destroy_fraction=0.4)
        return solve_static(sc, fn, cfg, 0.0).digest()

    main_thread = solve_digest(None)
    for workers in (1, 4):
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            digests = list(pool.map(solve_digest, range(workers)))
        assert all(d == main_thread for d in digests), f"{workers} workers diverged"


def test_forecast_recovers_sinusoidal_traffic():
    """A day-periodic sinusoidal speed field (mean 10 m/s, amplitude 4 m/s,
    10% gaussian noise, 20 days of observations) is recovered with a
    per-bucket mean absolute error under 0.5 m/s."""
    rng = random.Random(77)
    buckets = 24
    true_speed = [10.0 + 4.0 * math.sin(2 * math.pi * b / buckets) for b in range(buckets)]
    observations = [
        SpeedObservation(
            edge_id="e",
            day_index=day,
            bucket_index=b,
            observed_speed=max(0.1, rng.gauss(true_speed[b], 1.0)),
        )
        for day in range(20)
        for b in range(buckets)
    ]
    model = ForecastModel(bucket_seconds=3600, alpha=0.3).ingest(observations)
    profile = model.forecast_profile("e")
    mae = sum(abs(profile.speeds[b] - true_speed[b]) for b in range(buckets)) / buckets
    assert mae < 0.5, f"per-bucket MAE {mae:.3f} m/s"


def test_dispatch_desk_scenario_over_http_api(tmp_path):
    """25 orders, 3 vehicles, 100-node grid, entirely over the HTTP API:
    planning finishes in under 10 s, one injected incident causes exactly one
    replan, every realized stop stays under the 300 s lateness threshold, and
    the whole run completes in under 60 s."""
    t0 = time.monotonic()
    app = create_app(data_dir=str(tmp_path))
    with TestClient(app) as client:
        summary = run_demo_against(client, seed=42, side=10, n_orders=25, n_vehicles=3)
    total = time.monotonic() - t0
    assert summary["plan_seconds"] < 10.0
    assert summary["replans"] == [1], f"expected exactly one replan: {summary['replans']}"
    assert summary["final_revision"] == 1
    assert summary["final_unassigned"] == []
    assert summary["max_lateness"] < 300.0
    assert total < 60.0, f"desk scenario took {total:.1f}s"


def test_restart_mid_scenario_preserves_every_read(tmp_path):
    """Kill the service in the middle of the desk flow (plan solved, an event
    applied, simulation underway); a fresh process over the same data
    directory answers every GET identically."""
    client = TestClient(create_app(data_dir=str(tmp_path)))
    network_doc = grid_network_document(6)
    assert client.post("/api/v1/network", json=network_doc).status_code == 200
    net = load_network(network_doc)
    scenario_doc = random_scenario_document(net, 10, 2, seed=8)
    for kind in ("depots", "vehicles", "drivers"):
        assert client.post(f"/api/v1/assets/{kind}", json=scenario_doc[kind]).status_code == 200
    assert client.post("/api/v1/orders", json=scenario_doc["orders"]).status_code == 200
    r = client.post("/api/v1/plans", json={
        "depart_time": 0, "solver_config": {"seed": 8, "lns_iterations": 150,
                                            "destroy_fraction": 0.3},
    })
    assert r.status_code == 202
    plan_id = r.json()["plan_id"]
    for _ in range(400):
        body = client.get(f"/api/v1/plans/{plan_id}").json()
        if body["status"] in ("ready", "failed"):
            break
        time.sleep(0.05)
    assert body["status"] == "ready"
    route = max(body["plan"]["routes"], key=lambda rt: len([s for s in rt["stops"] if s["order_id"]]))
    victim = [s["order_id"] for s in route["stops"] if s["order_id"]][-1]
    r = client.post("/api/v1/events", json={
        "plan_id": plan_id, "kind": "order_cancel", "payload": {"order_id": victim},
    })
    assert r.status_code == 202
    assert client.post("/api/v1/sim/start", json={
        "plan_id": plan_id, "sim_config": {"seed": 8, "speed_noise_sigma": 0.0},
    }).status_code == 200
    for _ in range(4):
        assert client.post("/api/v1/sim/tick?n=25", json={"plan_id": plan_id}).status_code == 200

    fresh = TestClient(create_app(data_dir=str(tmp_path)))
    vid = route["vehicle_id"]
    paths = [
        "/api/v1/network",
        "/api/v1/orders",
        "/api/v1/assets/depots",
        "/api/v1/assets/vehicles",
        "/api/v1/assets/drivers",
        f"/api/v1/plans/{plan_id}",
        f"/api/v1/plans/{plan_id}/revisions",
        f"/api/v1/vehicles/{vid}/track",
    ]
    for path in paths:
        a, b = client.get(path), fresh.get(path)
        assert a.status_code == b.status_code == 200, path
        assert a.json() == b.json(), f"divergent read after restart: {path}"
