"""Command line interface: artifact generation, manifests, exit codes and the
plan -> simulate pipeline."""
import hashlib
import json
import os

import pytest
from click.testing import CliRunner

from urbanroute.cli import main
from urbanroute.domain import Plan, Scenario, validate_plan
from urbanroute.network import load_network

from conftest import matrix_travel_fn


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def inputs(tmp_path, runner):
    """network.json + scenario.json generated through the CLI itself."""
    net_path = str(tmp_path / "network.json")
    sc_path = str(tmp_path / "scenario.json")
    r = runner.invoke(main, ["gen-network", "--side", "5", "--out", net_path])
    assert r.exit_code == 0, r.output
    r = runner.invoke(main, [
        "gen-scenario", "--network", net_path, "--orders", "6",
        "--vehicles", "2", "--seed", "7", "--out", sc_path,
    ])
    assert r.exit_code == 0, r.output
    return net_path, sc_path


def sha256(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestGenerators:
    def test_gen_network_document_loads(self, inputs):
        net_path, _ = inputs
        net = load_network(json.load(open(net_path)))
        assert len(net.nodes) == 25

    def test_gen_scenario_references_network(self, inputs):
        net_path, sc_path = inputs
        net = load_network(json.load(open(net_path)))
        sc = Scenario.from_dict(json.load(open(sc_path)))
        assert len(sc.orders) == 6
        for o in sc.orders.values():
            assert o.location in net.nodes

    def test_gen_scenario_seeded(self, tmp_path, runner, inputs):
        net_path, sc_path = inputs
        other = str(tmp_path / "again.json")
        r = runner.invoke(main, [
            "gen-scenario", "--network", net_path, "--orders", "6",
            "--vehicles", "2", "--seed", "7", "--out", other,
        ])
        assert r.exit_code == 0
        assert open(sc_path).read() == open(other).read()


class TestPlanCommand:
    def test_artifacts_and_manifest(self, tmp_path, runner, inputs):
        net_path, sc_path = inputs
        out = str(tmp_path / "out")
        r = runner.invoke(main, [
            "plan", "--scenario", sc_path, "--network", net_path,
            "--seed", "1", "--iterations", "150", "--destroy-fraction", "0.3",
            "--out-dir", out,
        ])
        assert r.exit_code == 0, r.output
        summary = json.loads(r.output.strip().splitlines()[-1])
        assert summary["unassigned"] == []

        plan = Plan.from_dict(json.load(open(os.path.join(out, "plan.json"))))
        net = load_network(json.load(open(net_path)))
        sc = Scenario.from_dict(json.load(open(sc_path)))
        fn = matrix_travel_fn(net, sc)
        assert validate_plan(plan, sc, fn) == []
        assert plan.total_cost == pytest.approx(summary["cost"])

        geo = json.load(open(os.path.join(out, "plan.geojson")))
        assert geo["type"] == "FeatureCollection"

        manifest = json.load(open(os.path.join(out, "manifest.json")))
        assert manifest["command"] == "plan"
        assert manifest["seed"] == 1
        for name, digest in manifest["outputs"].items():
            assert sha256(os.path.join(out, name)) == digest

    def test_deterministic_output(self, tmp_path, runner, inputs):
        net_path, sc_path = inputs
        plans = []
        for sub in ("a", "b"):
            out = str(tmp_path / sub)
            r = runner.invoke(main, [
                "plan", "--scenario", sc_path, "--network", net_path,
                "--seed", "3", "--iterations", "100", "--out-dir", out,
            ])
            assert r.exit_code == 0
            plans.append(open(os.path.join(out, "plan.json")).read())
        assert plans[0] == plans[1]

    def test_missing_input_fails(self, runner, tmp_path):
        r = runner.invoke(main, [
            "plan", "--scenario", str(tmp_path / "nope.json"),
            "--network", str(tmp_path / "nope2.json"),
        ])
        assert r.exit_code != 0


class TestOracleCommand:
    def test_oracle_not_worse_than_heuristic(self, tmp_path, runner, inputs):
        net_path, sc_path = inputs
        out = str(tmp_path / "oracle.json")
        r = runner.invoke(main, [
            "oracle", "--scenario", sc_path, "--network", net_path, "--out", out,
        ])
        assert r.exit_code == 0, r.output
        oracle_cost = json.loads(r.output.strip().splitlines()[-1])["cost"]

        pr = runner.invoke(main, [
            "plan", "--scenario", sc_path, "--network", net_path,
            "--iterations", "300", "--destroy-fraction", "0.4",
            "--out-dir", str(tmp_path / "p"),
        ])
        heur_cost = json.loads(pr.output.strip().splitlines()[-1])["cost"]
        assert oracle_cost <= heur_cost + 1e-9

    def test_too_large_exit_code_2(self, tmp_path, runner):
        net_path = str(tmp_path / "n.json")
        sc_path = str(tmp_path / "s.json")
        runner.invoke(main, ["gen-network", "--side", "4", "--out", net_path])
        runner.invoke(main, ["gen-scenario", "--network", net_path, "--orders", "10",
                             "--vehicles", "2", "--out", sc_path])
        r = runner.invoke(main, ["oracle", "--scenario", sc_path, "--network", net_path,
                                 "--out", str(tmp_path / "o.json")])
        assert r.exit_code == 2


class TestSimulateCommand:
    def solve(self, runner, tmp_path, inputs):
        net_path, sc_path = inputs
        out = str(tmp_path / "plan_out")
        r = runner.invoke(main, [
            "plan", "--scenario", sc_path, "--network", net_path,
            "--iterations", "150", "--destroy-fraction", "0.3", "--out-dir", out,
        ])
        assert r.exit_code == 0, r.output
        return os.path.join(out, "plan.json")

    def test_noise_free_run_completes(self, tmp_path, runner, inputs):
        net_path, sc_path = inputs
        plan_path = self.solve(runner, tmp_path, inputs)
        out = str(tmp_path / "sim_out")
        r = runner.invoke(main, [
            "simulate", "--plan", plan_path, "--scenario", sc_path,
            "--network", net_path, "--sim-noise", "0", "--out-dir", out,
        ])
        assert r.exit_code == 0, r.output
        summary = json.loads(r.output.strip().splitlines()[-1])
        assert summary["completed"] is True
        assert summary["final_revision"] == 0
        journal = [json.loads(l) for l in open(os.path.join(out, "journal.ndjson"))]
        assert journal[0]["kind"] == "sim_start"
        assert journal[-1]["kind"] == "sim_end"

    def test_scripted_cancel_creates_revision(self, tmp_path, runner, inputs):
        net_path, sc_path = inputs
        plan_path = self.solve(runner, tmp_path, inputs)
        plan = Plan.from_dict(json.load(open(plan_path)))
        route = max(plan.routes, key=lambda r: len(r.customer_stops()))
        victim = route.customer_stops()[-1].order_id
        events_path = str(tmp_path / "events.ndjson")
        with open(events_path, "w") as fh:
            fh.write(json.dumps({
                "id": "script-1", "timestamp": 300.0, "kind": "order_cancel",
                "payload": {"order_id": victim},
            }) + "\n")
        out = str(tmp_path / "sim_out2")
        r = runner.invoke(main, [
            "simulate", "--plan", plan_path, "--scenario", sc_path,
            "--network", net_path, "--sim-noise", "0",
            "--events", events_path, "--out-dir", out,
        ])
        assert r.exit_code == 0, r.output
        revisions = json.load(open(os.path.join(out, "revisions.json")))
        assert [rev["revision"] for rev in revisions] == [0, 1]
        assert revisions[1]["trigger"] == "script-1"
        final = json.load(open(os.path.join(out, "final_plan.json")))
        routed = [s["order_id"] for rt in final["routes"] for s in rt["stops"] if s["order_id"]]
        assert victim not in routed

    def test_journal_digest_reproducible(self, tmp_path, runner, inputs):
        net_path, sc_path = inputs
        plan_path = self.solve(runner, tmp_path, inputs)
        digests = []
        for sub in ("r1", "r2"):
            out = str(tmp_path / sub)
            r = runner.invoke(main, [
                "simulate", "--plan", plan_path, "--scenario", sc_path,
                "--network", net_path, "--seed", "5", "--sim-noise", "0.1",
                "--out-dir", out,
            ])
            assert r.exit_code == 0, r.output
            digests.append(sha256(os.path.join(out, "journal.ndjson")))
        assert digests[0] == digests[1]


class TestForecastCommand:
    def test_model_snapshot(self, tmp_path, runner):
        obs_path = str(tmp_path / "obs.ndjson")
        with open(obs_path, "w") as fh:
            fh.write(json.dumps({"edge_id": "e", "day_index": 0, "bucket_index": 0,
                                 "observed_speed": 8.0}) + "\n")
            fh.write(json.dumps({"edge_id": "e", "day_index": 1, "bucket_index": 0,
                                 "observed_speed": 12.0}) + "\n")
        out = str(tmp_path / "model.json")
        r = runner.invoke(main, ["forecast", "--observations", obs_path, "--out", out])
        assert r.exit_code == 0, r.output
        model = json.load(open(out))
        rec = model["state"][0]
        assert rec["smoothed_speed"] == pytest.approx(9.2)
        assert rec["count"] == 2


class TestBenchCommand:
    def test_small_bench_csv(self, tmp_path, runner):
        import csv

        out = str(tmp_path / "bench.csv")
        r = runner.invoke(main, [
            "bench", "--sizes", "4", "--instances", "2", "--iterations", "120",
            "--side", "4", "--out", out,
        ])
        assert r.exit_code == 0, r.output
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 2
        for row in rows:
            assert float(row["gap"]) >= -1e-9
