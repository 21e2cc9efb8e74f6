"""Scenario loading, expectation evaluation, CLI exit codes, serve loop."""

import json
import signal
import socket
import subprocess
import sys
import threading
from pathlib import Path

import pytest

from ogi.errors import ValidationError
from ogi.harness import bench, evaluate_expectation, run_scenario, switching_scenario
from ogi.scenario import Expectation, load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
PASSING = sorted(p for p in SCENARIOS.glob("*.json"))
FAILING = sorted((SCENARIOS / "failing").glob("unmet_*.json"))


def test_shipped_scenarios_parse():
    assert len(PASSING) >= 5
    for path in PASSING + FAILING:
        scenario = load_scenario(path)
        assert scenario.name


def test_invalid_schema_lists_every_problem():
    with pytest.raises(ValidationError) as excinfo:
        load_scenario(SCENARIOS / "failing" / "invalid_schema.json")
    text = str(excinfo.value)
    assert "modules must be a non-empty list" in text
    assert "unknown direction" in text
    assert "unknown adapter" in text
    assert "expectations[0].kind" in text
    assert len(excinfo.value.problems) >= 4


def test_not_json_is_a_validation_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_scenario(path)


def test_trail_walk_run_report():
    report = run_scenario(load_scenario(SCENARIOS / "trail_walk.json"))
    assert report.ok
    assert len(report.interrupts) == 1
    assert abs(report.interrupts[0]["divergence"] - 0.9) <= 1e-12
    kinds = [d["kind"] for d in report.decision_log]
    assert kinds.count("TakeOver") == 1
    assert kinds.count("DispatchProcedure") == 1
    assert report.rejected_ingests == []
    obj = report.to_obj()
    json.dumps(obj)  # must be serializable as-is
    assert obj["ok"] is True


def test_failing_fixtures_fail_for_their_own_reason():
    expected_kind = {
        "unmet_interrupt.json": "interrupt-count",
        "unmet_directive.json": "directive-count",
        "unmet_metric.json": "metric-bound",
        "unmet_goal.json": "goal-complete",
    }
    assert len(FAILING) == len(expected_kind)
    for path in FAILING:
        report = run_scenario(load_scenario(path))
        assert not report.ok, path.name
        failed = [r for r in report.expectation_results if not r.ok]
        assert [r.kind for r in failed] == [expected_kind[path.name]], path.name


def test_expectation_evaluator_bounds():
    metrics = {"autonomous": {"interrupts_raised": 2, "run_steps": 40}}
    log = [{"kind": "TakeOver"}, {"kind": "TakeOver"}, {"kind": "Complete"}]
    ok = evaluate_expectation(Expectation("interrupt-count", {"equals": 2}), metrics, log)
    assert ok.ok
    off = evaluate_expectation(Expectation("interrupt-count", {"equals": 3}), metrics, log)
    assert not off.ok and "expected 3" in off.detail
    ranged = evaluate_expectation(
        Expectation("directive-count", {"directive": "TakeOver", "min": 1, "max": 2}), metrics, log
    )
    assert ranged.ok
    over = evaluate_expectation(
        Expectation("directive-count", {"directive": "TakeOver", "max": 1}), metrics, log
    )
    assert not over.ok
    missing = evaluate_expectation(
        Expectation("metric-bound", {"path": "no.such.counter", "min": 0}), metrics, log
    )
    assert not missing.ok and "not found" in missing.detail
    goal = evaluate_expectation(Expectation("goal-complete", {"equals": True}), metrics, log)
    assert goal.ok


def test_bench_is_deterministic_and_switches_five_times():
    report = bench(seed=3)
    assert report.deterministic
    assert report.ok
    assert len(report.switch_wall_ns) == 5
    assert report.run.metrics["autonomous"]["interrupts_raised"] == 5
    assert all(v == 0 for v in report.switch_virtual_ns)


def test_switching_scenario_differs_across_seeds_only_in_seed():
    a = switching_scenario(seed=1)
    b = switching_scenario(seed=2)
    assert a.seed != b.seed
    assert a.events == b.events


def run_cli(*argv):
    return subprocess.run(
        [sys.executable, "-m", "ogi.cli", *argv],
        capture_output=True,
        text=True,
        timeout=120,
    )


def test_cli_exit_codes():
    good = run_cli("run", str(SCENARIOS / "empty.json"))
    assert good.returncode == 0, good.stderr
    assert "result: PASS" in good.stdout
    bad = run_cli("run", str(SCENARIOS / "failing" / "unmet_metric.json"))
    assert bad.returncode == 1
    assert "result: FAIL" in bad.stdout
    invalid = run_cli("run", str(SCENARIOS / "failing" / "invalid_schema.json"))
    assert invalid.returncode == 2
    assert "scenario is invalid" in invalid.stderr
    missing = run_cli("run", str(SCENARIOS / "no_such_file.json"))
    assert missing.returncode == 2


def test_cli_validate():
    ok = run_cli("validate", str(SCENARIOS / "triage.json"))
    assert ok.returncode == 0
    assert ok.stdout.startswith("ok: triage")
    bad = run_cli("validate", str(SCENARIOS / "failing" / "invalid_schema.json"))
    assert bad.returncode == 2


def test_cli_run_json_report():
    result = run_cli("run", str(SCENARIOS / "triage.json"), "--json")
    assert result.returncode == 0
    report = json.loads(result.stdout)
    assert report["ok"] is True
    assert report["scenario"] == "triage"
    assert any(d["kind"] == "Complete" for d in report["decision_log"])


def test_cli_bench_json():
    result = run_cli("bench", "--seed", "5", "--json")
    assert result.returncode == 0
    report = json.loads(result.stdout)
    assert report["deterministic"] is True
    assert report["switch_wall_latency"]["count"] == 5


def test_cli_serve_smoke():
    process = subprocess.Popen(
        [
            sys.executable, "-m", "ogi.cli", "serve", str(SCENARIOS / "empty.json"),
            "--admin-token", "adm", "--viewer-token", "view", "--port", "0",
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        banner = {}

        def read_banner():
            banner["line"] = process.stdout.readline()

        reader = threading.Thread(target=read_banner, daemon=True)
        reader.start()
        reader.join(timeout=30)
        line = banner.get("line", "")
        assert line.startswith("serving empty on "), line
        host, port = line.rsplit(" ", 1)[1].strip().rsplit(":", 1)
        with socket.create_connection((host, int(port)), timeout=5) as sock:
            sock.settimeout(5)
            sock.sendall(b'{"op": "GetMetrics", "auth_token": "view"}\n')
            answer = json.loads(sock.makefile("rb").readline())
        assert answer["status"] == "ok"
        assert answer["body"]["now_ns"] >= 0
    finally:
        process.send_signal(signal.SIGINT)
        try:
            process.wait(timeout=15)
        except subprocess.TimeoutExpired:
            process.kill()
            raise
    assert process.returncode == 0
