import json
import socket
from pathlib import Path

import numpy as np
import pytest

from breathsync.scenario import (
    BenchReport,
    ScenarioError,
    bench_deform,
    load_scenario,
    run_scenario,
)

SCENARIOS = Path(__file__).parent.parent / "demos" / "scenarios"


def base_scenario(**overrides):
    doc = {
        "participants": 2,
        "duration_cycles": 2,
        "mode": "simulated",
        "seed": 5,
        "band_limit": 4,
        "pv": {"frc": 2.4, "tv": 0.5, "pr": 20.0, "rate": 30.0,
               "cp": [0.0, 0.25, 0.5, 0.75, 1.0]},
        "kernel": {"t0": 0.02},
        "mesh": {"subdivisions": 2},
        "network": {"latency_mean_ms": 0.0, "jitter_ms": 0.0,
                    "drop_probability": 0.0},
        "sync_enabled": True,
        "clock_skew_ms": [0.0],
        "frame_rate_hz": 40.0,
    }
    doc.update(overrides)
    return doc


def write_scenario(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestLoadScenario:
    def test_valid_scenario_loads(self, tmp_path):
        scn = load_scenario(write_scenario(tmp_path, base_scenario()))
        assert scn.participants == 2
        assert scn.pv.rate == 30.0
        assert scn.mesh.node_count == 162

    def test_shipped_scenarios_load(self):
        for name in ("volume_consistency.json", "three_participant_drift.json"):
            scn = load_scenario(SCENARIOS / name)
            assert scn.participants >= 2

    def test_unknown_keys_rejected(self, tmp_path):
        doc = base_scenario(bogus_key=1)
        doc["pv"]["extra"] = 2
        with pytest.raises(ScenarioError) as err:
            load_scenario(write_scenario(tmp_path, doc))
        text = str(err.value)
        assert "bogus_key" in text
        assert "extra" in text

    def test_every_violation_reported(self, tmp_path):
        doc = base_scenario(participants=1, duration_cycles=0, mode="carrier-pigeon")
        doc["pv"]["frc"] = -1.0
        with pytest.raises(ScenarioError) as err:
            load_scenario(write_scenario(tmp_path, doc))
        problems = err.value.problems
        assert any("participants" in p for p in problems)
        assert any("duration_cycles" in p for p in problems)
        assert any("mode" in p for p in problems)
        assert any("pv" in p for p in problems)

    def test_missing_off_file_rejected(self, tmp_path):
        doc = base_scenario(mesh={"off_path": "no_such.off"})
        with pytest.raises(ScenarioError) as err:
            load_scenario(write_scenario(tmp_path, doc))
        assert any("off_path" in p for p in err.value.problems)

    def test_off_mesh_accepted(self, tmp_path):
        from breathsync.mesh import make_test_lung, save_off

        save_off(make_test_lung(2), tmp_path / "lung.off")
        doc = base_scenario(mesh={"off_path": "lung.off"})
        scn = load_scenario(write_scenario(tmp_path, doc))
        assert scn.mesh.node_count == 162

    def test_band_limit_vs_mesh_nodes(self, tmp_path):
        doc = base_scenario(band_limit=8, mesh={"subdivisions": 1})  # 42 < 81
        with pytest.raises(ScenarioError) as err:
            load_scenario(write_scenario(tmp_path, doc))
        assert any("band limit" in p for p in err.value.problems)

    def test_skew_count_must_match_clients(self, tmp_path):
        doc = base_scenario(participants=3, clock_skew_ms=[1.0])
        with pytest.raises(ScenarioError):
            load_scenario(write_scenario(tmp_path, doc))

    def test_near_unit_gravity_normalized_on_load(self, tmp_path):
        # within loader tolerance but not exactly unit: must be usable anyway
        doc = base_scenario(gravity=[0.0, 0.0, -1.0000001])
        scn = load_scenario(write_scenario(tmp_path, doc))
        assert np.linalg.norm(scn.gravity) == pytest.approx(1.0, abs=1e-12)
        run_scenario(scn, tmp_path / "out")  # must not raise mid-run

    def test_non_unit_gravity_rejected(self, tmp_path):
        doc = base_scenario(gravity=[0.0, 0.0, -2.0])
        with pytest.raises(ScenarioError) as err:
            load_scenario(write_scenario(tmp_path, doc))
        assert any("gravity" in p for p in err.value.problems)


class TestRunScenario:
    def test_zero_latency_pair_matches(self, tmp_path):
        scn = load_scenario(write_scenario(tmp_path, base_scenario()))
        report = run_scenario(scn, tmp_path / "out")
        assert sorted(report.trace_files) == ["trace_client01.csv", "trace_server.csv"]
        server = np.genfromtxt(tmp_path / "out" / "trace_server.csv",
                               delimiter=",", names=True,
                               dtype=None, encoding="utf-8")
        client = np.genfromtxt(tmp_path / "out" / "trace_client01.csv",
                               delimiter=",", names=True,
                               dtype=None, encoding="utf-8")
        by_time = dict(zip(server["time_s"], server["normalized_volume"]))
        diffs = [abs(nv - by_time[t])
                 for t, nv in zip(client["time_s"], client["normalized_volume"])
                 if t in by_time]
        assert len(diffs) > 100
        assert max(diffs) < 1e-9

    def test_report_bundle_contents(self, tmp_path):
        scn = load_scenario(write_scenario(tmp_path, base_scenario()))
        out = tmp_path / "out"
        run_scenario(scn, out)
        assert (out / "drift.csv").is_file()
        assert (out / "drift.json").is_file()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["scenario"] == base_scenario()
        assert manifest["effective_seed"] == 5
        assert "breathsync" in manifest["versions"]

    def test_reproducible_byte_identical(self, tmp_path):
        scn = load_scenario(write_scenario(tmp_path, base_scenario(
            network={"latency_mean_ms": 0.5, "jitter_ms": 0.2,
                     "drop_probability": 0.0})))
        run_scenario(scn, tmp_path / "a")
        run_scenario(scn, tmp_path / "b")
        for name in ("trace_server.csv", "trace_client01.csv",
                     "drift.csv", "drift.json"):
            assert (tmp_path / "a" / name).read_bytes() \
                == (tmp_path / "b" / name).read_bytes(), name

    def test_seed_override_recorded(self, tmp_path):
        scn = load_scenario(write_scenario(tmp_path, base_scenario()))
        out = tmp_path / "out"
        run_scenario(scn, out, seed=123)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["effective_seed"] == 123

    def test_manifest_alone_reproduces_the_run(self, tmp_path):
        scn = load_scenario(write_scenario(tmp_path, base_scenario(
            network={"latency_mean_ms": 0.5, "jitter_ms": 0.2,
                     "drop_probability": 0.0})))
        first = tmp_path / "first"
        run_scenario(scn, first, seed=55)
        manifest = json.loads((first / "manifest.json").read_text())
        replay_path = write_scenario(tmp_path, manifest["scenario"], "replay.json")
        replay_out = tmp_path / "replay"
        run_scenario(load_scenario(replay_path), replay_out,
                     seed=manifest["effective_seed"])
        for name in ("trace_server.csv", "trace_client01.csv", "drift.csv"):
            assert (first / name).read_bytes() == (replay_out / name).read_bytes()

    def test_plots_flag(self, tmp_path):
        pytest.importorskip("matplotlib")
        scn = load_scenario(write_scenario(tmp_path, base_scenario(
            duration_cycles=2)))
        out = tmp_path / "out"
        run_scenario(scn, out, plots=True)
        assert (out / "volume_traces.png").is_file()


class TestUdpScenario:
    def test_loopback_session_smoke(self, tmp_path):
        try:
            probe = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            probe.bind(("127.0.0.1", 0))
            probe.close()
        except OSError:
            pytest.skip("loopback UDP unavailable in this environment")
        doc = base_scenario(mode="udp",
                            pv={"frc": 2.4, "tv": 0.5, "pr": 20.0, "rate": 60.0,
                                "cp": [0.0, 0.25, 0.5, 0.75, 1.0]},
                            duration_cycles=2)
        scn = load_scenario(write_scenario(tmp_path, doc))
        report = run_scenario(scn, tmp_path / "out")
        client = report.result.records["client01"]
        assert len(client.times_s) > 20
        assert report.result.cpos_received["client01"] >= 1
        drift = report.drift_report
        assert drift.mean_drift_pct("client01") < 5.0


class TestBenchDeform:
    def test_zero_iterations_rejected(self):
        with pytest.raises(ScenarioError):
            bench_deform(2, 4, 0)

    def test_report_shape(self):
        report = bench_deform(2, 4, 20)
        assert isinstance(report, BenchReport)
        assert report.node_count == 162
        assert report.mean_ms > 0.0
        assert report.p95_ms >= report.mean_ms * 0.5
        assert report.budget_ms == pytest.approx(13.333, abs=1e-2)

    def test_identical_result_checksums_across_runs(self):
        a = bench_deform(2, 4, 10)
        b = bench_deform(2, 4, 10)
        assert a.checksum == b.checksum
