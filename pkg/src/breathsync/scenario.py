"""Scenario-driven experiment runner: traces, drift reports, benchmarks.

A scenario is a strict JSON document (unknown keys rejected, every violation
reported) describing participants, breathing parameters, the deformation
kernel, the mesh, the network model and the run length.  Runs write
per-participant trace CSVs, a drift report (CSV + JSON) and a manifest that
is sufficient to reproduce the run.
"""

from __future__ import annotations

import json
import platform
import threading
import time
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path

import numpy as np

from . import __version__
from .lung import (
    ElasticityKernel,
    PVParams,
    build_force_coeffs,
    default_elasticity_kernel,
    deform,
    pressure_at_phase,
)
from .mesh import LungMesh, MeshShape, load_off, make_test_lung
from .session import (
    DEFAULT_FRAME_RATE_HZ,
    ClientState,
    NetworkConfig,
    ParticipantRecord,
    ServerState,
    SessionResult,
    SimulatedSession,
    UdpTransport,
    run_udp_participant,
)
from .timesync import VolumeTrace, drift_per_cycle


class ScenarioError(ValueError):
    """Scenario validation failed; .problems lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TransportError(RuntimeError):
    """A real-network operation (bind, send) failed."""


_TOP_LEVEL_KEYS = {
    "participants", "duration_cycles", "mode", "seed", "band_limit",
    "pv", "kernel", "mesh", "network", "sync_enabled", "clock_skew_ms",
    "frame_rate_hz", "gravity",
}


@dataclass(frozen=True)
class Scenario:
    """Validated run description."""

    participants: int
    duration_cycles: int
    mode: str
    seed: int
    band_limit: int
    pv: PVParams
    kernel: ElasticityKernel
    mesh: LungMesh
    network: NetworkConfig
    sync_enabled: bool
    clock_skews_ns: tuple[int, ...]
    frame_rate_hz: float
    gravity: tuple[float, float, float]
    raw: dict = field(repr=False)


def _mesh_from_spec(spec: dict, base_dir: Path, problems: list) -> LungMesh | None:
    known = {"subdivisions", "axis_scales", "lobe_amplitude", "off_path"}
    unknown = set(spec) - known
    if unknown:
        problems.append(f"mesh: unknown keys {sorted(unknown)}")
    if "off_path" in spec:
        path = base_dir / spec["off_path"]
        if not path.is_file():
            problems.append(f"mesh.off_path: file does not exist: {path}")
            return None
        try:
            return load_off(path)
        except Exception as exc:
            problems.append(f"mesh.off_path: {exc}")
            return None
    try:
        shape = MeshShape(
            axis_scales=tuple(spec.get("axis_scales", (1.0, 1.0, 1.0))),
            lobe_amplitude=float(spec.get("lobe_amplitude", 0.0)))
        return make_test_lung(int(spec.get("subdivisions", 3)), shape)
    except Exception as exc:
        problems.append(f"mesh: {exc}")
        return None


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; raises ScenarioError listing
    every violated field."""
    path = Path(path)
    problems: list[str] = []
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError([f"cannot read scenario: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ScenarioError(["scenario must be a JSON object"])

    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        problems.append(f"unknown keys {sorted(unknown)}")

    participants = raw.get("participants", 0)
    if not isinstance(participants, int) or participants < 2:
        problems.append("participants: must be an integer >= 2 (one server)")
    duration = raw.get("duration_cycles", 0)
    if not isinstance(duration, int) or duration < 1:
        problems.append("duration_cycles: must be an integer >= 1")
    mode = raw.get("mode", "simulated")
    if mode not in ("simulated", "udp"):
        problems.append(f"mode: must be 'simulated' or 'udp', got {mode!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        problems.append("seed: must be an integer")
        seed = 0
    band_limit = raw.get("band_limit", 8)
    if not isinstance(band_limit, int) or not (0 <= band_limit <= 32):
        problems.append("band_limit: must be an integer in 0..32")
        band_limit = 8

    pv = None
    pv_spec = raw.get("pv")
    if not isinstance(pv_spec, dict):
        problems.append("pv: required object with frc, tv, pr, rate, cp")
    else:
        unknown = set(pv_spec) - {"frc", "tv", "pr", "rate", "cp"}
        if unknown:
            problems.append(f"pv: unknown keys {sorted(unknown)}")
        try:
            pv = PVParams(frc=pv_spec.get("frc", 0.0), tv=pv_spec.get("tv", 0.0),
                          pr=pv_spec.get("pr", 0.0), rate=pv_spec.get("rate", 0.0),
                          cp=np.asarray(pv_spec.get("cp", []), dtype=float))
        except (ValueError, TypeError) as exc:
            problems.append(f"pv: {exc}")

    kernel = None
    kernel_spec = raw.get("kernel", {"t0": 0.02})
    if not isinstance(kernel_spec, dict):
        problems.append("kernel: must be an object with t0 or coeffs")
    else:
        unknown = set(kernel_spec) - {"t0", "coeffs"}
        if unknown:
            problems.append(f"kernel: unknown keys {sorted(unknown)}")
        try:
            if "coeffs" in kernel_spec:
                kernel = ElasticityKernel(np.asarray(kernel_spec["coeffs"], dtype=float))
                if len(kernel) < (band_limit + 1) ** 2:
                    problems.append(
                        f"kernel.coeffs: needs >= {(band_limit + 1) ** 2} entries "
                        f"for band limit {band_limit}")
            else:
                kernel = default_elasticity_kernel(band_limit,
                                                   t0=float(kernel_spec.get("t0", 0.02)))
        except (ValueError, TypeError) as exc:
            problems.append(f"kernel: {exc}")

    mesh_spec = raw.get("mesh", {"subdivisions": 3})
    mesh = None
    if not isinstance(mesh_spec, dict):
        problems.append("mesh: must be an object")
    else:
        mesh = _mesh_from_spec(mesh_spec, path.parent, problems)
    if mesh is not None and mesh.node_count < (band_limit + 1) ** 2:
        problems.append(
            f"mesh: {mesh.node_count} nodes cannot support band limit "
            f"{band_limit} (needs >= {(band_limit + 1) ** 2})")

    network = None
    net_spec = raw.get("network", {})
    if not isinstance(net_spec, dict):
        problems.append("network: must be an object")
    else:
        unknown = set(net_spec) - {"latency_mean_ms", "jitter_ms", "drop_probability"}
        if unknown:
            problems.append(f"network: unknown keys {sorted(unknown)}")
        try:
            network = NetworkConfig(
                latency_mean_ns=round(float(net_spec.get("latency_mean_ms", 0.0)) * 1e6),
                jitter_ns=round(float(net_spec.get("jitter_ms", 0.0)) * 1e6),
                drop_probability=float(net_spec.get("drop_probability", 0.0)),
                seed=seed)
        except (ValueError, TypeError) as exc:
            problems.append(f"network: {exc}")

    sync_enabled = raw.get("sync_enabled", True)
    if not isinstance(sync_enabled, bool):
        problems.append("sync_enabled: must be a boolean")
        sync_enabled = True

    n_clients = participants - 1 if isinstance(participants, int) else 0
    skew_spec = raw.get("clock_skew_ms", [0.0] * max(n_clients, 0))
    skews: tuple[int, ...] = ()
    if not isinstance(skew_spec, list):
        problems.append("clock_skew_ms: must be a list with one entry per client")
    elif n_clients > 0 and len(skew_spec) != n_clients:
        problems.append(
            f"clock_skew_ms: expected {n_clients} entries, got {len(skew_spec)}")
    else:
        try:
            skews = tuple(round(float(s) * 1e6) for s in skew_spec)
        except (ValueError, TypeError):
            problems.append("clock_skew_ms: entries must be numbers")

    frame_rate = raw.get("frame_rate_hz", DEFAULT_FRAME_RATE_HZ)
    if not isinstance(frame_rate, (int, float)) or frame_rate <= 0:
        problems.append("frame_rate_hz: must be a positive number")
        frame_rate = DEFAULT_FRAME_RATE_HZ

    gravity = raw.get("gravity", [0.0, 0.0, -1.0])
    if (not isinstance(gravity, list) or len(gravity) != 3
            or not all(isinstance(g, (int, float)) for g in gravity)
            or abs(float(np.linalg.norm(gravity)) - 1.0) > 1e-6):
        problems.append("gravity: must be a unit 3-vector")
        gravity = [0.0, 0.0, -1.0]
    else:
        gravity = list(np.asarray(gravity, dtype=float) / np.linalg.norm(gravity))

    if problems:
        raise ScenarioError(problems)
    return Scenario(
        participants=participants, duration_cycles=duration, mode=mode,
        seed=seed, band_limit=band_limit, pv=pv, kernel=kernel, mesh=mesh,
        network=network, sync_enabled=sync_enabled, clock_skews_ns=skews,
        frame_rate_hz=float(frame_rate),
        gravity=tuple(float(g) for g in gravity), raw=raw)


# -- run -------------------------------------------------------------------

def _write_trace_csv(path: Path, record: ParticipantRecord) -> None:
    with open(path, "w") as fh:
        fh.write("time_s,participant_id,pressure,volume_l,normalized_volume\n")
        for t, p, v, nv in zip(record.times_s, record.pressures,
                               record.volumes_l, record.normalized):
            fh.write(f"{t!r},{record.participant_id},{p!r},{v!r},{nv!r}\n")


def _write_manifest(out_dir: Path, scenario: Scenario, seed: int,
                    trace_files: list[str]) -> None:
    manifest = {
        "scenario": scenario.raw,
        "effective_seed": seed,
        "mode": scenario.mode,
        "trace_files": trace_files,
        "versions": {
            "breathsync": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plot_traces(out_dir: Path, records: dict) -> None:
    try:
        import matplotlib
    except ImportError as exc:
        raise ScenarioError(
            ["plots require matplotlib: pip install 'breathsync[plots]'"]) from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 4.5))
    for pid, rec in sorted(records.items()):
        ax.plot(rec.times_s, rec.normalized, label=pid, linewidth=1.0)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("normalized breathing volume")
    ax.legend(loc="upper right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "volume_traces.png", dpi=120)
    plt.close(fig)


@dataclass
class RunReport:
    out_dir: Path
    trace_files: list[str]
    drift_csv: str
    drift_json: str
    result: SessionResult
    drift_report: object


def run_scenario(scenario: Scenario, out_dir, seed: int | None = None,
                 plots: bool = False) -> RunReport:
    """Run a scenario to completion and write its report bundle."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    effective_seed = scenario.seed if seed is None else int(seed)
    if scenario.mode == "simulated":
        result = _run_simulated(scenario, effective_seed)
    else:
        result = _run_udp_local(scenario, effective_seed)

    trace_files = []
    for pid, record in sorted(result.records.items()):
        name = f"trace_{pid}.csv"
        _write_trace_csv(out_dir / name, record)
        trace_files.append(name)

    server_rec = result.records["server"]
    reference = VolumeTrace("server", np.asarray(server_rec.times_s),
                            np.asarray(server_rec.normalized))
    others = [VolumeTrace(pid, np.asarray(rec.times_s), np.asarray(rec.normalized))
              for pid, rec in sorted(result.records.items()) if pid != "server"]
    drift = drift_per_cycle(reference, others, period_s=result.period_s,
                            cycle_start_s=0.0)
    drift.write_csv(out_dir / "drift.csv")
    drift.write_json(out_dir / "drift.json")
    _write_manifest(out_dir, scenario, effective_seed, trace_files)
    if plots:
        _plot_traces(out_dir, result.records)
    return RunReport(out_dir=out_dir, trace_files=trace_files,
                     drift_csv="drift.csv", drift_json="drift.json",
                     result=result, drift_report=drift)


def _run_simulated(scenario: Scenario, seed: int) -> SessionResult:
    force = build_force_coeffs(scenario.mesh, np.asarray(scenario.gravity),
                               scenario.band_limit)
    network = NetworkConfig(
        latency_mean_ns=scenario.network.latency_mean_ns,
        jitter_ns=scenario.network.jitter_ns,
        drop_probability=scenario.network.drop_probability,
        seed=seed)
    session = SimulatedSession(
        scenario.pv, force, scenario.kernel, scenario.mesh, network,
        n_clients=scenario.participants - 1,
        frame_rate_hz=scenario.frame_rate_hz,
        sync_enabled=scenario.sync_enabled,
        client_skews_ns=list(scenario.clock_skews_ns))
    return session.run(scenario.duration_cycles)


def _run_udp_local(scenario: Scenario, seed: int,
                   port: int = 0) -> SessionResult:
    """All participants as threads on loopback UDP (desk-scale LAN stand-in)."""
    force = build_force_coeffs(scenario.mesh, np.asarray(scenario.gravity),
                               scenario.band_limit)
    duration_s = scenario.duration_cycles * scenario.pv.period_s + 0.5
    try:
        server_transport = UdpTransport(("127.0.0.1", port))
    except OSError as exc:
        raise TransportError(f"cannot bind UDP socket: {exc}") from exc
    server_addr = server_transport.address
    server = ServerState(scenario.pv, force, scenario.kernel, scenario.mesh,
                         epoch_ns=time.monotonic_ns())
    n_clients = scenario.participants - 1
    records = {"server": ParticipantRecord("server")}
    clients = []
    for i in range(n_clients):
        cid = f"client{i + 1:02d}"
        records[cid] = ParticipantRecord(cid)
        try:
            transport = UdpTransport(("127.0.0.1", 0))
        except OSError as exc:
            raise TransportError(f"cannot bind UDP socket: {exc}") from exc
        state = ClientState(scenario.mesh, server_addr,
                            sync_enabled=scenario.sync_enabled)
        clients.append((cid, state, transport))

    cpos = {}
    threads = []
    epoch = time.monotonic_ns()

    def serve():
        run_udp_participant(server, server_transport, duration_s,
                            scenario.frame_rate_hz, records["server"],
                            epoch_ns=epoch)

    threads.append(threading.Thread(target=serve, daemon=True))
    for cid, state, transport in clients:
        def join(cid=cid, state=state, transport=transport):
            run_udp_participant(state, transport, duration_s,
                                scenario.frame_rate_hz, records[cid],
                                epoch_ns=epoch)
            cpos[cid] = state.cpos_received

        threads.append(threading.Thread(target=join, daemon=True))
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    server_transport.close()
    for _, _, transport in clients:
        transport.close()
    return SessionResult(records=records, cpos_received=cpos,
                         period_s=scenario.pv.period_s,
                         duration_cycles=scenario.duration_cycles)


# -- benchmark ---------------------------------------------------------------

@dataclass(frozen=True)
class BenchReport:
    node_count: int
    band_limit: int
    iterations: int
    mean_ms: float
    p95_ms: float
    budget_ms: float
    passed: bool
    checksum: str


FRAME_BUDGET_MS = 1000.0 / 75.0  # 75 frames per second


def bench_deform(subdivisions: int, band_limit: int, iterations: int,
                 shape: MeshShape = MeshShape()) -> BenchReport:
    """Measure warm per-frame deform() time against the 75 Hz budget."""
    if iterations < 1:
        raise ScenarioError(["iterations: must be >= 1"])
    mesh = make_test_lung(subdivisions, shape)
    pv = PVParams(frc=2.4, tv=0.5, pr=20.0, rate=12.0,
                  cp=np.array([0.0, 0.25, 0.5, 0.75, 1.0]))
    force = build_force_coeffs(mesh, np.array([0.0, 0.0, -1.0]), band_limit)
    kernel = default_elasticity_kernel(band_limit, t0=0.02)
    pressures = [pressure_at_phase(k / 64.0, pv) for k in range(64)]
    for k in range(5):  # warm-up: fills the SH matrix cache
        deform(mesh, force, kernel, pressures[k % 64], pv)
    samples = []
    digest = sha256()
    for k in range(iterations):
        t0 = time.perf_counter()
        out = deform(mesh, force, kernel, pressures[k % 64], pv)
        samples.append((time.perf_counter() - t0) * 1e3)
        digest.update(out.radii.tobytes())
    mean_ms = float(np.mean(samples))
    p95_ms = float(np.percentile(samples, 95))
    return BenchReport(node_count=mesh.node_count, band_limit=band_limit,
                       iterations=iterations, mean_ms=mean_ms, p95_ms=p95_ms,
                       budget_ms=FRAME_BUDGET_MS,
                       passed=mean_ms <= FRAME_BUDGET_MS,
                       checksum=digest.hexdigest())
