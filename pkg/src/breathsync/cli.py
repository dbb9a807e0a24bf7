"""Command-line harness: run scenarios, benchmark, serve and join over UDP.

Exit codes: 0 success, 2 validation error, 3 transport error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .lung import build_force_coeffs
from .scenario import (
    ScenarioError,
    TransportError,
    bench_deform,
    load_scenario,
    run_scenario,
)
from .session import (
    DEFAULT_UDP_PORT,
    ClientState,
    ParticipantRecord,
    ServerState,
    UdpTransport,
    run_udp_participant,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host:
        raise ScenarioError([f"endpoint must be host:port, got {text!r}"])
    try:
        return host, int(port)
    except ValueError as exc:
        raise ScenarioError([f"invalid port in {text!r}"]) from exc


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    report = run_scenario(scenario, args.out, seed=args.seed, plots=args.plots)
    drift = report.drift_report
    print(f"run complete: {len(report.trace_files)} trace files in {report.out_dir}")
    for pid in drift.participants():
        print(f"  {pid}: mean drift {drift.mean_drift_pct(pid):.6f}% "
              f"over {drift.cycles_measured(pid)} cycles")
    return EXIT_OK


def _cmd_bench(args) -> int:
    report = bench_deform(args.mesh_subdiv, args.band, args.iters)
    verdict = "PASS" if report.passed else "FAIL"
    print(f"deform: {report.node_count} nodes, band limit {report.band_limit}")
    print(f"mean {report.mean_ms:.3f} ms / p95 {report.p95_ms:.3f} ms per frame "
          f"(budget {report.budget_ms:.1f} ms): {verdict}")
    print(f"result checksum: {report.checksum}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    scenario = load_scenario(args.scenario)
    host, port = _parse_endpoint(args.bind)
    try:
        transport = UdpTransport((host, port))
    except OSError as exc:
        raise TransportError(f"cannot bind {args.bind}: {exc}") from exc
    force = build_force_coeffs(scenario.mesh, np.asarray(scenario.gravity),
                               scenario.band_limit)
    server = ServerState(scenario.pv, force, scenario.kernel, scenario.mesh,
                         epoch_ns=time.monotonic_ns())
    duration_s = scenario.duration_cycles * scenario.pv.period_s
    print(f"serving on {transport.address} for {duration_s:.1f} s")
    try:
        run_udp_participant(server, transport, duration_s, scenario.frame_rate_hz)
    finally:
        transport.close()
    print(f"served {server.cpos_sent} control packets to "
          f"{len(server.participants)} participants")
    return EXIT_OK


def _cmd_join(args) -> int:
    server_addr = _parse_endpoint(args.server)
    scenario = load_scenario(args.scenario) if args.scenario else None
    if scenario is not None:
        mesh = scenario.mesh
        frame_rate = scenario.frame_rate_hz
    else:
        from .mesh import make_test_lung

        mesh = make_test_lung(3)
        frame_rate = 40.0
    try:
        transport = UdpTransport(("0.0.0.0", 0))
    except OSError as exc:
        raise TransportError(f"cannot open UDP socket: {exc}") from exc
    client = ClientState(mesh, server_addr)
    record = ParticipantRecord("client")
    print(f"joining {server_addr} for {args.duration:.1f} s")
    try:
        run_udp_participant(client, transport, args.duration, frame_rate, record)
    finally:
        transport.close()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "trace_client.csv"
    with open(path, "w") as fh:
        fh.write("time_s,participant_id,pressure,volume_l,normalized_volume\n")
        for t, p, v, nv in zip(record.times_s, record.pressures,
                               record.volumes_l, record.normalized):
            fh.write(f"{t!r},client,{p!r},{v!r},{nv!r}\n")
    print(f"received {client.cpos_received} control packets; "
          f"wrote {len(record.times_s)} frames to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="breathsync",
        description="Distributed breathing simulation: scenario runner, "
                    "benchmark, UDP server and client.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write its report bundle")
    p_run.add_argument("--scenario", required=True, help="scenario JSON file")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_run.add_argument("--plots", action="store_true",
                       help="also write volume_traces.png")
    p_run.set_defaults(func=_cmd_run)

    p_bench = sub.add_parser("bench", help="benchmark per-frame deformation")
    p_bench.add_argument("--mesh-subdiv", type=int, default=4,
                         help="icosphere subdivision level (default 4: 2562 nodes)")
    p_bench.add_argument("--band", type=int, default=8,
                         help="spherical-harmonic band limit (default 8)")
    p_bench.add_argument("--iters", type=int, default=200,
                         help="timed iterations (default 200)")
    p_bench.set_defaults(func=_cmd_bench)

    p_serve = sub.add_parser("serve", help="serve a scenario over UDP")
    p_serve.add_argument("--bind", default=f"0.0.0.0:{DEFAULT_UDP_PORT}",
                         help=f"bind address (default 0.0.0.0:{DEFAULT_UDP_PORT})")
    p_serve.add_argument("--scenario", required=True, help="scenario JSON file")
    p_serve.set_defaults(func=_cmd_serve)

    p_join = sub.add_parser("join", help="join a UDP session as a client")
    p_join.add_argument("--server", required=True, help="server host:port")
    p_join.add_argument("--out", required=True, help="output directory")
    p_join.add_argument("--scenario", default=None,
                        help="optional scenario JSON for the local mesh")
    p_join.add_argument("--duration", type=float, default=30.0,
                        help="seconds to stay joined (default 30)")
    p_join.set_defaults(func=_cmd_join)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print("scenario validation failed:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
