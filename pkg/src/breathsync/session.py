"""Client-server breathing session over an abstract message transport.

The server drives the breathing cycle and broadcasts one control packet per
cycle (plus an immediate flagged packet on parameter changes); every client
reconstructs the deformation locally from its newest packet and its
offset-corrected clock.  Two transports are provided: a deterministic
in-process simulated network over a virtual clock, and UDP datagrams over
the real clock.
"""

from __future__ import annotations

import heapq
import logging
import math
import select
import socket
import time
from dataclasses import dataclass, field

import numpy as np

from .harmonics import SHCoefficients
from .lung import (
    ElasticityKernel,
    PVParams,
    deform,
    normalized_volume,
    pressure_at_phase,
)
from .mesh import LungMesh, enclosed_volume
from .protocol import (
    FLAG_PARAM_CHANGE,
    ControlPacketObject,
    DecodeError,
    SyncKind,
    SyncMessage,
    decode_message,
    encode_cpo,
    encode_sync,
)
from .timesync import (
    BreathingSchedule,
    ClockSampleRejected,
    DelayEstimator,
    four_timestamp_offset,
    update_delay_estimate,
)

log = logging.getLogger(__name__)

DEFAULT_UDP_PORT = 47001
DEFAULT_FRAME_RATE_HZ = 40.0
PING_INTERVAL_NS = 250_000_000
# keeps simulated local clocks positive under negative skews
LOCAL_CLOCK_BASE_NS = 10_000_000_000


class ClockRegressionError(RuntimeError):
    """A participant was stepped with a clock earlier than its last step."""


@dataclass(frozen=True)
class Frame:
    """One rendered simulation frame."""

    pressure: float
    volume_l: float
    normalized_volume: float


def _period_ns(params: PVParams) -> int:
    return round(60e9 / params.rate)


def _make_cpo(params: PVParams, force: SHCoefficients, kernel: ElasticityKernel,
              sequence: int, cycle_start_ns: int, flags: int) -> ControlPacketObject:
    return ControlPacketObject(
        sequence=sequence, cycle_start_ns=cycle_start_ns, flags=flags,
        frc=params.frc, tv=params.tv, pr=params.pr, rate=params.rate,
        cp=params.cp, f=force.coeffs, t=kernel.coeffs)


class ServerState:
    """Breathing-cycle driver and packet source.

    Owns the authoritative schedule: emits one control packet per participant
    at every cycle boundary, an immediate flagged packet when a parameter
    change is requested, an initial packet to each newly seen participant,
    and pong replies to pings.
    """

    def __init__(self, params: PVParams, force: SHCoefficients,
                 kernel: ElasticityKernel, mesh: LungMesh, epoch_ns: int = 0):
        self.params = params
        self.force = force
        self.kernel = kernel
        self.mesh = mesh
        self.epoch_ns = int(epoch_ns)
        self.sequence = 1
        self.cycle_start_ns = self.epoch_ns
        self.next_boundary_ns = self.epoch_ns + _period_ns(params)
        self.participants: list = []
        self.pending_change: tuple[PVParams, SHCoefficients, ElasticityKernel] | None = None
        self.last_step_ns: int | None = None
        self.cpos_sent = 0

    def request_param_change(self, params: PVParams,
                             force: SHCoefficients | None = None,
                             kernel: ElasticityKernel | None = None) -> None:
        """Queue new parameters; the next step broadcasts them immediately."""
        self.pending_change = (params, force or self.force, kernel or self.kernel)

    def _current_cpo(self, flags: int = 0) -> ControlPacketObject:
        return _make_cpo(self.params, self.force, self.kernel,
                         self.sequence, self.cycle_start_ns, flags)

    def step(self, now_ns: int, inbox) -> tuple[list, Frame]:
        """Advance to now_ns; returns ((dst, payload) list, rendered frame).

        inbox entries are (recv_ns, src, payload) with recv_ns on this
        participant's clock.
        """
        if self.last_step_ns is not None and now_ns < self.last_step_ns:
            raise ClockRegressionError(
                f"clock went backwards: {now_ns} < {self.last_step_ns}")
        self.last_step_ns = now_ns
        outgoing: list = []
        fresh: list = []
        for recv_ns, src, payload in inbox:
            try:
                msg = decode_message(payload)
            except DecodeError as exc:
                log.debug("server dropped undecodable packet from %s: %s", src, exc)
                continue
            if src not in self.participants:
                self.participants.append(src)
                fresh.append(src)
            if isinstance(msg, SyncMessage) and msg.kind == SyncKind.PING:
                pong = SyncMessage(SyncKind.PONG, t0=msg.t0, t1=recv_ns, t2=now_ns)
                outgoing.append((src, encode_sync(pong)))

        covered: set = set()
        if self.pending_change is not None:
            self.params, self.force, self.kernel = self.pending_change
            self.pending_change = None
            self.sequence += 1
            self.cycle_start_ns = now_ns
            self.next_boundary_ns = now_ns + _period_ns(self.params)
            wire = encode_cpo(self._current_cpo(FLAG_PARAM_CHANGE))
            for dst in self.participants:
                outgoing.append((dst, wire))
                covered.add(dst)
                self.cpos_sent += 1
        while now_ns >= self.next_boundary_ns:
            self.sequence += 1
            self.cycle_start_ns = self.next_boundary_ns
            self.next_boundary_ns += _period_ns(self.params)
            wire = encode_cpo(self._current_cpo())
            for dst in self.participants:
                outgoing.append((dst, wire))
                covered.add(dst)
                self.cpos_sent += 1
        initial = encode_cpo(self._current_cpo())
        for dst in fresh:
            if dst not in covered:
                outgoing.append((dst, initial))
                self.cpos_sent += 1

        phase = (now_ns - self.cycle_start_ns) / _period_ns(self.params)
        frame = _render(self.mesh, self.force, self.kernel, phase, self.params)
        return outgoing, frame


class ClientState:
    """Locally driven lung simulation fed by control packets.

    Deformation depends only on the newest applied packet and the local
    clock: frames keep coming when the network goes quiet (dead reckoning),
    and the offset-corrected schedule keeps the phase aligned with the
    server's.
    """

    def __init__(self, mesh: LungMesh, server_addr,
                 sync_enabled: bool = True,
                 ping_interval_ns: int = PING_INTERVAL_NS):
        self.mesh = mesh
        self.server_addr = server_addr
        self.sync_enabled = sync_enabled
        self.ping_interval_ns = int(ping_interval_ns)
        self.estimator = DelayEstimator()
        self.active: ControlPacketObject | None = None
        self.pending: ControlPacketObject | None = None
        self.schedule: BreathingSchedule | None = None
        self.params: PVParams | None = None
        self.force: SHCoefficients | None = None
        self.kernel: ElasticityKernel | None = None
        self.last_ping_ns: int | None = None
        self.last_step_ns: int | None = None
        self.cpos_received = 0
        self.trace: list[tuple[int, float]] = []

    @property
    def current_sequence(self) -> int:
        return self.active.sequence if self.active is not None else 0

    def _offset_ns(self) -> float:
        if self.sync_enabled and self.estimator.initialized:
            return self.estimator.offset_ns
        return 0.0

    def _activate(self, cpo: ControlPacketObject) -> bool:
        n_f = int(cpo.f.size)
        band = math.isqrt(n_f) - 1 if n_f > 0 else -1
        if n_f == 0 or (band + 1) ** 2 != n_f or cpo.t.size < n_f:
            log.debug("client dropped unusable CPO seq %d (f=%d, t=%d)",
                      cpo.sequence, n_f, cpo.t.size)
            return False
        try:
            params = PVParams(frc=cpo.frc, tv=cpo.tv, pr=cpo.pr,
                              rate=cpo.rate, cp=cpo.cp)
            force = SHCoefficients(band, cpo.f)
            kernel = ElasticityKernel(cpo.t)
        except ValueError as exc:
            log.debug("client dropped unusable CPO seq %d: %s", cpo.sequence, exc)
            return False
        start_local = int(round(cpo.cycle_start_ns - self._offset_ns()))
        self.params, self.force, self.kernel = params, force, kernel
        self.schedule = BreathingSchedule(
            period_ns=_period_ns(params),
            server_cycle_start_ns=cpo.cycle_start_ns,
            local_cycle_start_ns=start_local)
        self.active = cpo
        return True

    def step(self, now_ns: int, inbox) -> tuple[list, Frame | None]:
        """Advance to now_ns; returns ((dst, payload) list, frame or None)."""
        if self.last_step_ns is not None and now_ns < self.last_step_ns:
            raise ClockRegressionError(
                f"clock went backwards: {now_ns} < {self.last_step_ns}")
        self.last_step_ns = now_ns
        outgoing: list = []
        for recv_ns, src, payload in inbox:
            try:
                msg = decode_message(payload)
            except DecodeError as exc:
                log.debug("client dropped undecodable packet from %s: %s", src, exc)
                continue
            if isinstance(msg, SyncMessage):
                if msg.kind != SyncKind.PONG:
                    continue
                try:
                    sample = four_timestamp_offset(msg.t0, msg.t1, msg.t2, recv_ns)
                except ClockSampleRejected as exc:
                    log.debug("client rejected sync sample: %s", exc)
                    continue
                self.estimator = update_delay_estimate(self.estimator, sample)
                continue
            self.cpos_received += 1
            if msg.sequence <= self.current_sequence:
                log.debug("client ignored stale CPO seq %d", msg.sequence)
                continue
            if msg.param_change:
                if self._activate(msg) and self.pending is not None \
                        and self.pending.sequence <= self.current_sequence:
                    self.pending = None
            elif self.pending is None or msg.sequence > self.pending.sequence:
                self.pending = msg

        if self.pending is not None:
            if self.pending.sequence <= self.current_sequence:
                self.pending = None
            else:
                start_local = int(round(self.pending.cycle_start_ns - self._offset_ns()))
                if self.active is None or now_ns >= start_local:
                    self._activate(self.pending)
                    self.pending = None

        if self.schedule is not None:
            self.schedule = self.schedule.advanced_to(now_ns)

        if self.last_ping_ns is None \
                or now_ns - self.last_ping_ns >= self.ping_interval_ns:
            ping = SyncMessage(SyncKind.PING, t0=now_ns)
            outgoing.append((self.server_addr, encode_sync(ping)))
            self.last_ping_ns = now_ns

        frame = None
        if self.active is not None:
            phase = self.schedule.phase(now_ns)
            frame = _render(self.mesh, self.force, self.kernel, phase, self.params)
            self.trace.append((now_ns, frame.normalized_volume))
        return outgoing, frame


def _render(mesh: LungMesh, force: SHCoefficients, kernel: ElasticityKernel,
            phase: float, params: PVParams) -> Frame:
    pressure = pressure_at_phase(phase, params)
    deformed = deform(mesh, force, kernel, pressure, params)
    vol = enclosed_volume(deformed)
    return Frame(pressure=pressure, volume_l=vol,
                 normalized_volume=normalized_volume(vol, params))


# -- simulated network ------------------------------------------------------

@dataclass(frozen=True)
class NetworkConfig:
    """Latency/jitter/loss model for the deterministic simulated network."""

    latency_mean_ns: int = 0
    jitter_ns: int = 0
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.latency_mean_ns < 0 or self.jitter_ns < 0:
            raise ValueError("latency and jitter must be non-negative")
        if not (0.0 <= self.drop_probability <= 1.0):
            raise ValueError("drop probability must lie in [0, 1]")


class SimulatedNetwork:
    """Seeded store-and-forward delivery with per-pair FIFO ordering.

    Every send consumes one drop draw and one jitter draw from the generator,
    in send order, so a schedule is fully determined by the seed and the
    sequence of sends.
    """

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self._pending: list = []
        self._last_arrival: dict = {}
        self._counter = 0

    def send(self, send_ns: int, src, dst, payload: bytes) -> int | None:
        """Queue a message; returns its arrival time, or None if dropped."""
        cfg = self.config
        u = self.rng.random()
        jitter = self.rng.uniform(-cfg.jitter_ns, cfg.jitter_ns)
        if u < cfg.drop_probability:
            return None
        delay = max(0, round(cfg.latency_mean_ns + jitter))
        arrival = send_ns + delay
        floor = self._last_arrival.get((src, dst))
        if floor is not None and arrival < floor:
            arrival = floor
        self._last_arrival[(src, dst)] = arrival
        self._counter += 1
        heapq.heappush(self._pending, (arrival, self._counter, src, dst, payload))
        return arrival

    def take_arrived(self, dst, until_ns: int) -> list:
        """Pop messages for dst with arrival <= until_ns, in arrival order."""
        out = []
        keep = []
        while self._pending and self._pending[0][0] <= until_ns:
            item = heapq.heappop(self._pending)
            if item[3] == dst:
                out.append((item[0], item[2], item[4]))
            else:
                keep.append(item)
        for item in keep:
            heapq.heappush(self._pending, item)
        return out


def simulated_delivery_schedule(config: NetworkConfig, sends) -> list:
    """Batch form: map (send_ns, src, dst, payload) sends to arrivals.

    Returns (arrival_ns, src, dst, payload) tuples sorted by arrival; dropped
    messages are omitted.  Byte-identical across runs for equal seeds.
    """
    net = SimulatedNetwork(config)
    arrivals = []
    for send_ns, src, dst, payload in sends:
        arrival = net.send(send_ns, src, dst, payload)
        if arrival is not None:
            arrivals.append((arrival, src, dst, payload))
    arrivals.sort(key=lambda item: item[0])
    return arrivals


# -- simulated session runner ----------------------------------------------

@dataclass
class ParticipantRecord:
    """Trace rows accumulated for one participant (true virtual time)."""

    participant_id: str
    times_s: list = field(default_factory=list)
    pressures: list = field(default_factory=list)
    volumes_l: list = field(default_factory=list)
    normalized: list = field(default_factory=list)


@dataclass
class SessionResult:
    records: dict[str, ParticipantRecord]
    cpos_received: dict[str, int]
    period_s: float
    duration_cycles: int


class SimulatedSession:
    """Single-threaded run of one server and N clients over a virtual clock.

    Each participant sees its own local clock (virtual time plus a fixed
    skew plus a positive base); trace rows are stamped with true virtual
    time, which is what a wall-clock observer of all screens would see.
    """

    def __init__(self, params: PVParams, force: SHCoefficients,
                 kernel: ElasticityKernel, mesh: LungMesh,
                 network: NetworkConfig, n_clients: int,
                 frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ,
                 sync_enabled: bool = True,
                 client_skews_ns: list[int] | None = None):
        if n_clients < 1:
            raise ValueError("need at least one client")
        skews = list(client_skews_ns or [0] * n_clients)
        if len(skews) != n_clients:
            raise ValueError("one clock skew per client required")
        self.tick_ns = round(1e9 / frame_rate_hz)
        self.network = SimulatedNetwork(network)
        self.server_id = "server"
        self.server = ServerState(params, force, kernel, mesh,
                                  epoch_ns=LOCAL_CLOCK_BASE_NS)
        self.clients: dict[str, ClientState] = {}
        self.skews: dict[str, int] = {self.server_id: 0}
        for i in range(n_clients):
            cid = f"client{i + 1:02d}"
            self.clients[cid] = ClientState(mesh, self.server_id,
                                            sync_enabled=sync_enabled)
            self.skews[cid] = int(skews[i])
        self.params = params

    def _local(self, pid: str, true_ns: int) -> int:
        return true_ns + LOCAL_CLOCK_BASE_NS + self.skews[pid]

    def run(self, duration_cycles: int) -> SessionResult:
        if duration_cycles < 1:
            raise ValueError("duration must be at least one cycle")
        period_ns = _period_ns(self.params)
        margin_ns = 4 * self.tick_ns + 2 * (self.network.config.latency_mean_ns
                                            + self.network.config.jitter_ns)
        end_ns = duration_cycles * period_ns + margin_ns
        records = {pid: ParticipantRecord(pid)
                   for pid in [self.server_id, *self.clients]}
        order = [(self.server_id, self.server)] + sorted(self.clients.items())
        true_ns = 0
        while true_ns <= end_ns:
            for pid, participant in order:
                local_now = self._local(pid, true_ns)
                inbox = [(arrival + LOCAL_CLOCK_BASE_NS + self.skews[pid], src, payload)
                         for arrival, src, payload
                         in self.network.take_arrived(pid, true_ns)]
                outgoing, frame = participant.step(local_now, inbox)
                for dst, payload in outgoing:
                    self.network.send(true_ns, pid, dst, payload)
                if frame is not None:
                    rec = records[pid]
                    rec.times_s.append(true_ns / 1e9)
                    rec.pressures.append(frame.pressure)
                    rec.volumes_l.append(frame.volume_l)
                    rec.normalized.append(frame.normalized_volume)
            true_ns += self.tick_ns
        return SessionResult(
            records=records,
            cpos_received={cid: c.cpos_received for cid, c in self.clients.items()},
            period_s=self.params.period_s,
            duration_cycles=duration_cycles)


# -- UDP transport -----------------------------------------------------------

class UdpTransport:
    """One datagram per encoded message; non-blocking receive."""

    def __init__(self, bind=("0.0.0.0", 0)):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(bind)
        self.sock.setblocking(False)

    @property
    def address(self):
        return self.sock.getsockname()

    def poll(self) -> list:
        """Drain pending datagrams as (recv_ns, src_addr, payload)."""
        out = []
        while True:
            ready, _, _ = select.select([self.sock], [], [], 0)
            if not ready:
                return out
            try:
                payload, src = self.sock.recvfrom(65536)
            except BlockingIOError:
                return out
            out.append((time.monotonic_ns(), src, payload))

    def send(self, dst, payload: bytes) -> None:
        self.sock.sendto(payload, dst)

    def close(self) -> None:
        self.sock.close()


def run_udp_participant(state, transport: UdpTransport, duration_s: float,
                        frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ,
                        record: ParticipantRecord | None = None,
                        epoch_ns: int | None = None):
    """Drive one server or client over UDP on the real monotonic clock.

    Trace timestamps are relative to epoch_ns so co-located participants
    share a time base.
    """
    tick_s = 1.0 / frame_rate_hz
    start_ns = time.monotonic_ns()
    base_ns = start_ns if epoch_ns is None else int(epoch_ns)
    deadline_ns = start_ns + round(duration_s * 1e9)
    while True:
        now_ns = time.monotonic_ns()
        if now_ns > deadline_ns:
            return record
        outgoing, frame = state.step(now_ns, transport.poll())
        for dst, payload in outgoing:
            transport.send(dst, payload)
        if frame is not None and record is not None:
            record.times_s.append((now_ns - base_ns) / 1e9)
            record.pressures.append(frame.pressure)
            record.volumes_l.append(frame.volume_l)
            record.normalized.append(frame.normalized_volume)
        time.sleep(max(0.0, tick_s - (time.monotonic_ns() - now_ns) / 1e9))
