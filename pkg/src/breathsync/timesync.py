"""Clock-offset estimation, cycle scheduling on remote clocks, drift metric.

A four-timestamp ping/pong exchange yields per-pair (offset, delay) samples;
an EWMA smooths them.  The estimated offset maps the server's cycle-start
times into each client's local clock so every participant breathes in phase.
The drift metric quantifies how well that works: per cycle, the mean absolute
difference between a participant's normalized volume and the reference's,
resampled at uniform checkpoints.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_EWMA_ALPHA = 0.125
DEFAULT_SAMPLES_PER_CYCLE = 100


class ClockSampleRejected(ValueError):
    """Timestamp quadruple implies negative delay or reordering."""


class TraceError(ValueError):
    """A volume trace is unusable: too short or non-monotonic."""


def four_timestamp_offset(t0: int, t1: int, t2: int, t3: int) -> tuple[float, float]:
    """Offset (remote minus local) and one-way delay from one exchange.

    t0/t3 are requester send/receive times on the local clock, t1/t2 the
    responder receive/send times on the remote clock, all nanoseconds.
    Exact for symmetric path delays; raises ClockSampleRejected when the
    timestamps imply reordering or a negative delay.
    """
    if t3 < t0:
        raise ClockSampleRejected(f"reply received before request sent ({t3} < {t0})")
    if t2 < t1:
        raise ClockSampleRejected(f"responder timestamps reordered ({t2} < {t1})")
    offset2 = (t1 - t0) + (t2 - t3)
    delay2 = (t3 - t0) - (t2 - t1)
    if delay2 < 0:
        raise ClockSampleRejected("computed delay is negative")
    return offset2 / 2.0, delay2 / 2.0


@dataclass(frozen=True)
class DelayEstimator:
    """EWMA-smoothed pairwise clock offset and one-way delay."""

    offset_ns: float = 0.0
    delay_ns: float = 0.0
    alpha: float = DEFAULT_EWMA_ALPHA
    sample_count: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def initialized(self) -> bool:
        return self.sample_count > 0


def update_delay_estimate(est: DelayEstimator,
                          sample: tuple[float, float]) -> DelayEstimator:
    """Fold one (offset_ns, delay_ns) sample into the estimate."""
    offset, delay = sample
    if est.sample_count == 0:
        return replace(est, offset_ns=float(offset), delay_ns=float(delay),
                       sample_count=1)
    a = est.alpha
    return replace(est,
                   offset_ns=(1.0 - a) * est.offset_ns + a * offset,
                   delay_ns=(1.0 - a) * est.delay_ns + a * delay,
                   sample_count=est.sample_count + 1)


@dataclass(frozen=True)
class BreathingSchedule:
    """Cycle timing mapped onto a participant's local clock."""

    period_ns: int
    server_cycle_start_ns: int
    local_cycle_start_ns: int

    def __post_init__(self):
        if self.period_ns <= 0:
            raise ValueError("period must be positive")

    def advanced_to(self, local_now_ns: int) -> "BreathingSchedule":
        """Dead-reckon: roll cycle starts forward by whole periods."""
        if local_now_ns < self.local_cycle_start_ns:
            return self
        k = (local_now_ns - self.local_cycle_start_ns) // self.period_ns
        return replace(self,
                       server_cycle_start_ns=self.server_cycle_start_ns + k * self.period_ns,
                       local_cycle_start_ns=self.local_cycle_start_ns + k * self.period_ns)

    def phase(self, local_now_ns: int) -> float:
        """Fraction of the current cycle elapsed, in [0, 1).

        Before the scheduled start the phase clamps to 0 (the lung holds at
        its cycle-start volume until the cycle begins).
        """
        if local_now_ns < self.local_cycle_start_ns:
            return 0.0
        return ((local_now_ns - self.local_cycle_start_ns)
                % self.period_ns) / self.period_ns


def local_cycle_start(server_cycle_start_ns: int, est: DelayEstimator) -> int:
    """Map a server-clock cycle start into the local clock."""
    if not est.initialized:
        raise ValueError("delay estimator has no samples yet")
    return int(round(server_cycle_start_ns - est.offset_ns))


# -- drift metric ----------------------------------------------------------

@dataclass(frozen=True)
class VolumeTrace:
    """Sampled (time, normalized volume) curve for one participant."""

    participant_id: str
    times_s: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = np.ascontiguousarray(np.asarray(self.times_s, dtype=float))
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if t.shape != v.shape or t.ndim != 1:
            raise TraceError("times and values must be equal-length vectors")
        if t.shape[0] < 2:
            raise TraceError("trace needs at least two samples")
        if np.any(np.diff(t) <= 0.0):
            raise TraceError("trace timestamps must be strictly increasing")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "times_s", t)
        object.__setattr__(self, "values", v)

    def sample(self, at_s: np.ndarray) -> np.ndarray:
        return np.interp(at_s, self.times_s, self.values)


@dataclass(frozen=True)
class DriftRow:
    participant_id: str
    cycle_index: int
    mean_drift_pct: float
    max_drift_pct: float
    samples: int


@dataclass(frozen=True)
class DriftReport:
    """Per-cycle and per-participant normalized-volume drift vs. the reference."""

    reference_id: str
    samples_per_cycle: int
    rows: tuple[DriftRow, ...]

    def participants(self) -> list[str]:
        seen = []
        for row in self.rows:
            if row.participant_id not in seen:
                seen.append(row.participant_id)
        return seen

    def cycles_measured(self, participant_id: str) -> int:
        return sum(1 for r in self.rows if r.participant_id == participant_id)

    def mean_drift_pct(self, participant_id: str) -> float:
        """Average drift per cycle: mean over cycles of the per-cycle means."""
        vals = [r.mean_drift_pct for r in self.rows
                if r.participant_id == participant_id]
        return float(np.mean(vals))

    def max_drift_pct(self, participant_id: str) -> float:
        vals = [r.max_drift_pct for r in self.rows
                if r.participant_id == participant_id]
        return float(np.max(vals))

    def summary(self) -> dict:
        return {
            "reference": self.reference_id,
            "samples_per_cycle": self.samples_per_cycle,
            "participants": {
                pid: {
                    "cycles": self.cycles_measured(pid),
                    "mean_drift_pct": self.mean_drift_pct(pid),
                    "max_drift_pct": self.max_drift_pct(pid),
                }
                for pid in self.participants()
            },
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["participant_id", "cycle_index",
                             "mean_drift_pct", "max_drift_pct", "samples"])
            for r in self.rows:
                writer.writerow([r.participant_id, r.cycle_index,
                                 f"{r.mean_drift_pct:.12g}",
                                 f"{r.max_drift_pct:.12g}", r.samples])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def drift_per_cycle(reference: VolumeTrace, others, period_s: float,
                    samples_per_cycle: int = DEFAULT_SAMPLES_PER_CYCLE,
                    cycle_start_s: float | None = None) -> DriftReport:
    """Per-cycle drift of each trace against the reference.

    All traces are resampled by linear interpolation at samples_per_cycle
    uniform checkpoints per cycle; drift for a cycle is the mean absolute
    normalized-volume difference at those checkpoints, as a percentage.
    Cycles are counted over the window covered by every trace.
    """
    if period_s <= 0.0:
        raise ValueError("period must be positive")
    if samples_per_cycle < 1:
        raise ValueError("need at least one checkpoint per cycle")
    base = reference.times_s[0] if cycle_start_s is None else float(cycle_start_s)
    start = max([reference.times_s[0]] + [o.times_s[0] for o in others])
    end = min([reference.times_s[-1]] + [o.times_s[-1] for o in others])
    first_cycle = math.ceil((start - base) / period_s - 1e-9)
    n_cycles = int(math.floor((end - base) / period_s + 1e-9)) - first_cycle
    if n_cycles < 1:
        raise TraceError(
            f"common trace window [{start:.3f}, {end:.3f}] s covers no full cycle")
    offsets = np.arange(samples_per_cycle) / samples_per_cycle * period_s
    rows = []
    for other in others:
        for k in range(n_cycles):
            cycle_start = base + (first_cycle + k) * period_s
            checkpoints = cycle_start + offsets
            diff = np.abs(other.sample(checkpoints) - reference.sample(checkpoints))
            rows.append(DriftRow(
                participant_id=other.participant_id,
                cycle_index=first_cycle + k,
                mean_drift_pct=100.0 * float(np.mean(diff)),
                max_drift_pct=100.0 * float(np.max(diff)),
                samples=samples_per_cycle))
    return DriftReport(reference_id=reference.participant_id,
                       samples_per_cycle=samples_per_cycle,
                       rows=tuple(rows))
