"""Clock-offset estimation and remote cycle scheduling.

Participants' clocks disagree; a four-timestamp ping/pong exchange measures
each pair's offset and delay, an EWMA smooths the samples, and the smoothed
offset maps the server's cycle starts into local time.
"""

import numpy as np

from breathsync import (
    BreathingSchedule,
    DelayEstimator,
    four_timestamp_offset,
    local_cycle_start,
    update_delay_estimate,
)

MS = 1_000_000

# ground truth this demo tries to recover: the server clock runs 35 ms ahead
TRUE_OFFSET = 35 * MS
BASE_DELAY = 2 * MS

rng = np.random.default_rng(3)
est = DelayEstimator()  # alpha = 0.125, the classic smoothed-RTT gain

print("sample | measured offset (ms) | smoothed offset (ms) | smoothed delay (ms)")
t0 = 0
for k in range(40):
    d1 = BASE_DELAY + int(rng.uniform(0, 800_000))   # outbound jitter
    d2 = BASE_DELAY + int(rng.uniform(0, 800_000))   # return jitter
    t1 = t0 + d1 + TRUE_OFFSET          # server receive (server clock)
    t2 = t1 + 50_000                    # server send after a 50 us hold
    t3 = t0 + d1 + 50_000 + d2          # local receive
    sample = four_timestamp_offset(t0, t1, t2, t3)
    est = update_delay_estimate(est, sample)
    if k % 8 == 0 or k == 39:
        print(f"  {k:4d} | {sample[0] / MS:20.3f} | {est.offset_ns / MS:20.3f} "
              f"| {est.delay_ns / MS:19.3f}")
    t0 += 250 * MS  # one ping every 250 ms

print(f"\ntrue offset {TRUE_OFFSET / MS:.3f} ms, "
      f"estimate {est.offset_ns / MS:.3f} ms "
      f"(error {abs(est.offset_ns - TRUE_OFFSET) / MS:.3f} ms)")

# -- schedule a cycle announced in server time ---------------------------------

server_cycle_start = 60_000 * MS  # the packet says: cycle starts at this server time
start_local = local_cycle_start(server_cycle_start, est)
print(f"\nserver says the cycle starts at its t={server_cycle_start / MS:.0f} ms;"
      f" locally that is t={start_local / MS:.3f} ms")

sched = BreathingSchedule(period_ns=5_000 * MS,
                          server_cycle_start_ns=server_cycle_start,
                          local_cycle_start_ns=start_local)
for when in (start_local, start_local + 1_250 * MS, start_local + 9_990 * MS):
    print(f"  local t={when / MS:9.1f} ms -> phase {sched.advanced_to(when).phase(when):.4f}")
# after the last line the schedule has dead-reckoned one full cycle forward:
# no new packet was needed to keep breathing
