"""The pressure-volume breathing driver.

Volume follows a Bernstein curve between FRC and FRC+TV as trans-pulmonary
pressure rises and falls over the cycle.  The control constants CP_0..CP_N
shape the curve; changing them models different breathing conditions.
"""

import numpy as np

from breathsync import PVParams, normalized_volume, pressure_waveform, pv_volume

# a healthy adult at rest: 2.4 L residual capacity, 0.5 L tidal volume,
# peak pressure 20 cmH2O, 12 breaths per minute
params = PVParams(frc=2.4, tv=0.5, pr=20.0, rate=12.0,
                  cp=np.array([0.0, 0.25, 0.5, 0.75, 1.0]))
print(f"cycle period: {params.period_s:.1f} s")

# -- the PV curve -------------------------------------------------------------

print("\npressure (cmH2O) -> volume (L):")
for pressure in np.linspace(0.0, params.pr, 6):
    print(f"  {pressure:5.1f} -> {pv_volume(float(pressure), params):.4f}")

# with linearly spaced control constants the curve is exactly linear;
# bunching them near 1 makes the lung stiffer at low pressures
stiff = PVParams(frc=2.4, tv=0.5, pr=20.0, rate=12.0,
                 cp=np.array([0.0, 0.05, 0.15, 0.4, 1.0]))
print("\nsame pressures on a stiffer curve:")
for pressure in np.linspace(0.0, params.pr, 6):
    print(f"  {pressure:5.1f} -> {pv_volume(float(pressure), stiff):.4f}")

# -- one full breathing cycle -------------------------------------------------

print("\ntime (s) | pressure | volume | normalized")
for t in np.linspace(0.0, params.period_s, 11):
    p = pressure_waveform(float(t), params)
    v = pv_volume(p, params)
    print(f"  {t:5.2f}  |  {p:6.2f}  | {v:.4f} |  {normalized_volume(v, params):.4f}")

# the normalized volume runs 0 -> 1 -> 0 over the cycle: this is the shared
# quantity every participant of a distributed session must agree on
