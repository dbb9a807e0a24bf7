"""Spherical harmonics on scattered directions: analyze, synthesize, check.

Fields on a star-shaped surface live on the sphere of directions, so every
force and displacement in this package is a short vector of real SH
coefficients.  This script walks the basic machinery.
"""

import numpy as np

from breathsync import (
    Direction,
    SHCoefficients,
    analyze,
    eval_real_sh,
    power_spectrum,
    synthesize,
)
from breathsync.harmonics import fibonacci_directions, synthesize_arrays, analyze_arrays

# -- single basis functions -------------------------------------------------

d = Direction(theta=1.0, phi=0.7)
print("Y(0,0) is constant everywhere:", eval_real_sh(0, 0, d))
print("Y(1,0) at the pole:", eval_real_sh(1, 0, Direction(0.0, 0.0)))
print("Y(4,3) at (1.0, 0.7):", eval_real_sh(4, 3, d))

# -- build a band-limited field and recover its coefficients -----------------

L = 6
rng = np.random.default_rng(1)
truth = SHCoefficients(L, rng.uniform(-1.0, 1.0, (L + 1) ** 2))

# sample it at a few hundred quasi-uniform directions (mesh nodes, in practice)
thetas, phis = fibonacci_directions(300)
values = synthesize_arrays(truth, thetas, phis)

fitted = analyze_arrays(thetas, phis, values, L)
err = np.max(np.abs(fitted.coeffs - truth.coeffs))
print(f"\nround trip at band limit {L}: max coefficient error {err:.2e}")

# -- the per-degree power spectrum -------------------------------------------

spectrum = power_spectrum(truth)
for l, p in enumerate(spectrum):
    print(f"  degree {l}: power {p:8.4f}")
total = float(np.sum(np.square(truth.coeffs)))
print(f"spectrum total {np.sum(spectrum):.6f} == coefficient norm^2 {total:.6f}")

# -- analyze also works with explicit Direction samples ----------------------

samples = [(Direction(t, p), v) for t, p, v in zip(thetas[:60], phis[:60], values[:60])]
coarse = analyze(samples, 2)
print("\nlow-order fit from 60 samples, c(0,0):", coarse.get(0, 0))
print("synthesized back at one direction:", synthesize(coarse, Direction(1.2, 0.3)))
