"""Deforming a lung surface through one breathing cycle.

The applied force on each node comes from its height above the resting
surface (gravity); elasticities multiply the force in the SH domain; radial
displacement plus a volume-pinning rescale give the deformed surface.
"""

import numpy as np

from breathsync import (
    PVParams,
    build_force_coeffs,
    default_elasticity_kernel,
    deform,
    enclosed_volume,
    gravity_force_field,
    interpolate_force_coeffs,
    make_test_lung,
    pressure_waveform,
    pv_volume,
    save_off,
)
from breathsync.mesh import MeshShape

# a two-lobed ellipsoidal stand-in for a lung surface (meters)
mesh = make_test_lung(3, MeshShape(axis_scales=(0.9, 1.0, 1.3),
                                   lobe_amplitude=0.25))
print(f"mesh: {mesh.node_count} nodes, {mesh.triangle_count} triangles, "
      f"{enclosed_volume(mesh):.1f} L rest volume")

# -- gravity-based applied force ----------------------------------------------

gravity = np.array([0.0, 0.0, -1.0])  # supine, gravity toward -z
force_per_node = gravity_force_field(mesh, gravity)
print(f"force field range: {force_per_node.min():.3f} (resting surface) "
      f"to {force_per_node.max():.3f} (apex)")

L = 6
force = build_force_coeffs(mesh, gravity, L)
kernel = default_elasticity_kernel(L, t0=0.03)

# -- drive it through a cycle --------------------------------------------------

params = PVParams(frc=2.4, tv=0.5, pr=20.0, rate=12.0,
                  cp=np.array([0.0, 0.25, 0.5, 0.75, 1.0]))
print("\ntime (s) | pressure | target volume | deformed volume")
for t in np.linspace(0.0, params.period_s, 9):
    pressure = pressure_waveform(float(t), params)
    deformed = deform(mesh, force, kernel, pressure, params)
    print(f"  {t:5.2f}  |  {pressure:6.2f}  |    {pv_volume(pressure, params):.4f}    "
          f"|    {enclosed_volume(deformed):.4f}")

# the deformed volume lands on the PV target every frame: clients that share
# the same packet render the same breath

# -- orientation changes --------------------------------------------------------

# precompute force coefficients for a few patient orientations, then blend
orientations = [np.array([0.0, 0.0, -1.0]),   # supine
                np.array([0.0, 0.0, 1.0]),    # prone (flipped board)
                np.array([0.0, -1.0, 0.0]),   # left lateral
                np.array([0.0, 1.0, 0.0])]    # right lateral
table = [(o, build_force_coeffs(mesh, o, L)) for o in orientations]
tilted = np.array([0.0, -0.3, -0.95])
tilted /= np.linalg.norm(tilted)
blended = interpolate_force_coeffs(table, tilted)
print(f"\nblended force for a tilted patient: c(0,0) = {blended.get(0, 0):.4f}")

# -- export for external viewers -------------------------------------------------

save_off(deform(mesh, force, kernel, params.pr, params), "/tmp/lung_peak.off")
print("wrote peak-inflation surface to /tmp/lung_peak.off")
