"""Pressure-volume breathing driver and SH kernel deformation.

The breathing cycle maps time -> trans-pulmonary pressure -> lung volume.
Volume follows a Bernstein-basis curve between FRC and FRC+TV controlled by
the constants CP_0..CP_N.  Deformation multiplies the gravity-derived force
coefficients by a diagonal elasticity kernel in the SH domain, displaces node
radii, then rescales uniformly so the enclosed volume lands exactly on the
pressure-volume target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .harmonics import SHCoefficients, analyze_arrays
from .mesh import GeometryError, LungMesh, M3_TO_LITERS, signed_volume_m3


class DeformationError(ValueError):
    """Displacement drove a node radius non-positive: kernel too strong."""


@dataclass(frozen=True)
class PVParams:
    """Breathing parameters: volumes in liters, pressure in cmH2O, rate in bpm.

    cp holds the control constants CP_0..CP_N of the pressure-volume curve.
    With CP_0 = 0 and CP_N = 1 the curve runs exactly from FRC at zero
    pressure to FRC+TV at peak pressure.
    """

    frc: float
    tv: float
    pr: float
    rate: float
    cp: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("frc", "tv", "pr", "rate"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0.0:
                raise ValueError(f"{name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)
        cp = np.ascontiguousarray(np.asarray(self.cp, dtype=float))
        if cp.ndim != 1 or cp.shape[0] == 0:
            raise ValueError("cp must be a non-empty vector")
        if not np.all(np.isfinite(cp)):
            raise ValueError("cp entries must be finite")
        cp.flags.writeable = False
        object.__setattr__(self, "cp", cp)

    @property
    def period_s(self) -> float:
        return 60.0 / self.rate


@dataclass(frozen=True)
class ElasticityKernel:
    """Diagonal SH transfer operator: one gain per flattened (l, m) index."""

    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1 or c.shape[0] == 0:
            raise ValueError("kernel must be a non-empty vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("kernel entries must be finite")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    def __len__(self) -> int:
        return self.coeffs.shape[0]


def default_elasticity_kernel(band_limit: int, t0: float = 0.05) -> ElasticityKernel:
    """Degree-decaying synthetic kernel: gain t0 / (1 + l)^2 per (l, m)."""
    gains = np.empty((band_limit + 1) ** 2)
    for l in range(band_limit + 1):
        gains[l * l:(l + 1) * (l + 1)] = t0 / (1.0 + l) ** 2
    return ElasticityKernel(gains)


# -- pressure-volume driver ----------------------------------------------

def _bernstein(u: float, n: int) -> np.ndarray:
    return np.array([math.comb(n, k) * u ** k * (1.0 - u) ** (n - k)
                     for k in range(n + 1)])


def pv_volume(pressure: float, params: PVParams) -> float:
    """Lung volume (liters) on the control-constant PV curve."""
    if not (0.0 <= pressure <= params.pr):
        raise ValueError(
            f"pressure must lie in [0, {params.pr}], got {pressure}")
    u = pressure / params.pr
    n = params.cp.shape[0] - 1
    return params.frc + params.tv * float(params.cp @ _bernstein(u, n))


def pressure_at_phase(phase: float, params: PVParams) -> float:
    """Raised-cosine pressure at a cycle fraction in [0, 1)."""
    return params.pr * (1.0 - math.cos(2.0 * math.pi * phase)) / 2.0


def pressure_waveform(t: float, params: PVParams) -> float:
    """Raised-cosine pressure over the cycle: 0 at start, PR at mid-cycle."""
    if t < 0.0:
        raise ValueError(f"time must be non-negative, got {t}")
    period = params.period_s
    return pressure_at_phase((t % period) / period, params)


def normalized_volume(volume: float, params: PVParams) -> float:
    """Volume mapped so FRC -> 0 and FRC+TV -> 1."""
    return (volume - params.frc) / params.tv


# -- applied force --------------------------------------------------------

def gravity_force_field(mesh: LungMesh, gravity_dir) -> np.ndarray:
    """Per-node scalar force from distance to the resting surface.

    The node most advanced along gravity (the resting contact) gets 0, the
    farthest node gets 1; everything else is linear in the projection onto
    the gravity axis.
    """
    g = np.asarray(gravity_dir, dtype=float)
    if abs(np.linalg.norm(g) - 1.0) > 1e-9:
        raise ValueError("gravity direction must have unit norm")
    proj = mesh.vertices() @ g
    spread = proj.max() - proj.min()
    if spread <= 1e-12 * max(1.0, float(np.abs(proj).max())):
        raise GeometryError("mesh is degenerate perpendicular to gravity")
    return (proj.max() - proj) / spread


def build_force_coeffs(mesh: LungMesh, gravity_dir, band_limit: int) -> SHCoefficients:
    """SH coefficients of the gravity force sampled at the node directions."""
    values = gravity_force_field(mesh, gravity_dir)
    return analyze_arrays(mesh.thetas, mesh.phis, values, band_limit)


def interpolate_force_coeffs(table, query) -> SHCoefficients:
    """Blend precomputed per-orientation force coefficients for a new orientation.

    table is a sequence of (unit orientation vector, SHCoefficients).  The
    result is the inverse-geodesic-distance weighted average over the 3
    nearest orientations (fewer for smaller tables); an exact orientation
    match (within 1e-9 rad) returns that entry unchanged.
    """
    if not table:
        raise ValueError("orientation table is empty")
    lengths = {len(c) for _, c in table}
    if len(lengths) != 1:
        raise ValueError("coefficient vectors in the table differ in length")
    band = table[0][1].band_limit
    q = np.asarray(query, dtype=float)
    norm = float(np.linalg.norm(q))
    if norm == 0.0 or not math.isfinite(norm):
        raise ValueError("query orientation must be a non-zero vector")
    q = q / norm
    dists = np.empty(len(table))
    for i, (orient, _) in enumerate(table):
        o = np.asarray(orient, dtype=float)
        if abs(float(np.linalg.norm(o)) - 1.0) > 1e-9:
            raise ValueError("table orientations must have unit norm")
        dists[i] = math.acos(max(-1.0, min(1.0, float(o @ q))))
    nearest = int(np.argmin(dists))
    if dists[nearest] <= 1e-9:
        return table[nearest][1]
    k = min(3, len(table))
    order = np.argsort(dists)[:k]
    weights = 1.0 / dists[order]
    weights /= weights.sum()
    blended = np.zeros(len(table[0][1]))
    for w, idx in zip(weights, order):
        blended += w * table[int(idx)][1].coeffs
    return SHCoefficients(band, blended)


# -- deformation -----------------------------------------------------------

def displacement_coeffs(force: SHCoefficients, kernel: ElasticityKernel,
                        pressure: float, params: PVParams) -> SHCoefficients:
    """Direct product of force and elasticity coefficients, scaled by pressure.

    The kernel may be longer than the force vector; surplus entries are
    reserved and ignored.
    """
    n = len(force)
    if len(kernel) < n:
        raise ValueError(
            f"kernel has {len(kernel)} entries, needs at least {n}")
    scale = pressure / params.pr
    return SHCoefficients(force.band_limit,
                          scale * force.coeffs * kernel.coeffs[:n])


def deform(mesh: LungMesh, force: SHCoefficients, kernel: ElasticityKernel,
           pressure: float, params: PVParams) -> LungMesh:
    """Deform the mesh for one frame of the breathing cycle.

    Radial displacement synthesized from the force-times-kernel coefficients,
    then a uniform radial rescale about the centroid pins the enclosed volume
    to the pressure-volume target.
    """
    u = displacement_coeffs(force, kernel, pressure, params)
    disp = mesh.sh_matrix(force.band_limit) @ u.coeffs
    radii = mesh.radii + disp
    if np.any(radii <= 0.0):
        raise DeformationError(
            "displacement drove a node radius non-positive; "
            "reduce the kernel gain")
    target_m3 = pv_volume(pressure, params) / M3_TO_LITERS
    verts = mesh.centroid + radii[:, None] * mesh.unit_directions()
    current_m3 = signed_volume_m3(verts, mesh.triangles)
    if current_m3 <= 0.0:
        raise GeometryError("displaced surface lost positive orientation")
    scale = (target_m3 / current_m3) ** (1.0 / 3.0)
    return mesh.with_radii(scale * radii)
