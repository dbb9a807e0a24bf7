"""Real spherical-harmonic basis: evaluation, scattered-sample analysis, synthesis.

Convention: real orthonormal harmonics without the Condon-Shortley phase.
For m > 0 the basis function is sqrt(2) * N_l^m(cos theta) * cos(m phi),
for m < 0 it is sqrt(2) * N_l^|m|(cos theta) * sin(|m| phi), where N_l^m is
the orthonormalized associated Legendre function.  Coefficient vectors are
flattened with index = l*l + l + m, so a band limit L gives (L+1)**2 entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_BAND_LIMIT = 32


class UnderdeterminedError(ValueError):
    """Fewer samples than basis functions: the fit has no unique solution."""


class ConditioningError(ValueError):
    """The regularized normal system could not be solved to a finite result."""


@dataclass(frozen=True)
class Direction:
    """A point on the unit sphere: colatitude theta in [0, pi], azimuth phi.

    phi is normalized into [0, 2*pi) at construction.
    """

    theta: float
    phi: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= math.pi):
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")
        if not math.isfinite(self.phi):
            raise ValueError(f"phi must be finite, got {self.phi}")
        object.__setattr__(self, "phi", float(self.phi) % (2.0 * math.pi))
        object.__setattr__(self, "theta", float(self.theta))

    @classmethod
    def from_vector(cls, v) -> "Direction":
        v = np.asarray(v, dtype=float)
        r = float(np.linalg.norm(v))
        if r == 0.0:
            raise ValueError("cannot derive a direction from the zero vector")
        theta = math.acos(max(-1.0, min(1.0, v[2] / r)))
        phi = math.atan2(v[1], v[0])
        return cls(theta, phi)

    def to_vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi),
                         st * math.sin(self.phi),
                         math.cos(self.theta)])


@dataclass(frozen=True)
class SHCoefficients:
    """Band-limited real SH coefficient vector, flattened as l*l + l + m."""

    band_limit: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.band_limit < 0:
            raise ValueError("band limit must be non-negative")
        c = np.ascontiguousarray(np.asarray(self.coeffs, dtype=float))
        n = (self.band_limit + 1) ** 2
        if c.shape != (n,):
            raise ValueError(
                f"expected {n} coefficients for band limit {self.band_limit}, "
                f"got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must all be finite")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, band_limit: int) -> "SHCoefficients":
        return cls(band_limit, np.zeros((band_limit + 1) ** 2))

    @staticmethod
    def index(l: int, m: int) -> int:
        """Flattened position of the (l, m) coefficient."""
        if abs(m) > l:
            raise ValueError(f"|m| must not exceed l, got l={l}, m={m}")
        return l * l + l + m

    def get(self, l: int, m: int) -> float:
        return float(self.coeffs[self.index(l, m)])

    def with_term(self, l: int, m: int, value: float) -> "SHCoefficients":
        c = self.coeffs.copy()
        c[self.index(l, m)] = value
        return SHCoefficients(self.band_limit, c)

    def __len__(self) -> int:
        return self.coeffs.shape[0]


def _check_degree_order(l: int, m: int) -> None:
    if not (0 <= l <= MAX_BAND_LIMIT):
        raise ValueError(f"degree must lie in 0..{MAX_BAND_LIMIT}, got {l}")
    if abs(m) > l:
        raise ValueError(f"order |m| must not exceed degree, got l={l}, m={m}")


def _normalized_legendre(L: int, x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Orthonormalized associated Legendre N_l^m for all l, m <= L.

    x = cos(theta), s = sin(theta), both shape (n,).  Returns (L+1, L+1, n).
    Stable upward recurrence; no Condon-Shortley phase.
    """
    n = x.shape[0]
    P = np.zeros((L + 1, L + 1, n))
    P[0, 0] = math.sqrt(1.0 / (4.0 * math.pi))
    for m in range(1, L + 1):
        P[m, m] = math.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * P[m - 1, m - 1]
    for m in range(0, L):
        P[m + 1, m] = math.sqrt(2.0 * m + 3.0) * x * P[m, m]
    for m in range(0, L + 1):
        for l in range(m + 2, L + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((2.0 * l + 1.0) * (l + m - 1.0) * (l - m - 1.0))
                          / ((l - m) * (l + m) * (2.0 * l - 3.0)))
            P[l, m] = a * x * P[l - 1, m] - b * P[l - 2, m]
    return P


def design_matrix(thetas, phis, band_limit: int) -> np.ndarray:
    """Evaluate every basis function at every direction.

    Returns shape (n_dirs, (band_limit+1)**2), column order l*l + l + m.
    This is the workhorse shared by analyze, synthesize and the mesh
    deformation path.
    """
    if not (0 <= band_limit <= MAX_BAND_LIMIT):
        raise ValueError(f"band limit must lie in 0..{MAX_BAND_LIMIT}")
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    if thetas.shape != phis.shape:
        raise ValueError("thetas and phis must have equal shapes")
    L = band_limit
    x = np.cos(thetas)
    s = np.sin(thetas)
    P = _normalized_legendre(L, x, s)
    Y = np.empty((thetas.shape[0], (L + 1) ** 2))
    sq2 = math.sqrt(2.0)
    for l in range(L + 1):
        Y[:, l * l + l] = P[l, 0]
        for m in range(1, l + 1):
            mphi = m * phis
            Y[:, l * l + l + m] = sq2 * P[l, m] * np.cos(mphi)
            Y[:, l * l + l - m] = sq2 * P[l, m] * np.sin(mphi)
    return Y


def eval_real_sh(l: int, m: int, direction: Direction) -> float:
    """Single real orthonormal harmonic Y_{l,m} at one direction."""
    _check_degree_order(l, m)
    Y = design_matrix([direction.theta], [direction.phi], l)
    return float(Y[0, l * l + l + m])


def analyze(samples, band_limit: int) -> SHCoefficients:
    """Fit band-limited SH coefficients to scattered samples.

    samples is a sequence of (Direction, value) pairs; at least
    (band_limit+1)**2 of them are required.  The fit is a Tikhonov-regularized
    normal-equation least squares (lambda = 1e-9 * trace / n_basis) followed
    by one defect-correction step, which removes the regularization bias for
    well-conditioned sampling while keeping near-singular modes damped.
    """
    dirs, values = zip(*samples) if samples else ((), ())
    thetas = np.array([d.theta for d in dirs])
    phis = np.array([d.phi for d in dirs])
    return analyze_arrays(thetas, phis, np.asarray(values, dtype=float), band_limit)


def analyze_arrays(thetas, phis, values, band_limit: int) -> SHCoefficients:
    """Array-native variant of analyze (same fit, no Direction wrapping)."""
    thetas = np.asarray(thetas, dtype=float)
    values = np.asarray(values, dtype=float)
    n_basis = (band_limit + 1) ** 2
    if thetas.shape[0] < n_basis:
        raise UnderdeterminedError(
            f"need at least {n_basis} samples for band limit {band_limit}, "
            f"got {thetas.shape[0]}")
    Y = design_matrix(thetas, phis, band_limit)
    M = Y.T @ Y
    lam = 1e-9 * np.trace(M) / n_basis
    A = M + lam * np.eye(n_basis)
    rhs = Y.T @ values
    try:
        c = np.linalg.solve(A, rhs)
        c += np.linalg.solve(A, rhs - M @ c)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"normal system is singular: {exc}") from exc
    if not np.all(np.isfinite(c)):
        raise ConditioningError("normal system produced non-finite coefficients")
    return SHCoefficients(band_limit, c)


def synthesize(coeffs: SHCoefficients, direction: Direction) -> float:
    """Sum of coeffs[l,m] * Y_{l,m} at one direction."""
    Y = design_matrix([direction.theta], [direction.phi], coeffs.band_limit)
    return float(Y[0] @ coeffs.coeffs)


def synthesize_arrays(coeffs: SHCoefficients, thetas, phis) -> np.ndarray:
    """Vectorized synthesis over arrays of directions."""
    return design_matrix(thetas, phis, coeffs.band_limit) @ coeffs.coeffs


def power_spectrum(coeffs: SHCoefficients) -> np.ndarray:
    """Per-degree power: entry l is the sum of squared (l, m) coefficients."""
    out = np.empty(coeffs.band_limit + 1)
    for l in range(coeffs.band_limit + 1):
        block = coeffs.coeffs[l * l:(l + 1) * (l + 1)]
        out[l] = float(block @ block)
    return out


def fibonacci_directions(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n quasi-uniform directions on the sphere (golden-angle spiral)."""
    if n < 1:
        raise ValueError("need at least one direction")
    i = np.arange(n)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    z = 1.0 - (2.0 * i + 1.0) / n
    thetas = np.arccos(np.clip(z, -1.0, 1.0))
    phis = np.mod(golden * i, 2.0 * math.pi)
    return thetas, phis
