"""Closed triangulated lung surfaces with polar node coordinates.

A LungMesh stores each node as (radius, direction) about the surface
centroid.  Construction validates that the surface is a closed, consistently
outward-oriented 2-manifold and star-shaped about the centroid, which is
exactly the condition that makes radial displacement well-defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .harmonics import design_matrix

M3_TO_LITERS = 1000.0


class GeometryError(ValueError):
    """The surface violates closedness, orientation or star-shapedness."""


@dataclass(frozen=True)
class MeshShape:
    """Synthetic lung shape: per-axis scales plus a two-lobe radial modulation."""

    axis_scales: tuple[float, float, float] = (1.0, 1.0, 1.0)
    lobe_amplitude: float = 0.0

    def __post_init__(self):
        if any(s <= 0.0 for s in self.axis_scales):
            raise ValueError("axis scales must be positive")


@dataclass(frozen=True)
class LungMesh:
    """Star-shaped closed surface; nodes in polar form about the centroid."""

    centroid: np.ndarray = field(repr=False)
    radii: np.ndarray = field(repr=False)
    thetas: np.ndarray = field(repr=False)
    phis: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("centroid", "radii", "thetas", "phis"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        tri = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        tri.flags.writeable = False
        object.__setattr__(self, "triangles", tri)
        object.__setattr__(self, "_matrix_cache", {})
        _validate_topology(self.node_count, self.triangles)
        if np.any(self.radii <= 0.0):
            raise GeometryError("all node radii must be positive")
        _validate_star_shape(self.vertices(), self.centroid, self.triangles)

    # -- construction --------------------------------------------------

    @classmethod
    def from_vertices(cls, vertices, triangles) -> "LungMesh":
        """Build from world-space vertices; centroid is the vertex mean."""
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise GeometryError("vertices must have shape (n, 3)")
        centroid = vertices.mean(axis=0)
        rel = vertices - centroid
        radii = np.linalg.norm(rel, axis=1)
        if np.any(radii == 0.0):
            raise GeometryError("a vertex coincides with the centroid")
        thetas = np.arccos(np.clip(rel[:, 2] / radii, -1.0, 1.0))
        phis = np.mod(np.arctan2(rel[:, 1], rel[:, 0]), 2.0 * math.pi)
        return cls(centroid, radii, thetas, phis, np.asarray(triangles))

    def with_radii(self, radii) -> "LungMesh":
        """Same topology and directions, new radii (revalidates geometry)."""
        return LungMesh(self.centroid, np.asarray(radii, dtype=float),
                        self.thetas, self.phis, self.triangles)

    # -- geometry ------------------------------------------------------

    @property
    def node_count(self) -> int:
        return self.radii.shape[0]

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]

    def unit_directions(self) -> np.ndarray:
        st = np.sin(self.thetas)
        return np.stack([st * np.cos(self.phis),
                         st * np.sin(self.phis),
                         np.cos(self.thetas)], axis=1)

    def vertices(self) -> np.ndarray:
        return self.centroid + self.radii[:, None] * self.unit_directions()

    def sh_matrix(self, band_limit: int) -> np.ndarray:
        """Basis values at every node direction, cached per band limit."""
        cache = object.__getattribute__(self, "_matrix_cache")
        if band_limit not in cache:
            cache[band_limit] = design_matrix(self.thetas, self.phis, band_limit)
        return cache[band_limit]


def _validate_topology(n_nodes: int, triangles: np.ndarray) -> None:
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise GeometryError("triangles must have shape (m, 3)")
    if triangles.shape[0] == 0:
        raise GeometryError("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= n_nodes:
        raise GeometryError("triangle index out of range")
    # closed oriented 2-manifold: every directed edge appears exactly once
    # and its reverse appears exactly once
    a, b, c = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    directed = np.concatenate([
        np.stack([a, b], axis=1),
        np.stack([b, c], axis=1),
        np.stack([c, a], axis=1),
    ])
    keys = directed[:, 0] * n_nodes + directed[:, 1]
    if np.unique(keys).shape[0] != keys.shape[0]:
        raise GeometryError("duplicated directed edge: inconsistent orientation")
    reverse = directed[:, 1] * n_nodes + directed[:, 0]
    if not np.array_equal(np.sort(keys), np.sort(reverse)):
        raise GeometryError("surface is not closed (unmatched edge)")


def _validate_star_shape(vertices: np.ndarray, center: np.ndarray,
                         triangles: np.ndarray) -> None:
    dets = _face_determinants(vertices, center, triangles)
    if np.any(dets <= 0.0):
        raise GeometryError(
            "surface is not star-shaped about the centroid with outward "
            "orientation (non-positive face determinant)")


def _face_determinants(vertices, center, triangles) -> np.ndarray:
    rel = vertices - center
    v0 = rel[triangles[:, 0]]
    v1 = rel[triangles[:, 1]]
    v2 = rel[triangles[:, 2]]
    return np.einsum("ij,ij->i", v0, np.cross(v1, v2))


def signed_volume_m3(vertices, triangles) -> float:
    """Signed enclosed volume of a closed triangle surface, in cubic meters.

    Positive for outward orientation.  Divergence-theorem sum of signed
    tetrahedra against the vertex mean (the reference point cancels for a
    closed surface; the mean just keeps the summands small).
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    center = vertices.mean(axis=0)
    return float(np.sum(_face_determinants(vertices, center, triangles)) / 6.0)


def enclosed_volume(mesh: LungMesh) -> float:
    """Enclosed volume in liters (meshes are in meters)."""
    return signed_volume_m3(mesh.vertices(), mesh.triangles) * M3_TO_LITERS


# -- synthetic test lung ------------------------------------------------

_ICO_T = (1.0 + math.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array([
    (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
    (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
    (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
], dtype=float)

_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def icosphere(subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere: (vertices, triangles) after midpoint subdivision."""
    if not (0 <= subdivisions <= 6):
        raise ValueError("subdivisions must lie in 0..6")
    verts = list(_ICO_VERTS / np.linalg.norm(_ICO_VERTS[0]))
    faces = _ICO_FACES
    for _ in range(subdivisions):
        midpoint_index: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint_index:
                p = verts[i] + verts[j]
                verts.append(p / np.linalg.norm(p))
                midpoint_index[key] = len(verts) - 1
            return midpoint_index[key]

        new_faces = []
        for i, j, k in faces:
            ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [(i, ij, ki), (j, jk, ij), (k, ki, jk), (ij, jk, ki)]
        faces = np.asarray(new_faces, dtype=np.int64)
    return np.asarray(verts), faces


def make_test_lung(subdivisions: int, shape: MeshShape = MeshShape()) -> LungMesh:
    """Synthetic star-shaped lung stand-in: modulated, scaled icosphere."""
    if shape.lobe_amplitude >= 1.0 or shape.lobe_amplitude <= -1.0:
        raise GeometryError(
            f"lobe amplitude must lie in (-1, 1), got {shape.lobe_amplitude}")
    verts, faces = icosphere(subdivisions)
    scaled = verts * np.asarray(shape.axis_scales)
    if shape.lobe_amplitude != 0.0:
        r = np.linalg.norm(scaled, axis=1)
        cos_t = scaled[:, 2] / r
        sin_t2 = 1.0 - cos_t ** 2
        phi = np.arctan2(scaled[:, 1], scaled[:, 0])
        lobe = np.cos(2.0 * phi) * sin_t2
        scaled = scaled * (1.0 + shape.lobe_amplitude * lobe)[:, None]
    return LungMesh.from_vertices(scaled, faces)


# -- OFF import/export ---------------------------------------------------

def save_off(mesh: LungMesh, path) -> None:
    """Write the mesh as ASCII OFF."""
    verts = mesh.vertices()
    tris = mesh.triangles
    with open(path, "w", encoding="ascii") as fh:
        fh.write("OFF\n")
        fh.write(f"{verts.shape[0]} {tris.shape[0]} 0\n")
        for v in verts:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in tris:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def load_off(path) -> LungMesh:
    """Read an ASCII OFF file; validates closedness and star-shapedness."""
    with open(path, "r", encoding="ascii") as fh:
        tokens: list[str] = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise GeometryError("not an OFF file (missing header)")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4  # skip edge count
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            arity = int(tokens[pos])
            if arity != 3:
                raise GeometryError("only triangle faces are supported")
            faces.append([int(tokens[pos + 1]), int(tokens[pos + 2]),
                          int(tokens[pos + 3])])
            pos += 4
    except (IndexError, ValueError) as exc:
        raise GeometryError(f"malformed OFF file: {exc}") from exc
    return LungMesh.from_vertices(verts, np.asarray(faces, dtype=np.int64))
