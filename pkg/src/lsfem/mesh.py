"""Structured and jittered triangulations of the unit square and the L-shape.

The L-shaped domain is the unit square with the quarter [1/2, 1] x [1/2, 1]
removed. Refinement is done by regeneration with a doubled subdivision
count, so levels N, 2N, 4N, ... are nested for the structured families.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LsfemError, ParameterError

JITTER_FRACTION = 0.3
MAX_JITTER_RETRIES = 10


class Family(str, enum.Enum):
    SQUARE_RIGHT = "square-right"
    SQUARE_CROSSED = "square-crossed"
    SQUARE_NONUNIFORM = "square-nonuniform"
    LSHAPE_LEFT = "lshape-left"
    LSHAPE_UNIFORM = "lshape-uniform"
    LSHAPE_NONUNIFORM = "lshape-nonuniform"

    @property
    def is_lshape(self) -> bool:
        return self.value.startswith("lshape")

    @property
    def domain(self) -> str:
        return "lshape" if self.is_lshape else "square"

    @classmethod
    def parse(cls, name) -> "Family":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for member in cls:
            if key in (member.value, member.name.lower().replace("_", "-")):
                return member
        choices = ", ".join(m.value for m in cls)
        raise ParameterError(f"unknown mesh family {name!r} (choose from {choices})")


SQUARE_FAMILIES = (Family.SQUARE_RIGHT, Family.SQUARE_CROSSED, Family.SQUARE_NONUNIFORM)
LSHAPE_FAMILIES = (Family.LSHAPE_LEFT, Family.LSHAPE_UNIFORM, Family.LSHAPE_NONUNIFORM)


@dataclass(frozen=True)
class MeshFamily:
    """A mesh family together with its subdivision count and jitter seed."""

    family: Family
    n: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        validate_subdivisions(self.family, self.n)
        if int(self.seed) < 0:
            raise ParameterError("seed must be a non-negative integer")

    def refined(self) -> "MeshFamily":
        return MeshFamily(self.family, 2 * self.n, self.seed)


def validate_subdivisions(family, n):
    family = Family.parse(family)
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ParameterError(f"N must be a positive integer, got {n!r}")
    if family.is_lshape and n % 2:
        raise ParameterError("N must be even for L-shape")


def _frozen(array):
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Conforming triangulation with oriented edge topology.

    Local edge ``k`` of a triangle is the edge opposite its local vertex
    ``k``. ``triangle_edge_signs[t, k]`` is +1 when the outward normal of
    triangle ``t`` on that edge agrees with the global edge normal, which is
    the clockwise rotation of the tangent ``vertices[b] - vertices[a]`` for
    the global edge ``(a, b)`` with ``a < b``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(repr=False)
    triangle_edges: np.ndarray = field(repr=False)
    triangle_edge_signs: np.ndarray = field(repr=False)
    boundary_edges: np.ndarray = field(repr=False)
    boundary_vertices: np.ndarray = field(repr=False)
    h_max: float = 0.0
    label: str = ""

    @classmethod
    def from_arrays(cls, vertices, triangles, label=""):
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if triangles.size == 0:
            raise ParameterError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise ParameterError("triangle references a missing vertex")

        areas = signed_areas(vertices, triangles)
        if np.any(areas <= 0):
            bad = int(np.argmin(areas))
            raise ParameterError(
                f"triangle {bad} has non-positive signed area {areas[bad]:.3e}"
            )

        local = np.stack(
            [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1
        )
        lo = local.min(axis=2).ravel()
        hi = local.max(axis=2).ravel()
        pairs = np.stack([lo, hi], axis=1)
        edges, inverse, counts = np.unique(
            pairs, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise ParameterError("non-manifold edge shared by more than two triangles")
        forward = local[:, :, 0] < local[:, :, 1]
        signs = np.where(forward, 1, -1).astype(np.int8)

        boundary_edges = np.flatnonzero(counts == 1)
        boundary_vertices = np.unique(edges[boundary_edges].ravel())
        lengths = np.linalg.norm(vertices[edges[:, 1]] - vertices[edges[:, 0]], axis=1)

        return cls(
            vertices=_frozen(vertices),
            triangles=_frozen(triangles),
            edges=_frozen(edges.astype(np.int64)),
            triangle_edges=_frozen(inverse.reshape(-1, 3).astype(np.int64)),
            triangle_edge_signs=_frozen(signs),
            boundary_edges=_frozen(boundary_edges.astype(np.int64)),
            boundary_vertices=_frozen(boundary_vertices.astype(np.int64)),
            h_max=float(lengths.max()),
            label=label,
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def interior_vertices(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = False
        return np.flatnonzero(mask)

    @property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def corners(self) -> np.ndarray:
        """Vertex coordinates per triangle, shape (T, 3, 2)."""
        return self.vertices[self.triangles]

    def edge_normals(self) -> np.ndarray:
        """Unit global normals of all edges, shape (E, 2)."""
        t = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def edge_lengths(self) -> np.ndarray:
        t = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(t, axis=1)

    def to_json(self, metadata=None) -> str:
        payload = {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
        }
        if metadata is not None:
            payload = {"metadata": metadata, **payload}
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls.from_arrays(data["vertices"], data["triangles"])

    def save(self, path, metadata=None):
        Path(path).write_text(self.to_json(metadata) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def signed_areas(vertices, triangles):
    p = np.asarray(vertices)[np.asarray(triangles)]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _grid_cells(n, lshape):
    cells = [(i, j) for j in range(n) for i in range(n)]
    if lshape:
        half = n // 2
        cells = [(i, j) for i, j in cells if not (i >= half and j >= half)]
    return cells


def _structured(n, lshape, pattern):
    """Triangulate the grid cells; ``pattern`` is 'right', 'left' or 'crossed'."""
    h = 1.0 / n
    index = {}
    vertices = []

    def vid(key, xy):
        if key not in index:
            index[key] = len(vertices)
            vertices.append(xy)
        return index[key]

    triangles = []
    for i, j in _grid_cells(n, lshape):
        v00 = vid((2 * i, 2 * j), (i * h, j * h))
        v10 = vid((2 * i + 2, 2 * j), ((i + 1) * h, j * h))
        v01 = vid((2 * i, 2 * j + 2), (i * h, (j + 1) * h))
        v11 = vid((2 * i + 2, 2 * j + 2), ((i + 1) * h, (j + 1) * h))
        if pattern == "right":
            triangles += [(v00, v10, v11), (v00, v11, v01)]
        elif pattern == "left":
            triangles += [(v00, v10, v01), (v10, v11, v01)]
        else:
            c = vid((2 * i + 1, 2 * j + 1), ((i + 0.5) * h, (j + 0.5) * h))
            triangles += [(v00, v10, c), (v10, v11, c), (v11, v01, c), (v01, v00, c)]

    # Renumber vertices lexicographically in (y, x) for a deterministic order.
    keys = sorted(index, key=lambda k: (k[1], k[0]))
    perm = np.empty(len(vertices), dtype=np.int64)
    for new, key in enumerate(keys):
        perm[index[key]] = new
    coords = np.empty((len(vertices), 2))
    coords[perm] = np.asarray(vertices, dtype=float)
    return coords, perm[np.asarray(triangles, dtype=np.int64)]


def _jitter(mesh, n, seed, label):
    boundary = np.zeros(mesh.n_vertices, dtype=bool)
    boundary[mesh.boundary_vertices] = True
    amplitude = JITTER_FRACTION / n
    for _ in range(MAX_JITTER_RETRIES + 1):
        rng = np.random.default_rng(seed)
        offsets = rng.uniform(-1.0, 1.0, size=mesh.vertices.shape) * amplitude
        offsets[boundary] = 0.0
        moved = mesh.vertices + offsets
        if np.all(signed_areas(moved, mesh.triangles) > 0):
            return TriangleMesh.from_arrays(moved, mesh.triangles, label=label)
        amplitude *= 0.5
    raise LsfemError(
        f"jitter produced degenerate triangles after {MAX_JITTER_RETRIES} retries"
    )


def generate_mesh(mesh_family: MeshFamily) -> TriangleMesh:
    """Generate the triangulation described by ``mesh_family``.

    Examples
    --------
    >>> m = generate_mesh(MeshFamily(Family.SQUARE_RIGHT, 1))
    >>> m.n_vertices, m.n_edges, m.n_triangles
    (4, 5, 2)
    """
    family, n = mesh_family.family, mesh_family.n
    validate_subdivisions(family, n)
    label = f"{family.value}-N{n}"
    lshape = family.is_lshape
    if family in (Family.SQUARE_CROSSED, Family.LSHAPE_UNIFORM):
        pattern = "crossed"
    elif family in (Family.SQUARE_RIGHT, Family.SQUARE_NONUNIFORM):
        pattern = "right"
    else:
        pattern = "left"
    coords, tris = _structured(n, lshape, pattern)
    mesh = TriangleMesh.from_arrays(coords, tris, label=label)
    if family in (Family.SQUARE_NONUNIFORM, Family.LSHAPE_NONUNIFORM):
        mesh = _jitter(mesh, n, mesh_family.seed, label)
    return mesh


def mesh_statistics(mesh: TriangleMesh) -> dict:
    """Counts, longest edge and smallest interior angle (degrees)."""
    p = mesh.corners
    angles = []
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("td,td->t", a, b) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        )
        angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return {
        "V": mesh.n_vertices,
        "E": mesh.n_edges,
        "T": mesh.n_triangles,
        "boundary_edges": len(mesh.boundary_edges),
        "boundary_vertices": len(mesh.boundary_vertices),
        "interior_vertices": mesh.n_vertices - len(mesh.boundary_vertices),
        "h_max": mesh.h_max,
        "min_angle": float(np.min(angles)),
        "euler": mesh.n_vertices - mesh.n_edges + mesh.n_triangles,
    }


def format_statistics(stats) -> str:
    return (
        f"V={stats['V']} E={stats['E']} T={stats['T']} "
        f"h_max={stats['h_max']:.6g} min_angle={stats['min_angle']:.4g}"
    )


def domain_area(family) -> float:
    return 0.75 if Family.parse(family).is_lshape else 1.0
