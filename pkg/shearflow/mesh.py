"""
2D triangulations
shearflow/mesh.py

Structured crossed-diagonal generator, plain-text import/export and the
edge topology the P2 dof map is built from.
"""

import hashlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from shearflow.exceptions import MeshError, ParameterError
from shearflow.logger import get_logger

logger = get_logger(__name__)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Conforming triangulation with counter-clockwise triangles.

    boundary_edges lists every edge owned by exactly one triangle (tag Gamma);
    it is derived from the triangles and checked when supplied.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray = None

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        triangles = np.asarray(self.triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError(f"vertices must have shape (n, 2), got {vertices.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise MeshError(f"triangles must have shape (n, 3), got {triangles.shape}")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError("triangle references a vertex index out of range")

        object.__setattr__(self, "vertices", _readonly(vertices))
        object.__setattr__(self, "triangles", _readonly(triangles))

        if np.any(self.signed_areas <= 0):
            bad = int(np.argmin(self.signed_areas))
            raise MeshError(f"triangle {bad} has non-positive signed area {self.signed_areas[bad]:.3e}")

        counts = self._edge_counts
        if counts.max() > 2:
            raise MeshError("non-conforming mesh: an edge is shared by more than two triangles")
        derived = self.edges[counts == 1]
        if self.boundary_edges is None:
            object.__setattr__(self, "boundary_edges", _readonly(derived))
        else:
            given = np.sort(np.asarray(self.boundary_edges, dtype=np.int64), axis=1)
            if set(map(tuple, given)) != set(map(tuple, derived)):
                raise MeshError("boundary_edges do not match the topological boundary")
            object.__setattr__(self, "boundary_edges", _readonly(given))

    # ------------------------------------------------------------------ topology

    @cached_property
    def _edge_data(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        tri = self.triangles
        # local edge k is opposite local vertex k
        local = np.stack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]], axis=1)
        flat = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        return self._edge_data[1]

    @property
    def _edge_counts(self) -> np.ndarray:
        return self._edge_data[2]

    @cached_property
    def boundary_edge_mask(self) -> np.ndarray:
        return self._edge_counts == 1

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.vertices), dtype=bool)
        mask[self.boundary_edges.ravel()] = True
        return mask

    # ------------------------------------------------------------------ geometry

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(self.signed_areas.sum())

    @cached_property
    def h_max(self) -> float:
        p = self.vertices[self.edges]
        return float(np.max(np.linalg.norm(p[:, 1] - p[:, 0], axis=1)))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles

    def fingerprint(self) -> str:
        """Stable hash of the geometry, used as a cache key"""
        digest = hashlib.md5()
        digest.update(self.vertices.tobytes())
        digest.update(self.triangles.tobytes())
        return digest.hexdigest()


# ============================================================================
# GENERATION
# ============================================================================

def build_structured_mesh(nx: int, ny: int, rect: Tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)) -> Mesh:
    """
    Crossed-diagonal triangulation of a rectangle.

    Every grid cell gets a centre vertex and four triangles.

    Args:
        nx, ny: cells per direction (>= 1)
        rect: (x_min, x_max, y_min, y_max)
    """
    if int(nx) < 1 or int(ny) < 1:
        raise ParameterError(f"need nx, ny >= 1, got ({nx}, {ny})")
    x0, x1, y0, y1 = map(float, rect)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {rect}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]))
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    vertices = np.vstack([grid, centres])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    a = j * (nx + 1) + i
    b = a + 1
    c = b + (nx + 1)
    d = a + (nx + 1)
    o = len(grid) + j * nx + i
    triangles = np.stack([
        np.column_stack([a, b, o]),
        np.column_stack([b, c, o]),
        np.column_stack([c, d, o]),
        np.column_stack([d, a, o]),
    ], axis=1).reshape(-1, 3)

    mesh = Mesh(vertices, triangles)
    logger.debug(f"Structured mesh {nx}x{ny}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles")
    return mesh


# ============================================================================
# PLAIN-TEXT FORMAT
# ============================================================================
# n_vertices n_triangles
# x y                (n_vertices lines)
# i j k              (n_triangles lines, 0-based)
# Lines starting with '#' are comments.

def write_mesh(mesh: Mesh, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")
    logger.debug(f"Wrote mesh to {path}")
    return path


def read_mesh(path: Union[str, Path]) -> Mesh:
    """Read the plain-text format; clockwise triangles are reoriented"""
    path = Path(path)
    if not path.exists():
        raise MeshError(f"mesh file not found: {path}")

    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.split() for ln in f if ln.strip() and not ln.lstrip().startswith("#")]

    try:
        nv, nt = int(lines[0][0]), int(lines[0][1])
        vertices = np.array([[float(v) for v in ln[:2]] for ln in lines[1:1 + nv]])
        triangles = np.array([[int(v) for v in ln[:3]] for ln in lines[1 + nv:1 + nv + nt]], dtype=np.int64)
    except (IndexError, ValueError) as e:
        raise MeshError(f"malformed mesh file {path}: {e}") from e

    if len(vertices) != nv or len(triangles) != nt:
        raise MeshError(f"mesh file {path} declares {nv}/{nt} entries but holds {len(vertices)}/{len(triangles)}")

    p = vertices[triangles]
    cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flipped = cross < 0
    if flipped.any():
        logger.warning(f"Reoriented {int(flipped.sum())} clockwise triangles from {path.name}")
        triangles[flipped] = triangles[flipped][:, [0, 2, 1]]

    return Mesh(vertices, triangles)
