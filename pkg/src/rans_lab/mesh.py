"""Triangle meshes with boundary markers and periodic vertex pairings.

Meshes are immutable after construction (arrays are marked read-only) and
safe for concurrent reads.  The plain-text serialization format is described
in docs/formats.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MappingError, MeshError

# Named facet-marker registry (stable across runs and files).
WALL = 1
INLET = 2
OUTLET = 3
SYMMETRY = 4
MARKER_NAMES = {"wall": WALL, "inlet": INLET, "outlet": OUTLET, "symmetry": SYMMETRY}


@dataclass(frozen=True, eq=False)
class Mesh:
    """2D triangle mesh with marked boundary facets.

    vertices: (nv, 2) coordinates
    cells:    (nc, 3) vertex indices, counter-clockwise
    facets:   (nf, 3) rows (v0, v1, marker) covering the whole boundary
    """

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    edges: np.ndarray = field(init=False)        # (ne, 2) sorted vertex pairs, lexicographic
    cell_edges: np.ndarray = field(init=False)   # (nc, 3) edge index opposite local vertex k

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        facets = np.ascontiguousarray(self.facets, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshError("cells must be an (nc, 3) array")
        if facets.ndim != 2 or facets.shape[1] != 3:
            raise MeshError("facets must be an (nf, 3) array of (v0, v1, marker)")

        edges, cell_edges = _number_edges(cells)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "facets", facets)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "cell_edges", cell_edges)
        self._validate()
        for arr in (vertices, cells, facets, edges, cell_edges):
            arr.flags.writeable = False

    # basic counts -------------------------------------------------------
    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def _validate(self):
        v, c = self.vertices, self.cells
        if c.min(initial=0) < 0 or c.max(initial=-1) >= len(v):
            raise MeshError("cell vertex index out of range")
        areas = signed_areas(self)
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise MeshError(f"cell {bad} has non-positive area {areas[bad]:.3e}")

        # Every facet must be a boundary edge, each boundary edge must carry
        # exactly one marker.
        counts = _edge_cell_counts(self)
        boundary = {tuple(e) for e in self.edges[counts == 1]}
        seen = set()
        for v0, v1, marker in self.facets:
            key = (min(v0, v1), max(v0, v1))
            if key not in boundary:
                raise MeshError(f"facet {key} is not a boundary edge")
            if key in seen:
                raise MeshError(f"facet {key} is marked more than once")
            seen.add(key)
        if len(seen) != len(boundary):
            raise MeshError("markers do not cover the whole boundary")

    def boundary_facet_cells(self) -> np.ndarray:
        """(nf, 2) array of (adjacent cell, local edge index) per facet row."""
        lookup = {}
        for ci, cell in enumerate(self.cells):
            for k in range(3):
                a, b = cell[(k + 1) % 3], cell[(k + 2) % 3]
                lookup.setdefault((min(a, b), max(a, b)), []).append((ci, k))
        out = np.empty((len(self.facets), 2), dtype=np.int64)
        for fi, (v0, v1, _) in enumerate(self.facets):
            hits = lookup[(min(v0, v1), max(v0, v1))]
            if len(hits) != 1:
                raise MeshError("facet adjoins more than one cell")
            out[fi] = hits[0]
        return out


@dataclass(frozen=True, eq=False)
class PeriodicMap:
    """Bijective master/slave vertex pairing related by a pure translation."""

    pairs: np.ndarray        # (npairs, 2) of (master, slave) vertex indices
    translation: np.ndarray  # (2,)

    def __post_init__(self):
        object.__setattr__(self, "pairs", np.ascontiguousarray(self.pairs, dtype=np.int64))
        object.__setattr__(self, "translation", np.ascontiguousarray(self.translation, dtype=float))


def _number_edges(cells: np.ndarray):
    """Global lexicographic numbering of sorted vertex pairs."""
    raw = np.concatenate(
        [cells[:, [1, 2]], cells[:, [0, 2]], cells[:, [0, 1]]], axis=0
    )
    raw.sort(axis=1)
    edges, inverse = np.unique(raw, axis=0, return_inverse=True)
    nc = len(cells)
    cell_edges = np.stack([inverse[:nc], inverse[nc:2 * nc], inverse[2 * nc:]], axis=1)
    return edges, cell_edges


def _edge_cell_counts(mesh: Mesh) -> np.ndarray:
    counts = np.zeros(mesh.num_edges, dtype=np.int64)
    np.add.at(counts, mesh.cell_edges.ravel(), 1)
    return counts


def signed_areas(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def generate_channel_mesh(nx: int, ny: int, length: float = 1.0, height: float = 1.0,
                          grading: float = 1.0) -> Mesh:
    """Structured half-channel mesh on [0, length] x [0, height].

    Markers: wall at y=0, symmetry at y=height, inlet at x=0, outlet at
    x=length.  grading > 1 refines geometrically toward the wall; the
    wall-normal spacings grow by that factor away from y=0.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    if length <= 0 or height <= 0:
        raise ValueError("length and height must be positive")
    if grading < 1.0:
        raise ValueError("grading must be >= 1")

    x = np.linspace(0.0, length, nx + 1)
    if grading == 1.0:
        y = np.linspace(0.0, height, ny + 1)
    else:
        j = np.arange(ny + 1, dtype=float)
        y = height * (grading ** j - 1.0) / (grading ** ny - 1.0)

    def vid(i, jj):
        return jj * (nx + 1) + i

    vertices = np.empty(((nx + 1) * (ny + 1), 2))
    for jj in range(ny + 1):
        for i in range(nx + 1):
            vertices[vid(i, jj)] = (x[i], y[jj])

    cells = []
    for jj in range(ny):
        for i in range(nx):
            v00, v10 = vid(i, jj), vid(i + 1, jj)
            v01, v11 = vid(i, jj + 1), vid(i + 1, jj + 1)
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))

    facets = []
    for i in range(nx):
        facets.append((vid(i, 0), vid(i + 1, 0), WALL))
        facets.append((vid(i, ny), vid(i + 1, ny), SYMMETRY))
    for jj in range(ny):
        facets.append((vid(0, jj), vid(0, jj + 1), INLET))
        facets.append((vid(nx, jj), vid(nx, jj + 1), OUTLET))

    return Mesh(vertices, np.array(cells), np.array(facets))


def build_periodic_map(mesh: Mesh, inlet_marker: int = INLET,
                       outlet_marker: int = OUTLET) -> PeriodicMap:
    """Pair inlet (master) and outlet (slave) vertices under an x-translation."""
    def marked_vertices(marker):
        rows = mesh.facets[mesh.facets[:, 2] == marker]
        return np.unique(rows[:, :2].ravel())

    masters = marked_vertices(inlet_marker)
    slaves = marked_vertices(outlet_marker)
    if len(masters) == 0 or len(slaves) == 0:
        raise MappingError("periodic marker set is empty")
    if len(masters) != len(slaves):
        raise MappingError(
            f"periodic vertex counts differ: {len(masters)} vs {len(slaves)}")

    mc = mesh.vertices[masters]
    sc = mesh.vertices[slaves]
    translation = np.array([sc[:, 0].mean() - mc[:, 0].mean(), 0.0])

    extent = np.ptp(mesh.vertices, axis=0).max()
    tol = 1e-9 * max(extent, 1.0)
    # Congruent sets under a pure x-translation match after sorting by (y, x).
    morder = np.lexsort((mc[:, 0], mc[:, 1]))
    sorder = np.lexsort((sc[:, 0], sc[:, 1]))
    pairs = np.stack([masters[morder], slaves[sorder]], axis=1)
    mismatch = np.abs(mesh.vertices[pairs[:, 1]] - mesh.vertices[pairs[:, 0]] - translation)
    if mismatch.max() > tol:
        raise MappingError("marked facet sets are not congruent under an x-translation")
    return PeriodicMap(pairs, translation)


def cell_geometry(mesh: Mesh, cell: int):
    """Affine map of one cell: (J, detJ, h) with h the longest edge."""
    if not 0 <= cell < mesh.num_cells:
        raise ValueError(f"cell index {cell} out of range")
    p = mesh.vertices[mesh.cells[cell]]
    J = np.column_stack([p[1] - p[0], p[2] - p[0]])
    detJ = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if detJ <= 0.0:
        raise MeshError(f"cell {cell} is degenerate (detJ={detJ:.3e})")
    h = max(np.linalg.norm(p[1] - p[0]),
            np.linalg.norm(p[2] - p[1]),
            np.linalg.norm(p[0] - p[2]))
    return J, detJ, h


def mesh_geometry(mesh: Mesh):
    """Vectorized affine data for all cells: (J, invJ, detJ, h).

    invJ is J^{-1}, laid out so that a physical gradient is
    ref_grad[d] * invJ[d, j].
    """
    p = mesh.vertices[mesh.cells]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(detJ <= 0.0):
        raise MeshError("mesh contains degenerate cells")
    invJ = np.empty_like(J)
    invJ[:, 0, 0] = J[:, 1, 1] / detJ
    invJ[:, 0, 1] = -J[:, 0, 1] / detJ
    invJ[:, 1, 0] = -J[:, 1, 0] / detJ
    invJ[:, 1, 1] = J[:, 0, 0] / detJ
    e0 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    e1 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    e2 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    h = np.maximum(e0, np.maximum(e1, e2))
    return J, invJ, detJ, h


def write_mesh(mesh: Mesh, path):
    """Serialize to the plain-text format (docs/formats.md)."""
    with open(path, "w") as f:
        f.write("rans-lab-mesh 1\n")
        f.write(f"vertices {mesh.num_vertices}\n")
        for xy in mesh.vertices:
            f.write(f"{xy[0]:.17g} {xy[1]:.17g}\n")
        f.write(f"cells {mesh.num_cells}\n")
        for c in mesh.cells:
            f.write(f"{c[0]} {c[1]} {c[2]}\n")
        f.write(f"facets {len(mesh.facets)}\n")
        for v0, v1, m in mesh.facets:
            f.write(f"{v0} {v1} {m}\n")


def read_mesh(path) -> Mesh:
    with open(path) as f:
        tokens = f.read().split()
    pos = 0

    def take(n):
        nonlocal pos
        out = tokens[pos:pos + n]
        pos += n
        return out

    magic, version = take(2)
    if magic != "rans-lab-mesh" or version != "1":
        raise MeshError(f"not a rans-lab mesh file: {path}")
    sections = {}
    for name, width in (("vertices", 2), ("cells", 3), ("facets", 3)):
        key, count = take(2)
        if key != name:
            raise MeshError(f"expected section '{name}', found '{key}'")
        count = int(count)
        flat = take(width * count)
        dtype = float if name == "vertices" else np.int64
        sections[name] = np.array(flat, dtype=dtype).reshape(count, width)
    return Mesh(sections["vertices"], sections["cells"], sections["facets"])
