"""Lagrange P1/P2 function spaces, dof maps, and field functions.

Value shapes: scalar, 2-vector (components interleaved per scalar node),
and symmetric 2x2 tensor (stored components xx, xy, yy).  Mixed spaces
concatenate their subspace blocks; splitting a mixed field yields numpy
views that alias the parent coefficient vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh

# Symmetric-tensor component basis: coefficient c scales SYM_BASIS[c].
SYM_BASIS = np.array([
    [[1.0, 0.0], [0.0, 0.0]],   # xx
    [[0.0, 1.0], [1.0, 0.0]],   # xy (and yx)
    [[0.0, 0.0], [0.0, 1.0]],   # yy
])

_NCOMP = {"scalar": 1, "vector": 2, "sym_tensor": 3}
_SHAPE = {"scalar": (), "vector": (2,), "sym_tensor": (2, 2)}


@dataclass(frozen=True)
class Element:
    """Lagrange element of degree 1 or 2 with a scalar/vector/tensor value."""

    degree: int
    value_kind: str = "scalar"
    family: str = "Lagrange"

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise ValueError(f"unsupported degree {self.degree} (only 1 and 2)")
        if self.value_kind not in _NCOMP:
            raise ValueError(f"unknown value kind '{self.value_kind}'")

    @property
    def ncomp(self) -> int:
        return _NCOMP[self.value_kind]

    @property
    def value_shape(self) -> tuple:
        return _SHAPE[self.value_kind]

    @property
    def nlocal_scalar(self) -> int:
        return 3 if self.degree == 1 else 6

    @property
    def nlocal(self) -> int:
        return self.ncomp * self.nlocal_scalar


def _scalar_basis(degree: int, points: np.ndarray):
    """Values, gradients, and Hessians of the scalar basis at reference points.

    Returns (vals (np, nl), grads (np, nl, 2), hess (np, nl, 2, 2)).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - x - y, x, y], axis=1)          # (np, 3)
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    npts = len(pts)
    if degree == 1:
        vals = lam
        grads = np.broadcast_to(dlam, (npts, 3, 2)).copy()
        hess = np.zeros((npts, 3, 2, 2))
        return vals, grads, hess

    vals = np.empty((npts, 6))
    grads = np.empty((npts, 6, 2))
    hess = np.empty((npts, 6, 2, 2))
    for i in range(3):
        li = lam[:, i]
        vals[:, i] = li * (2.0 * li - 1.0)
        grads[:, i] = (4.0 * li - 1.0)[:, None] * dlam[i]
        hess[:, i] = 4.0 * np.outer(dlam[i], dlam[i])
    # Edge bubbles: dof 3+k sits on the edge opposite vertex k.
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        vals[:, 3 + k] = 4.0 * lam[:, a] * lam[:, b]
        grads[:, 3 + k] = 4.0 * (lam[:, a][:, None] * dlam[b] + lam[:, b][:, None] * dlam[a])
        hess[:, 3 + k] = 4.0 * (np.outer(dlam[a], dlam[b]) + np.outer(dlam[b], dlam[a]))
    return vals, grads, hess


def evaluate_basis(element: Element, points):
    """Basis values and reference gradients at reference-triangle points.

    Shapes: values (np, nlocal, *value_shape), gradients with a trailing
    derivative axis.  Single points may be passed as a length-2 sequence.
    """
    vals, grads, hess = _tabulate(element, points)
    return vals, grads


def _tabulate(element: Element, points):
    sv, sg, sh = _scalar_basis(element.degree, points)
    npts, nls = sv.shape
    if element.value_kind == "scalar":
        return sv, sg, sh
    ncomp = element.ncomp
    shape = element.value_shape
    comp = np.eye(2) if element.value_kind == "vector" else SYM_BASIS
    vals = np.zeros((npts, ncomp * nls) + shape)
    grads = np.zeros((npts, ncomp * nls) + shape + (2,))
    hess = np.zeros((npts, ncomp * nls) + shape + (2, 2))
    for m in range(nls):
        for c in range(ncomp):
            dof = ncomp * m + c
            vals[:, dof] = np.einsum("p,...->p...", sv[:, m], comp[c])
            grads[:, dof] = np.einsum("pd,...->p...d", sg[:, m], comp[c])
            hess[:, dof] = np.einsum("pde,...->p...de", sh[:, m], comp[c])
    return vals, grads, hess


class FunctionSpace:
    """A Lagrange space on a mesh: element + deterministic dof numbering.

    Scalar dofs are numbered vertices first, then edges (P2); component
    dofs of vector/tensor elements are interleaved per scalar node.
    """

    def __init__(self, mesh: Mesh, element: Element):
        self.mesh = mesh
        self.element = element
        nv, ne = mesh.num_vertices, mesh.num_edges
        self.num_scalar_dofs = nv if element.degree == 1 else nv + ne
        self.ndofs = element.ncomp * self.num_scalar_dofs

        if element.degree == 1:
            scalar_map = mesh.cells.copy()
        else:
            scalar_map = np.concatenate([mesh.cells, nv + mesh.cell_edges], axis=1)
        ncomp = element.ncomp
        if ncomp == 1:
            self.dofmap = scalar_map
        else:
            nl = scalar_map.shape[1]
            dofmap = np.empty((mesh.num_cells, ncomp * nl), dtype=np.int64)
            for c in range(ncomp):
                dofmap[:, c::ncomp] = ncomp * scalar_map + c
            self.dofmap = dofmap
        self.scalar_dofmap = scalar_map
        self.dofmap.flags.writeable = False

        coords = mesh.vertices if element.degree == 1 else np.concatenate(
            [mesh.vertices, 0.5 * (mesh.vertices[mesh.edges[:, 0]]
                                   + mesh.vertices[mesh.edges[:, 1]])], axis=0)
        self.scalar_dof_coords = coords
        self.dof_coords = np.repeat(coords, ncomp, axis=0)
        self.dof_component = np.tile(np.arange(ncomp), self.num_scalar_dofs)

        self._boundary_scalar_dofs_cache: dict = {}

    @property
    def nlocal(self) -> int:
        return self.element.nlocal

    def boundary_scalar_dofs(self, markers) -> np.ndarray:
        """Scalar-node dofs lying on facets carrying any of the markers."""
        key = tuple(sorted(set(np.atleast_1d(markers).tolist())))
        if key in self._boundary_scalar_dofs_cache:
            return self._boundary_scalar_dofs_cache[key]
        mesh = self.mesh
        rows = mesh.facets[np.isin(mesh.facets[:, 2], key)]
        dofs = set(rows[:, :2].ravel().tolist())
        if self.element.degree == 2:
            edge_lookup = {tuple(e): i for i, e in enumerate(mesh.edges)}
            nv = mesh.num_vertices
            for v0, v1, _ in rows:
                dofs.add(nv + edge_lookup[(min(v0, v1), max(v0, v1))])
        out = np.array(sorted(dofs), dtype=np.int64)
        self._boundary_scalar_dofs_cache[key] = out
        return out

    def interpolate(self, f) -> "FieldFunction":
        field = FieldFunction(self)
        field.interpolate(f)
        return field


def build_dofmap(mesh: Mesh, element: Element) -> FunctionSpace:
    """Construct a function space (public name per the dof-map operation)."""
    return FunctionSpace(mesh, element)


class MixedSpace:
    """Block concatenation of function spaces sharing one mesh."""

    def __init__(self, subspaces):
        subspaces = list(subspaces)
        if not subspaces:
            raise ValueError("mixed space needs at least one subspace")
        mesh = subspaces[0].mesh
        if any(s.mesh is not mesh for s in subspaces):
            raise ValueError("all subspaces must share one mesh")
        self.mesh = mesh
        self.subspaces = subspaces
        self.offsets = np.concatenate([[0], np.cumsum([s.ndofs for s in subspaces])])
        self.ndofs = int(self.offsets[-1])
        # Cell-local layout: subspace blocks appear in order within a cell.
        nlocals = [s.nlocal for s in subspaces]
        self.local_offsets = np.concatenate([[0], np.cumsum(nlocals)])
        self.nlocal = int(self.local_offsets[-1])

    def sub(self, k: int) -> FunctionSpace:
        return self.subspaces[k]

    def full_dofmap(self) -> np.ndarray:
        """(nc, nlocal) global dofs: per-subspace dofmaps shifted by offsets."""
        parts = [s.dofmap + off for s, off in zip(self.subspaces, self.offsets[:-1])]
        return np.concatenate(parts, axis=1)


def mixed_space(subspaces) -> MixedSpace:
    return MixedSpace(subspaces)


class FieldFunction:
    """A field = space + coefficient vector (possibly a view into a parent).

    Fields participate directly in form expressions (k_ * e * dx): the
    arithmetic operators wrap them as coefficient nodes.
    """

    def __init__(self, space, values: np.ndarray | None = None, name: str = ""):
        self.space = space
        self.name = name
        if values is None:
            values = np.zeros(space.ndofs)
        if len(values) != space.ndofs:
            raise ValueError("coefficient length does not match space")
        self.values = values
        self._views = None

    def _expr(self):
        from .forms import as_expr
        return as_expr(self)

    def __add__(self, other):
        return self._expr() + other

    def __radd__(self, other):
        return other + self._expr()

    def __sub__(self, other):
        return self._expr() - other

    def __rsub__(self, other):
        return other - self._expr()

    def __mul__(self, other):
        return self._expr() * other

    def __rmul__(self, other):
        return other * self._expr()

    def __truediv__(self, other):
        return self._expr() / other

    def __rtruediv__(self, other):
        return other / self._expr()

    def __pow__(self, other):
        return self._expr() ** other

    def __neg__(self):
        return -self._expr()

    def __abs__(self):
        return abs(self._expr())

    @property
    def T(self):
        return self._expr().T

    def split(self):
        """Aliasing sub-views of a mixed field (cached, identity-stable)."""
        if not isinstance(self.space, MixedSpace):
            raise ValueError("split() requires a field on a mixed space")
        if self._views is None:
            views = []
            for k, sub in enumerate(self.space.subspaces):
                lo, hi = self.space.offsets[k], self.space.offsets[k + 1]
                views.append(FieldFunction(sub, self.values[lo:hi],
                                           name=f"{self.name}[{k}]" if self.name else ""))
            self._views = tuple(views)
        return self._views

    def copy(self) -> "FieldFunction":
        return FieldFunction(self.space, self.values.copy(), name=self.name)

    def assign(self, other):
        self.values[:] = other.values if isinstance(other, FieldFunction) else other

    def interpolate(self, f):
        """Set dof values from a constant or a callable of (x, y)."""
        space = self.space
        if isinstance(space, MixedSpace):
            raise ValueError("interpolate sub-fields of a mixed space individually")
        ncomp = space.element.ncomp
        if callable(f):
            vals = np.array([np.atleast_1d(f(x, y)) for x, y in space.scalar_dof_coords])
            if vals.shape[1] != ncomp:
                raise ValueError(f"callable must return {ncomp} component(s)")
            self.values[:] = vals.ravel()
        else:
            f = np.atleast_1d(np.asarray(f, dtype=float))
            if f.size == 1:
                self.values[:] = f[0]
            elif f.size == ncomp:
                self.values[:] = np.tile(f, space.num_scalar_dofs)
            else:
                raise ValueError("constant has wrong number of components")


def split_function(f: FieldFunction):
    return f.split()
