"""Quadrature-based assembly of forms into sparse matrices and vectors.

Forms are interpreted: the expression tree is evaluated per quadrature
point, vectorized over all cells (or boundary facets) at once.  Dirichlet,
pinned-dof, and periodic constraints are applied to the assembled system
afterwards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi, roots_legendre

from . import forms as fe
from .errors import AssemblyError, ConstraintError
from .mesh import Mesh, mesh_geometry
from .spaces import FieldFunction, FunctionSpace, MixedSpace, _tabulate

log = logging.getLogger("rans_lab.assembly")

MAX_QUAD_DEGREE = 8


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, 2) reference-triangle coordinates
    weights: np.ndarray  # (nq,) positive, summing to 1/2
    degree: int


_cell_rules: dict = {}
_facet_rules: dict = {}


def cell_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss rule on the reference triangle, exact to `degree`."""
    degree = max(1, min(int(degree), MAX_QUAD_DEGREE))
    if degree not in _cell_rules:
        n = (degree + 2) // 2
        xg, wg = roots_legendre(n)          # xi direction on [-1, 1]
        xj, wj = roots_jacobi(n, 1, 0)      # eta direction, weight (1 - x)
        xi = 0.5 * (xg + 1.0)
        eta = 0.5 * (xj + 1.0)
        pts = np.array([(x0 * (1.0 - e), e) for e in eta for x0 in xi])
        wts = np.array([0.125 * we * wx for we in wj for wx in wg])
        _cell_rules[degree] = QuadratureRule(pts, wts, degree)
    return _cell_rules[degree]


def facet_rule(degree: int):
    """1D Gauss points/weights on [0, 1]."""
    degree = max(1, min(int(degree), MAX_QUAD_DEGREE))
    if degree not in _facet_rules:
        n = (degree + 2) // 2
        xg, wg = roots_legendre(n)
        _facet_rules[degree] = (0.5 * (xg + 1.0), 0.5 * wg)
    return _facet_rules[degree]


def estimate_degree(expr) -> int:
    """Rough polynomial-degree bound used to pick a quadrature rule."""
    e = expr
    if isinstance(e, (fe.TrialField, fe.TestField)):
        elem = e.space.sub(e.sub).element if e.sub is not None else e.space.element
        return elem.degree
    if isinstance(e, fe.Coefficient):
        return e.field.space.element.degree
    if isinstance(e, fe.SpatialCoordinate):
        return 1
    if isinstance(e, (fe.ScalarConstant, fe.ConstantTensor, fe.FacetNormal, fe.CellSize)):
        return 0
    if isinstance(e, (fe.Grad, fe.Div)):
        return max(estimate_degree(e.a) - 1, 0)
    if isinstance(e, (fe.Transpose, fe.Negate)):
        return estimate_degree(e.a)
    if isinstance(e, fe.Sum):
        return max(estimate_degree(e.a), estimate_degree(e.b))
    if isinstance(e, (fe.Product, fe.Inner, fe.Dot)):
        return estimate_degree(e.a) + estimate_degree(e.b)
    if isinstance(e, fe.Quotient):
        return estimate_degree(e.a) + estimate_degree(e.b)
    if isinstance(e, fe.Power):
        if isinstance(e.b, fe.ScalarConstant) and float(e.b.value).is_integer() and e.b.value > 0:
            return int(e.b.value) * estimate_degree(e.a)
        return estimate_degree(e.a) + 2
    if isinstance(e, (fe.Exp, fe.Sqrt, fe.Abs, fe.Sign)):
        return estimate_degree(e.a) + 2
    raise TypeError(f"unknown node {type(e).__name__}")


def _integral_degree(integrand, test_space, trial_space, override):
    if override is not None:
        return override
    argdeg = 0
    for space in (test_space, trial_space):
        if space is None:
            continue
        subs = space.subspaces if isinstance(space, MixedSpace) else [space]
        argdeg = max(argdeg, max(s.element.degree for s in subs))
    return max(2 * argdeg + 1, estimate_degree(integrand))


def form_degree(form, test_space=None, trial_space=None) -> int:
    """One quadrature degree covering every integral of a form.

    Schemes pin this degree for all their forms so that the Jacobian and the
    residual (or a and L) are assembled with the same rule; for non-polynomial
    integrands that consistency is what makes J match finite differences of F.
    """
    deg = 1
    for integrand, _ in form.integrals:
        deg = max(deg, _integral_degree(integrand, test_space, trial_space, None))
    return min(deg, MAX_QUAD_DEGREE)


# ---------------------------------------------------------------------------
# argument discovery
# ---------------------------------------------------------------------------

def _find_argument_space(form, cls):
    spaces = {id(n.space): n.space for n in fe.collect_nodes(form, cls)}
    if len(spaces) > 1:
        raise AssemblyError(f"form mixes several {cls.__name__} spaces")
    return next(iter(spaces.values())) if spaces else None


def _space_nlocal(space):
    return space.nlocal


def _space_dofmap(space):
    return space.full_dofmap() if isinstance(space, MixedSpace) else space.dofmap


def _arg_layout(node):
    """(local slice, element) of an argument within its root space layout."""
    space = node.space
    if node.sub is None:
        return slice(0, space.nlocal), space.element
    lo, hi = space.local_offsets[node.sub], space.local_offsets[node.sub + 1]
    return slice(lo, hi), space.sub(node.sub).element


# ---------------------------------------------------------------------------
# evaluation context
# ---------------------------------------------------------------------------

class _Context:
    """Per-integral evaluation state; arrays are (C, T, A, *shape)-ranked."""

    def __init__(self, nbatch, nt, na, invJ, hsize, coords, normal=None):
        self.C = nbatch
        self.nt = nt
        self.na = na
        self.invJ = invJ            # (C, 2, 2)
        self.hsize = hsize          # (C,)
        self.coords = coords        # (C, nq, 2) physical quadrature points
        self.normal = normal        # (C, 2) or None
        self.tabs = {}              # element -> (vals, grads, hess) at all qps
        self.coeff_locals = {}      # id(field) -> (C, nlocal)
        self.q = 0
        self._mapped = {}

    def set_qp(self, q):
        self.q = q
        self._mapped = {}

    def tab(self, element):
        return self.tabs[element]

    def mapped_grads(self, element):
        key = ("g", element, self.q)
        out = self._mapped.get(key)
        if out is None:
            grads = self.tabs[element][1][self.q]  # (nl, *sh, 2)
            out = np.einsum("l...d,cdj->cl...j", grads, self.invJ)
            self._mapped[key] = out
        return out

    def mapped_hess(self, element):
        key = ("h", element, self.q)
        out = self._mapped.get(key)
        if out is None:
            hess = self.tabs[element][2][self.q]  # (nl, *sh, 2, 2)
            out = np.einsum("l...de,cda,ceb->cl...ab", hess, self.invJ, self.invJ)
            self._mapped[key] = out
        return out


def _pad(arr, n):
    return arr.reshape(arr.shape + (1,) * n) if n else arr


def _is_field(e):
    return isinstance(e, (fe.TrialField, fe.TestField, fe.Coefficient))


def _ev(e, ctx, memo):
    out = memo.get(id(e))
    if out is None:
        out = _ev_node(e, ctx, memo)
        memo[id(e)] = out
    return out


def _ev_node(e, ctx, memo):
    if isinstance(e, fe.ScalarConstant):
        return np.full((1, 1, 1), e.value)
    if isinstance(e, fe.ConstantTensor):
        return e.array.reshape((1, 1, 1) + e.shape)
    if isinstance(e, fe.SpatialCoordinate):
        return ctx.coords[:, ctx.q][:, None, None, :]
    if isinstance(e, fe.FacetNormal):
        if ctx.normal is None:
            raise AssemblyError("facet normal used in a cell integral")
        return ctx.normal[:, None, None, :]
    if isinstance(e, fe.CellSize):
        return ctx.hsize[:, None, None]
    if isinstance(e, (fe.TrialField, fe.TestField)):
        sl, elem = _arg_layout(e)
        vals = ctx.tab(elem)[0][ctx.q]  # (nl_sub, *sh)
        nloc = ctx.na if isinstance(e, fe.TrialField) else ctx.nt
        arr = np.zeros((nloc,) + e.shape)
        arr[sl] = vals
        return arr[None, None] if isinstance(e, fe.TrialField) else arr[None, :, None]
    if isinstance(e, fe.Coefficient):
        elem = e.field.space.element
        vals = ctx.tab(elem)[0][ctx.q]
        loc = ctx.coeff_locals[id(e.field)]
        out = np.einsum("cl,l...->c...", loc, vals)
        return out[:, None, None]
    if isinstance(e, fe.Grad):
        return _evg(e.a, ctx, memo)
    if isinstance(e, fe.Div):
        g = _evg(e.a, ctx, memo)
        if len(e.a.shape) == 1:
            return np.einsum("...ii->...", g)
        return np.einsum("...ijj->...i", g)
    if isinstance(e, fe.Transpose):
        return np.swapaxes(_ev(e.a, ctx, memo), -2, -1)
    if isinstance(e, fe.Negate):
        return -_ev(e.a, ctx, memo)
    if isinstance(e, fe.Sum):
        return _ev(e.a, ctx, memo) + _ev(e.b, ctx, memo)
    if isinstance(e, fe.Product):
        a, b = _ev(e.a, ctx, memo), _ev(e.b, ctx, memo)
        if e.a.shape == ():
            return _pad(a, len(e.b.shape)) * b
        return a * _pad(b, len(e.a.shape))
    if isinstance(e, fe.Quotient):
        return _ev(e.a, ctx, memo) / _pad(_ev(e.b, ctx, memo), len(e.a.shape))
    if isinstance(e, fe.Power):
        return np.power(_ev(e.a, ctx, memo), _ev(e.b, ctx, memo))
    if isinstance(e, fe.Inner):
        prod = _ev(e.a, ctx, memo) * _ev(e.b, ctx, memo)
        rank = len(e.a.shape)
        return prod.sum(axis=tuple(range(-rank, 0))) if rank else prod
    if isinstance(e, fe.Dot):
        a, b = _ev(e.a, ctx, memo), _ev(e.b, ctx, memo)
        ra, rb = len(e.a.shape), len(e.b.shape)
        if ra == 1 and rb == 1:
            return (a * b).sum(-1)
        if ra == 2 and rb == 1:
            return (a * b[..., None, :]).sum(-1)
        if ra == 1 and rb == 2:
            return (a[..., :, None] * b).sum(-2)
        return (a[..., :, :, None] * b[..., None, :, :]).sum(-2)
    if isinstance(e, fe.Exp):
        return np.exp(_ev(e.a, ctx, memo))
    if isinstance(e, fe.Sqrt):
        return np.sqrt(_ev(e.a, ctx, memo))
    if isinstance(e, fe.Abs):
        return np.abs(_ev(e.a, ctx, memo))
    if isinstance(e, fe.Sign):
        return np.sign(_ev(e.a, ctx, memo))
    raise TypeError(f"cannot evaluate node {type(e).__name__}")


def _evg(e, ctx, memo):
    """Spatial gradient of an expression: one extra trailing axis."""
    if isinstance(e, (fe.TrialField, fe.TestField)):
        sl, elem = _arg_layout(e)
        mg = ctx.mapped_grads(elem)  # (C, nl_sub, *sh, 2)
        nloc = ctx.na if isinstance(e, fe.TrialField) else ctx.nt
        arr = np.zeros((ctx.C, nloc) + e.shape + (2,))
        arr[:, sl] = mg
        return arr[:, None] if isinstance(e, fe.TrialField) else arr[:, :, None]
    if isinstance(e, fe.Coefficient):
        mg = ctx.mapped_grads(e.field.space.element)
        loc = ctx.coeff_locals[id(e.field)]
        out = np.einsum("cl,cl...->c...", loc, mg)
        return out[:, None, None]
    if isinstance(e, fe.Grad):
        if not _is_field(e.a):
            raise NotImplementedError(
                f"second derivatives of {type(e.a).__name__} are not supported")
        f = e.a
        if isinstance(f, (fe.TrialField, fe.TestField)):
            sl, elem = _arg_layout(f)
            mh = ctx.mapped_hess(elem)
            nloc = ctx.na if isinstance(f, fe.TrialField) else ctx.nt
            arr = np.zeros((ctx.C, nloc) + f.shape + (2, 2))
            arr[:, sl] = mh
            return arr[:, None] if isinstance(f, fe.TrialField) else arr[:, :, None]
        mh = ctx.mapped_hess(f.field.space.element)
        loc = ctx.coeff_locals[id(f.field)]
        out = np.einsum("cl,cl...->c...", loc, mh)
        return out[:, None, None]
    if isinstance(e, fe.SpatialCoordinate):
        return np.eye(2).reshape(1, 1, 1, 2, 2)
    if isinstance(e, (fe.ScalarConstant, fe.ConstantTensor, fe.FacetNormal, fe.CellSize)):
        return np.zeros((1, 1, 1) + e.shape + (2,))
    if isinstance(e, fe.Sum):
        return _evg(e.a, ctx, memo) + _evg(e.b, ctx, memo)
    if isinstance(e, fe.Negate):
        return -_evg(e.a, ctx, memo)
    if isinstance(e, fe.Transpose):
        return np.swapaxes(_evg(e.a, ctx, memo), -3, -2)
    if isinstance(e, fe.Product):
        s, t = (e.a, e.b) if e.a.shape == () else (e.b, e.a)
        sv = _ev(s, ctx, memo)
        tv = _ev(t, ctx, memo)
        sg = _evg(s, ctx, memo)
        tg = _evg(t, ctx, memo)
        return _pad(sv, len(t.shape) + 1) * tg + tv[..., None] * _pad(sg, len(t.shape))
    if isinstance(e, fe.Quotient):
        av, bv = _ev(e.a, ctx, memo), _ev(e.b, ctx, memo)
        ag, bg = _evg(e.a, ctx, memo), _evg(e.b, ctx, memo)
        rank = len(e.a.shape)
        b1 = _pad(bv, rank + 1)
        return ag / b1 - av[..., None] * _pad(bg, rank) / (b1 * b1)
    if isinstance(e, fe.Exp):
        return np.exp(_ev(e.a, ctx, memo))[..., None] * _evg(e.a, ctx, memo)
    if isinstance(e, fe.Sqrt):
        return _evg(e.a, ctx, memo) / (2.0 * np.sqrt(_ev(e.a, ctx, memo)))[..., None]
    if isinstance(e, fe.Power):
        av, bv = _ev(e.a, ctx, memo), _ev(e.b, ctx, memo)
        return (bv * np.power(av, bv - 1.0))[..., None] * _evg(e.a, ctx, memo)
    if isinstance(e, fe.Abs):
        return np.sign(_ev(e.a, ctx, memo))[..., None] * _evg(e.a, ctx, memo)
    if isinstance(e, fe.Sign):
        return np.zeros((1, 1, 1, 2))
    raise NotImplementedError(
        f"spatial gradient of {type(e).__name__} is not supported")


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _gather_coefficients(integrand, ctx, cells=None):
    for node in fe.collect_nodes(integrand, fe.Coefficient):
        field = node.field
        if id(field) in ctx.coeff_locals:
            continue
        dofmap = field.space.dofmap
        if cells is not None:
            dofmap = dofmap[cells]
        ctx.coeff_locals[id(field)] = field.values[dofmap]
        ctx.tabs.setdefault(field.space.element, None)


def _fill_tabs(ctx, points):
    for elem in list(ctx.tabs):
        ctx.tabs[elem] = _tabulate(elem, points)


def _mesh_of(form, test_space, trial_space):
    for space in (test_space, trial_space):
        if space is not None:
            return space.mesh
    for integrand, _ in form.integrals:
        nodes = fe.collect_nodes(integrand, fe.Coefficient)
        if nodes:
            return nodes[0].field.space.mesh
    raise AssemblyError("cannot infer the mesh from a form with no fields")


def assemble(form, test_space=None, trial_space=None, quadrature_degree=None):
    """Assemble a form into a CSR matrix (arity 2), vector (1), or float (0)."""
    if not isinstance(form, fe.Form):
        raise AssemblyError("assemble expects a Form (integrand * dx or * ds)")
    found_test = _find_argument_space(form, fe.TestField)
    found_trial = _find_argument_space(form, fe.TrialField)

    if form.is_empty():
        if test_space is not None and trial_space is not None:
            return sp.csr_matrix((test_space.ndofs, trial_space.ndofs))
        if test_space is not None:
            return np.zeros(test_space.ndofs)
        if trial_space is None:
            return 0.0
        raise AssemblyError("cannot size an empty form without spaces")

    test_space, trial_space = found_test, found_trial
    arity = (1 if test_space is not None else 0) + (1 if trial_space is not None else 0)
    if trial_space is not None and test_space is None:
        raise AssemblyError("bilinear form needs a test function")

    mesh = _mesh_of(form, test_space, trial_space)
    _, invJ, detJ, hsize = mesh_geometry(mesh)
    nt = test_space.nlocal if test_space is not None else 1
    na = trial_space.nlocal if trial_space is not None else 1

    if arity == 2:
        out = sp.csr_matrix((test_space.ndofs, trial_space.ndofs))
    elif arity == 1:
        out = np.zeros(test_space.ndofs)
    else:
        out = 0.0

    for integrand, measure in form.integrals:
        deg = _integral_degree(integrand, test_space, trial_space, quadrature_degree)
        if measure.kind == "cell":
            contrib = _assemble_cell(integrand, mesh, invJ, detJ, hsize,
                                     test_space, trial_space, trial_space, nt, na, deg)
        else:
            contrib = _assemble_facet(integrand, mesh, invJ, hsize, measure.marker,
                                      test_space, trial_space, trial_space, nt, na, deg)
        out = out + contrib

    if arity == 2:
        out.sum_duplicates()
        out.sort_indices()
    return out


def _assemble_cell(integrand, mesh, invJ, detJ, hsize,
                   test_space, trial_space, has_trial, nt, na, degree):
    rule = cell_rule(degree)
    nc = mesh.num_cells
    p = mesh.vertices[mesh.cells]
    coords = (p[:, None, 0, :]
              + np.einsum("qd,cdj->cqj", rule.points,
                          np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=1)))
    ctx = _Context(nc, nt, na, invJ, hsize, coords)
    if test_space is not None:
        for s in (test_space.subspaces if isinstance(test_space, MixedSpace) else [test_space]):
            ctx.tabs.setdefault(s.element, None)
    if has_trial is not None:
        for s in (trial_space.subspaces if isinstance(trial_space, MixedSpace) else [trial_space]):
            ctx.tabs.setdefault(s.element, None)
    _gather_coefficients(integrand, ctx)
    _fill_tabs(ctx, rule.points)

    acc = None
    for q in range(len(rule.weights)):
        ctx.set_qp(q)
        val = _ev(integrand, ctx, {})
        scale = rule.weights[q] * detJ
        term = scale[:, None, None] * val
        acc = term if acc is None else acc + term
    return _scatter(acc, mesh, test_space, trial_space, has_trial, nt, na, cells=None)


def _assemble_facet(integrand, mesh, invJ, hsize, marker,
                    test_space, trial_space, has_trial, nt, na, degree):
    t1d, w1d = facet_rule(degree)
    fc = mesh.boundary_facet_cells()
    if marker is None:
        rows = np.arange(len(mesh.facets))
    else:
        rows = np.nonzero(mesh.facets[:, 2] == marker)[0]
    if len(rows) == 0:
        log.warning("facet integral over marker %s matches no facets", marker)

    total = None
    refv = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
    for k in range(3):
        batch = rows[fc[rows, 1] == k]
        if len(batch) == 0:
            continue
        cells = fc[batch, 0]
        a, b = (k + 1) % 3, (k + 2) % 3
        ra, rb = refv[a], refv[b]
        pts = ra + np.outer(t1d, rb - ra)  # (nq, 2) in the reference cell

        va = mesh.vertices[mesh.cells[cells, a]]
        vb = mesh.vertices[mesh.cells[cells, b]]
        edge = vb - va
        length = np.linalg.norm(edge, axis=1)
        normal = np.stack([edge[:, 1], -edge[:, 0]], axis=1) / length[:, None]
        centroid = mesh.vertices[mesh.cells[cells]].mean(axis=1)
        mid = 0.5 * (va + vb)
        flip = np.einsum("fj,fj->f", normal, mid - centroid) < 0
        normal[flip] *= -1.0

        coords = va[:, None, :] + t1d[None, :, None] * edge[:, None, :]
        ctx = _Context(len(batch), nt, na, invJ[cells], hsize[cells], coords, normal)
        if test_space is not None:
            for s in (test_space.subspaces if isinstance(test_space, MixedSpace) else [test_space]):
                ctx.tabs.setdefault(s.element, None)
        if has_trial is not None:
            for s in (trial_space.subspaces if isinstance(trial_space, MixedSpace) else [trial_space]):
                ctx.tabs.setdefault(s.element, None)
        _gather_coefficients(integrand, ctx, cells=cells)
        _fill_tabs(ctx, pts)

        acc = None
        for q in range(len(w1d)):
            ctx.set_qp(q)
            val = _ev(integrand, ctx, {})
            term = (w1d[q] * length)[:, None, None] * val
            acc = term if acc is None else acc + term
        part = _scatter(acc, mesh, test_space, trial_space, has_trial, nt, na, cells=cells)
        total = part if total is None else total + part
    if total is None:
        if has_trial is not None:
            return sp.csr_matrix((test_space.ndofs, trial_space.ndofs))
        return np.zeros(test_space.ndofs) if test_space is not None else 0.0
    return total


def _scatter(acc, mesh, test_space, trial_space, has_trial, nt, na, cells):
    if acc.ndim != 3:
        raise AssemblyError("integrand did not evaluate to a scalar")
    if test_space is None:
        return float(acc.sum())

    tmap = _space_dofmap(test_space)
    if cells is not None:
        tmap = tmap[cells]
    nbatch = tmap.shape[0]
    acc = np.broadcast_to(acc, (nbatch, nt, na))

    if has_trial is None:
        vec = np.zeros(test_space.ndofs)
        np.add.at(vec, tmap.ravel(), acc[:, :, 0].ravel())
        return vec

    amap = _space_dofmap(trial_space)
    if cells is not None:
        amap = amap[cells]
    rows = np.broadcast_to(tmap[:, :, None], (nbatch, nt, na))
    cols = np.broadcast_to(amap[:, None, :], (nbatch, nt, na))
    mat = sp.coo_matrix((acc.ravel(), (rows.ravel(), cols.ravel())),
                        shape=(test_space.ndofs, trial_space.ndofs))
    return mat.tocsr()


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------

class DirichletCondition:
    """Fix dofs on marked facets to a constant or a coordinate formula.

    For mixed spaces pass the block index `sub`; for vector-valued
    (sub)spaces an optional `component` restricts to one component.
    """

    def __init__(self, space, marker, value, sub=None, component=None):
        self.space = space
        self.marker = marker
        self.value = value
        self.sub = sub
        self.component = component

    def dofs_values(self):
        space, offset = self.space, 0
        if isinstance(space, MixedSpace):
            if self.sub is None:
                raise ConstraintError("Dirichlet condition on a mixed space needs sub")
            offset = int(space.offsets[self.sub])
            space = space.sub(self.sub)
        sd = space.boundary_scalar_dofs(self.marker)
        if len(sd) == 0:
            log.warning("Dirichlet marker %s matches no dofs", self.marker)
            return np.empty(0, dtype=np.int64), np.empty(0)
        ncomp = space.element.ncomp
        coords = space.scalar_dof_coords[sd]
        comps = [self.component] if self.component is not None else list(range(ncomp))
        dofs, values = [], []
        for c in comps:
            dofs.append(ncomp * sd + c)
            if callable(self.value):
                vals = np.array([np.atleast_1d(self.value(x, y)) for x, y in coords])
                values.append(vals[:, 0] if vals.shape[1] == 1 else vals[:, c])
            else:
                v = np.atleast_1d(np.asarray(self.value, dtype=float))
                values.append(np.full(len(sd), v[0] if v.size == 1 else v[c]))
        return np.concatenate(dofs) + offset, np.concatenate(values)


class PinnedDof:
    """Constrain one explicit dof (nullspace removal)."""

    def __init__(self, dof: int, value: float = 0.0):
        self.dof = int(dof)
        self.value = float(value)

    def dofs_values(self):
        return np.array([self.dof], dtype=np.int64), np.array([self.value])


class PeriodicCondition:
    """Identify slave dofs with master dofs from a periodic vertex map."""

    def __init__(self, space, periodic_map, inlet_marker, outlet_marker):
        self.space = space
        self.map = periodic_map
        self.inlet_marker = inlet_marker
        self.outlet_marker = outlet_marker
        self._pairs = None

    def dof_pairs(self):
        """(masters, slaves) global dof arrays."""
        if self._pairs is not None:
            return self._pairs
        space = self.space
        blocks = (list(zip(space.subspaces, space.offsets[:-1]))
                  if isinstance(space, MixedSpace) else [(space, 0)])
        translation = self.map.translation
        masters, slaves = [], []
        for sub, offset in blocks:
            mi = sub.boundary_scalar_dofs(self.inlet_marker)
            mo = sub.boundary_scalar_dofs(self.outlet_marker)
            if len(mi) != len(mo):
                raise ConstraintError("periodic boundary dof counts differ")
            ci = sub.scalar_dof_coords[mi]
            co = sub.scalar_dof_coords[mo]
            oi = np.lexsort((ci[:, 0], ci[:, 1]))
            oo = np.lexsort((co[:, 0], co[:, 1]))
            mi, mo, ci, co = mi[oi], mo[oo], ci[oi], co[oo]
            extent = max(np.ptp(sub.mesh.vertices, axis=0).max(), 1.0)
            if np.abs(co - ci - translation).max() > 1e-9 * extent:
                raise ConstraintError("periodic dof coordinates do not match")
            ncomp = sub.element.ncomp
            for c in range(ncomp):
                masters.append(ncomp * mi + c + offset)
                slaves.append(ncomp * mo + c + offset)
        self._pairs = (np.concatenate(masters), np.concatenate(slaves))
        return self._pairs


def apply_periodic(A, b, condition: PeriodicCondition, x=None, newton=False):
    """Fold slave rows/columns into masters; slave rows become x_s - x_m = 0."""
    masters, slaves = condition.dof_pairs()
    if A is not None:
        n = A.shape[0]
        remap = np.arange(n)
        remap[slaves] = masters
        if np.any(remap[masters] != masters):
            raise ConstraintError("periodic map chains masters into slaves")
        coo = A.tocoo()
        rows = remap[coo.row]
        cols = remap[coo.col]
        extra_rows = np.concatenate([slaves, slaves])
        extra_cols = np.concatenate([slaves, masters])
        extra_data = np.concatenate([np.ones(len(slaves)), -np.ones(len(slaves))])
        A = sp.coo_matrix((np.concatenate([coo.data, extra_data]),
                           (np.concatenate([rows, extra_rows]),
                            np.concatenate([cols, extra_cols]))), shape=A.shape).tocsr()
    if b is not None:
        np.add.at(b, masters, b[slaves])
        if newton and x is not None:
            b[slaves] = x[masters] - x[slaves]
        else:
            b[slaves] = 0.0
    return A, b


def _zero_rows_unit_diag(A, dofs):
    A = A.tocsr()
    for r in dofs:
        A.data[A.indptr[r]:A.indptr[r + 1]] = 0.0
    diag = sp.coo_matrix((np.ones(len(dofs)), (dofs, dofs)), shape=A.shape)
    A = (A + diag.tocsr()).tocsr()
    return A


def apply_dirichlet(A, b, bcs, symmetric=False):
    """Row-only (default) or symmetric elimination of Dirichlet dofs."""
    bclist = bcs if isinstance(bcs, (list, tuple)) else [bcs]
    dofs = np.empty(0, dtype=np.int64)
    vals = np.empty(0)
    for bc in bclist:
        d, v = bc.dofs_values()
        dofs, vals = np.concatenate([dofs, d]), np.concatenate([vals, v])
    if len(dofs) == 0:
        return A, b
    dofs, keep = np.unique(dofs, return_index=True)
    vals = vals[keep]

    if symmetric:
        if A is None:
            raise ConstraintError("symmetric elimination needs the matrix")
        xfix = np.zeros(A.shape[1])
        xfix[dofs] = vals
        if b is not None:
            b -= A @ xfix
        keep_diag = np.ones(A.shape[0])
        keep_diag[dofs] = 0.0
        Dk = sp.diags(keep_diag)
        Dc = sp.coo_matrix((np.ones(len(dofs)), (dofs, dofs)), shape=A.shape)
        A = (Dk @ A @ Dk + Dc).tocsr()
    elif A is not None:
        A = _zero_rows_unit_diag(A, dofs)
    if b is not None:
        b[dofs] = vals
    return A, b


def apply_dirichlet_newton(A, b, x, bcs):
    """Newton variant: rhs becomes g - x so the correction restores the value."""
    bclist = bcs if isinstance(bcs, (list, tuple)) else [bcs]
    dofs = np.empty(0, dtype=np.int64)
    vals = np.empty(0)
    for bc in bclist:
        d, v = bc.dofs_values()
        dofs, vals = np.concatenate([dofs, d]), np.concatenate([vals, v])
    if len(dofs) == 0:
        return A, b
    dofs, keep = np.unique(dofs, return_index=True)
    vals = vals[keep]
    if A is not None:
        A = _zero_rows_unit_diag(A, dofs)
    if b is not None:
        b[dofs] = vals - x[dofs]
    return A, b


def apply_constraints(A, b, bcs, x=None, newton=False, symmetric=False):
    """Apply periodic folds first, then Dirichlet/pinned rows."""
    periodic = [bc for bc in bcs if isinstance(bc, PeriodicCondition)]
    dirichlet = [bc for bc in bcs if not isinstance(bc, PeriodicCondition)]
    for cond in periodic:
        A, b = apply_periodic(A, b, cond, x=x, newton=newton)
    if dirichlet:
        if newton:
            A, b = apply_dirichlet_newton(A, b, x, dirichlet)
        else:
            A, b = apply_dirichlet(A, b, dirichlet, symmetric=symmetric)
    return A, b


# ---------------------------------------------------------------------------
# L2 projection
# ---------------------------------------------------------------------------

class Projector:
    """L2 projection onto a space with a cached mass-matrix factorization.

    Constraints (periodic folds, wall-value Dirichlet rows) are baked into
    the factored matrix; right-hand sides get the matching treatment per
    solve.  Optional under-relaxation blends the projection into the
    previous field values.
    """

    def __init__(self, space, bcs=(), quadrature_degree=None):
        from . import forms as _fe
        from .linalg import DirectSolver

        self.space = space
        self.bcs = list(bcs)
        self.quadrature_degree = quadrature_degree
        self.test = _fe.TestField(space)
        trial = _fe.TrialField(space)
        M = assemble(_fe.Inner(trial, self.test) * _fe.dx,
                     quadrature_degree=quadrature_degree)
        M, _ = apply_constraints(M, None, self.bcs)
        self._solver = DirectSolver()
        self._solver.factor(M)

    def project_form(self, rhs_form, out: FieldFunction, relax: float | None = None):
        b = assemble(rhs_form, test_space=self.space,
                     quadrature_degree=self.quadrature_degree)
        _, b = apply_constraints(None, b, self.bcs)
        x = self._solver.solve(None, b, reuse=True)
        if relax is None or relax >= 1.0:
            out.values[:] = x
        else:
            out.values *= (1.0 - relax)
            out.values += relax * x
        return out

    def project(self, expr, out: FieldFunction, relax: float | None = None):
        from . import forms as _fe
        rhs = _fe.Inner(_fe.as_expr(expr), self.test) * _fe.dx
        return self.project_form(rhs, out, relax=relax)


# ---------------------------------------------------------------------------
# field evaluation helpers (error norms, diagnostics)
# ---------------------------------------------------------------------------

def eval_on_cells(field: FieldFunction, ref_points):
    """Field values at reference points in every cell: (nc, nq, *shape)."""
    space = field.space
    vals, _, _ = _tabulate(space.element, ref_points)
    loc = field.values[space.dofmap]
    return np.einsum("cl,ql...->cq...", loc, vals)


def eval_grad_on_cells(field: FieldFunction, ref_points):
    """Field gradients at reference points in every cell."""
    space = field.space
    _, grads, _ = _tabulate(space.element, ref_points)
    _, invJ, _, _ = mesh_geometry(space.mesh)
    loc = field.values[space.dofmap]
    ref = np.einsum("cl,ql...d->cq...d", loc, grads)
    return np.einsum("cq...d,cdj->cq...j", ref, invJ)


def l2_error(field: FieldFunction, exact, degree: int = 6) -> float:
    """L2 norm of (field - exact) with exact a callable of (x, y)."""
    mesh = field.space.mesh
    rule = cell_rule(degree)
    _, _, detJ, _ = mesh_geometry(mesh)
    p = mesh.vertices[mesh.cells]
    coords = (p[:, None, 0, :]
              + np.einsum("qd,cdj->cqj", rule.points,
                          np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=1)))
    vals = eval_on_cells(field, rule.points)
    ex = np.array([[np.atleast_1d(exact(x, y)) for (x, y) in row] for row in coords])
    diff = vals.reshape(ex.shape) - ex
    err2 = (diff ** 2).sum(axis=-1) if diff.ndim == 3 else diff ** 2
    return float(np.sqrt(np.einsum("cq,q,c->", err2, rule.weights, detJ)))
