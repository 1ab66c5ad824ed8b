"""Expression trees for variational forms.

A FormExpr is an immutable tree over trial/test fields, coefficients, and
algebraic/differential operators.  Multiplying a scalar integrand by a
measure (dx or ds) produces a Form, a list of integrals.  The module also
provides the three core form operations: splitting into bilinear/linear
parts (lhs_rhs), substituting a coefficient for the trial function
(action), and exact symbolic Gateaux differentiation for Newton Jacobians
(gateaux_derivative), plus the string-formula parser used by derived
quantities (grammar in docs/formats.md).
"""

from __future__ import annotations

import ast

import numpy as np

from .errors import FormulaError, NonlinearityError, ShapeError
from .spaces import FieldFunction, FunctionSpace, MixedSpace


# ---------------------------------------------------------------------------
# expression nodes
# ---------------------------------------------------------------------------

class FormExpr:
    """Base class: every node has a value shape and a children tuple."""

    shape: tuple = ()
    children: tuple = ()

    # arithmetic sugar ---------------------------------------------------
    def __add__(self, other):
        return _sum(self, as_expr(other))

    def __radd__(self, other):
        return _sum(as_expr(other), self)

    def __sub__(self, other):
        return _sum(self, _negate(as_expr(other)))

    def __rsub__(self, other):
        return _sum(as_expr(other), _negate(self))

    def __mul__(self, other):
        if isinstance(other, Measure):
            return other.__rmul__(self)
        return _product(self, as_expr(other))

    def __rmul__(self, other):
        return _product(as_expr(other), self)

    def __truediv__(self, other):
        return _quotient(self, as_expr(other))

    def __rtruediv__(self, other):
        return _quotient(as_expr(other), self)

    def __pow__(self, other):
        return Power(self, as_expr(other))

    def __neg__(self):
        return _negate(self)

    def __abs__(self):
        return Abs(self)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return _render(self)


def as_expr(x) -> FormExpr:
    if isinstance(x, FormExpr):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return ScalarConstant(float(x))
    if isinstance(x, FieldFunction):
        return Coefficient(x)
    if isinstance(x, np.ndarray):
        return ConstantTensor(x)
    raise TypeError(f"cannot use {type(x).__name__} in a form expression")


class ScalarConstant(FormExpr):
    def __init__(self, value: float):
        self.value = float(value)


class ConstantTensor(FormExpr):
    """Constant vector or tensor (also covers the identity)."""

    def __init__(self, array):
        self.array = np.asarray(array, dtype=float)
        self.array.flags.writeable = False
        self.shape = self.array.shape


def Identity(dim: int = 2) -> ConstantTensor:
    return ConstantTensor(np.eye(dim))


class SpatialCoordinate(FormExpr):
    shape = (2,)


class FacetNormal(FormExpr):
    shape = (2,)


class CellSize(FormExpr):
    """Per-cell size measure h (the longest edge)."""


class _Argument(FormExpr):
    def __init__(self, space, sub: int | None = None, name: str = ""):
        if isinstance(space, MixedSpace):
            if sub is None:
                raise ValueError("arguments on a mixed space need a subspace index")
            self.shape = space.sub(sub).element.value_shape
        else:
            if sub is not None:
                raise ValueError("subspace index only applies to mixed spaces")
            self.shape = space.element.value_shape
        self.space = space
        self.sub = sub
        self.name = name

    @property
    def root_space(self):
        return self.space


class TrialField(_Argument):
    pass


class TestField(_Argument):
    pass


class Coefficient(FormExpr):
    def __init__(self, field: FieldFunction):
        if isinstance(field.space, MixedSpace):
            raise ValueError("split a mixed field before using it as a coefficient")
        self.field = field
        self.shape = field.space.element.value_shape

    @property
    def name(self):
        return self.field.name


class _Unary(FormExpr):
    def __init__(self, a: FormExpr):
        self.a = a
        self.children = (a,)


class Grad(_Unary):
    def __init__(self, a):
        if len(a.shape) > 1:
            raise ShapeError("grad applies to scalar or vector expressions")
        super().__init__(a)
        self.shape = a.shape + (2,)


class Div(_Unary):
    def __init__(self, a):
        if len(a.shape) not in (1, 2):
            raise ShapeError("div applies to vector or tensor expressions")
        super().__init__(a)
        self.shape = a.shape[:-1]


class Transpose(_Unary):
    def __init__(self, a):
        if len(a.shape) != 2:
            raise ShapeError("transpose applies to rank-2 expressions")
        super().__init__(a)
        self.shape = (a.shape[1], a.shape[0])


class Negate(_Unary):
    def __init__(self, a):
        super().__init__(a)
        self.shape = a.shape


class _ScalarUnary(_Unary):
    def __init__(self, a):
        if a.shape != ():
            raise ShapeError(f"{type(self).__name__.lower()} applies to scalars")
        super().__init__(a)


class Exp(_ScalarUnary):
    pass


class Sqrt(_ScalarUnary):
    pass


class Abs(_ScalarUnary):
    pass


class Sign(_ScalarUnary):
    """Derivative of Abs; sign(0) = 0."""


class _Binary(FormExpr):
    def __init__(self, a: FormExpr, b: FormExpr):
        self.a = a
        self.b = b
        self.children = (a, b)


class Sum(_Binary):
    def __init__(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
        super().__init__(a, b)
        self.shape = a.shape


class Product(_Binary):
    """Elementwise scaling; at least one operand must be scalar."""

    def __init__(self, a, b):
        if a.shape != () and b.shape != ():
            raise ShapeError("product needs a scalar operand (use inner or dot)")
        super().__init__(a, b)
        self.shape = a.shape if a.shape != () else b.shape


class Quotient(_Binary):
    def __init__(self, a, b):
        if b.shape != ():
            raise ShapeError("denominator must be scalar")
        super().__init__(a, b)
        self.shape = a.shape


class Power(_Binary):
    def __init__(self, a, b):
        if a.shape != () or b.shape != ():
            raise ShapeError("power applies to scalars")
        super().__init__(a, b)


class Inner(_Binary):
    """Full contraction of two equally shaped expressions."""

    def __init__(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"inner needs equal shapes, got {a.shape} and {b.shape}")
        super().__init__(a, b)


class Dot(_Binary):
    """Contraction of the last axis of a with the first axis of b."""

    def __init__(self, a, b):
        if not a.shape or not b.shape:
            raise ShapeError("dot needs non-scalar operands")
        if a.shape[-1] != b.shape[0]:
            raise ShapeError(f"dot contraction mismatch: {a.shape} . {b.shape}")
        super().__init__(a, b)
        self.shape = a.shape[:-1] + b.shape[1:]


# constructors with zero folding --------------------------------------------

def is_zero(e: FormExpr) -> bool:
    if isinstance(e, ScalarConstant):
        return e.value == 0.0
    if isinstance(e, ConstantTensor):
        return not e.array.any()
    return False


def zero_expr(shape: tuple) -> FormExpr:
    return ScalarConstant(0.0) if shape == () else ConstantTensor(np.zeros(shape))


def _sum(a, b):
    if is_zero(a):
        return b
    if is_zero(b):
        return a
    return Sum(a, b)


def _product(a, b):
    if is_zero(a) or is_zero(b):
        Product(a, b)  # still validate shapes
        return zero_expr(a.shape if a.shape != () else b.shape)
    if isinstance(a, ScalarConstant) and a.value == 1.0:
        return b
    if isinstance(b, ScalarConstant) and b.value == 1.0:
        return a
    return Product(a, b)


def _quotient(a, b):
    if is_zero(a):
        Quotient(a, b)
        return zero_expr(a.shape)
    return Quotient(a, b)


def _negate(a):
    if is_zero(a):
        return a
    if isinstance(a, Negate):
        return a.a
    return Negate(a)


# public operator functions ---------------------------------------------------

def grad(e) -> FormExpr:
    return Grad(as_expr(e))


def div(e) -> FormExpr:
    return Div(as_expr(e))


def transpose(e) -> FormExpr:
    return Transpose(as_expr(e))


def inner(a, b) -> FormExpr:
    a, b = as_expr(a), as_expr(b)
    if is_zero(a) or is_zero(b):
        Inner(a, b)
        return ScalarConstant(0.0)
    return Inner(a, b)


def dot(a, b) -> FormExpr:
    a, b = as_expr(a), as_expr(b)
    if is_zero(a) or is_zero(b):
        return zero_expr(Dot(a, b).shape)
    return Dot(a, b)


def exp(e) -> FormExpr:
    return Exp(as_expr(e))


def sqrt(e) -> FormExpr:
    return Sqrt(as_expr(e))


def sign(e) -> FormExpr:
    return Sign(as_expr(e))


# ---------------------------------------------------------------------------
# measures and forms
# ---------------------------------------------------------------------------

class Measure:
    def __init__(self, kind: str, marker: int | None = None):
        self.kind = kind
        self.marker = marker

    def __call__(self, marker=None):
        return Measure(self.kind, marker)

    def __rmul__(self, integrand):
        integrand = as_expr(integrand)
        if integrand.shape != ():
            raise ShapeError("integrands must be scalar-valued")
        if is_zero(integrand):
            return Form(())
        return Form(((integrand, self),))

    def __repr__(self):
        tag = "dx" if self.kind == "cell" else "ds"
        return tag if self.marker is None else f"{tag}({self.marker})"


dx = Measure("cell")
ds = Measure("exterior_facet")


class Form:
    """A sum of integrals (integrand, measure)."""

    def __init__(self, integrals):
        self.integrals = tuple(integrals)

    def __add__(self, other):
        if not isinstance(other, Form):
            raise TypeError("can only add forms to forms")
        return Form(self.integrals + other.integrals)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return Form(tuple((_negate(e), m) for e, m in self.integrals))

    def is_empty(self) -> bool:
        return not self.integrals

    @property
    def arity(self) -> int:
        roles = 0
        if any(_contains(e, TrialField) for e, _ in self.integrals):
            roles += 1
        if any(_contains(e, TestField) for e, _ in self.integrals):
            roles += 1
        return roles

    def __repr__(self):
        if not self.integrals:
            return "<empty form>"
        return " + ".join(f"({e!r})*{m!r}" for e, m in self.integrals)


# ---------------------------------------------------------------------------
# tree utilities
# ---------------------------------------------------------------------------

def _contains(expr, cls) -> bool:
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, cls):
            return True
        stack.extend(e.children)
    return False


def collect_nodes(form_or_expr, cls):
    """All nodes of a class in an expression or form (document order)."""
    exprs = ([form_or_expr] if isinstance(form_or_expr, FormExpr)
             else [e for e, _ in form_or_expr.integrals])
    out = []
    seen = set()
    stack = list(reversed(exprs))
    while stack:
        e = stack.pop()
        if id(e) in seen:
            continue
        seen.add(id(e))
        if isinstance(e, cls):
            out.append(e)
        stack.extend(reversed(e.children))
    return out


def _render(e) -> str:
    if isinstance(e, ScalarConstant):
        return f"{e.value:g}"
    if isinstance(e, ConstantTensor):
        return f"tensor{e.shape}"
    if isinstance(e, SpatialCoordinate):
        return "x"
    if isinstance(e, FacetNormal):
        return "n"
    if isinstance(e, CellSize):
        return "h"
    if isinstance(e, TrialField):
        return e.name or ("trial" if e.sub is None else f"trial[{e.sub}]")
    if isinstance(e, TestField):
        return e.name or ("test" if e.sub is None else f"test[{e.sub}]")
    if isinstance(e, Coefficient):
        return e.name or "w"
    if isinstance(e, Grad):
        return f"grad({_render(e.a)})"
    if isinstance(e, Div):
        return f"div({_render(e.a)})"
    if isinstance(e, Transpose):
        return f"{_render(e.a)}.T"
    if isinstance(e, Negate):
        return f"-({_render(e.a)})"
    if isinstance(e, (Exp, Sqrt, Abs, Sign)):
        return f"{type(e).__name__.lower()}({_render(e.a)})"
    if isinstance(e, Sum):
        return f"({_render(e.a)} + {_render(e.b)})"
    if isinstance(e, Product):
        return f"({_render(e.a)} * {_render(e.b)})"
    if isinstance(e, Quotient):
        return f"({_render(e.a)} / {_render(e.b)})"
    if isinstance(e, Power):
        return f"({_render(e.a)} ** {_render(e.b)})"
    if isinstance(e, Inner):
        return f"inner({_render(e.a)}, {_render(e.b)})"
    if isinstance(e, Dot):
        return f"dot({_render(e.a)}, {_render(e.b)})"
    return object.__repr__(e)


# ---------------------------------------------------------------------------
# lhs/rhs splitting
# ---------------------------------------------------------------------------

def expand_terms(expr) -> list:
    """Distribute products and linear operators over sums into a term list."""
    if isinstance(expr, Sum):
        return expand_terms(expr.a) + expand_terms(expr.b)
    if isinstance(expr, Negate):
        return [_negate(t) for t in expand_terms(expr.a)]
    if isinstance(expr, Product):
        return [_product(ta, tb)
                for ta in expand_terms(expr.a) for tb in expand_terms(expr.b)]
    if isinstance(expr, Quotient):
        return [_quotient(t, expr.b) for t in expand_terms(expr.a)]
    if isinstance(expr, Inner):
        return [inner(ta, tb)
                for ta in expand_terms(expr.a) for tb in expand_terms(expr.b)]
    if isinstance(expr, Dot):
        return [dot(ta, tb)
                for ta in expand_terms(expr.a) for tb in expand_terms(expr.b)]
    if isinstance(expr, Grad):
        return [Grad(t) for t in expand_terms(expr.a)]
    if isinstance(expr, Div):
        return [Div(t) for t in expand_terms(expr.a)]
    if isinstance(expr, Transpose):
        return [Transpose(t) for t in expand_terms(expr.a)]
    return [expr]


def _role_degree(term, cls) -> int:
    """Polynomial degree of a term in the trial (or test) role.

    Raises NonlinearityError when the role appears inside a nonlinear
    operation or with total degree above one.
    """
    if isinstance(term, cls):
        return 1
    if isinstance(term, (TrialField, TestField, Coefficient, ScalarConstant,
                         ConstantTensor, SpatialCoordinate, FacetNormal, CellSize)):
        return 0
    if isinstance(term, (Grad, Div, Transpose, Negate)):
        return _role_degree(term.a, cls)
    if isinstance(term, (Product, Inner, Dot)):
        return _role_degree(term.a, cls) + _role_degree(term.b, cls)
    if isinstance(term, Quotient):
        if _contains(term.b, cls):
            raise NonlinearityError(
                f"term has the {cls.__name__} in a denominator: {term!r}")
        return _role_degree(term.a, cls)
    if isinstance(term, (Exp, Sqrt, Abs, Sign, Power)):
        if _contains(term, cls):
            raise NonlinearityError(
                f"term is nonlinear in the {cls.__name__}: {term!r}")
        return 0
    if isinstance(term, Sum):  # unexpanded subtree; fall back to a bound
        return max(_role_degree(term.a, cls), _role_degree(term.b, cls))
    raise TypeError(f"unknown node {type(term).__name__}")


def lhs_rhs(form: Form):
    """Split F = a(u, v) - L(v): trial-carrying terms go to a, the rest to -L."""
    a_ints: dict = {}
    l_ints: dict = {}

    def push(bucket, term, measure):
        key = (measure.kind, measure.marker)
        prev, _ = bucket.get(key, (None, measure))
        bucket[key] = (term if prev is None else _sum(prev, term), measure)

    for integrand, measure in form.integrals:
        for term in expand_terms(integrand):
            if is_zero(term):
                continue
            deg = _role_degree(term, TrialField)
            if deg > 1:
                raise NonlinearityError(f"term is nonlinear in the trial function: {term!r}")
            if _role_degree(term, TestField) != 1:
                raise NonlinearityError(f"term is not linear in the test function: {term!r}")
            push(a_ints if deg == 1 else l_ints, term, measure)

    a = Form(tuple(a_ints.values()))
    L = Form(tuple((_negate(t), m) for t, m in l_ints.values()))
    return a, L


# ---------------------------------------------------------------------------
# action and Gateaux derivative
# ---------------------------------------------------------------------------

def _rewrite(expr, fn, memo):
    """Bottom-up rewrite; fn maps a node with rebuilt children to a node."""
    key = id(expr)
    out = memo.get(key)
    if out is not None:
        return out
    if expr.children:
        new_children = tuple(_rewrite(c, fn, memo) for c in expr.children)
        if any(n is not o for n, o in zip(new_children, expr.children)):
            expr = _rebuild(expr, new_children)
    out = fn(expr)
    memo[key] = out
    return out


def _rebuild(expr, children):
    cls = type(expr)
    if cls in (Grad, Div, Transpose, Negate, Exp, Sqrt, Abs, Sign):
        return cls(*children)
    if cls in (Sum, Product, Quotient, Power, Inner, Dot):
        return cls(*children)
    raise TypeError(f"cannot rebuild {cls.__name__}")


def action(form: Form, w: FieldFunction) -> Form:
    """Replace every trial field by the coefficient w (arity drops by one)."""
    views = w.split() if isinstance(w.space, MixedSpace) else None

    def fn(e):
        if isinstance(e, TrialField):
            if e.space is not w.space:
                raise ValueError("coefficient does not live on the trial space")
            return Coefficient(w if e.sub is None else views[e.sub])
        return e

    memo: dict = {}
    return Form(tuple((_rewrite(e, fn, memo), m) for e, m in form.integrals))


def gateaux_derivative(form: Form, w: FieldFunction, names=None) -> Form:
    """Exact directional derivative d/dtau F(w + tau*du) at tau = 0.

    The direction du becomes the trial function of the returned bilinear
    form.  Occurrences of w are recognized by identity with w itself or
    with its cached mixed sub-views.
    """
    if isinstance(w.space, MixedSpace):
        views = w.split()
        directions = {id(v): TrialField(w.space, sub=k,
                                        name=(names[k] if names else f"d{k}"))
                      for k, v in enumerate(views)}
    else:
        directions = {id(w): TrialField(w.space, name=(names[0] if names else "du"))}

    memo: dict = {}

    def diff(e):
        out = memo.get(id(e))
        if out is not None:
            return out
        out = _diff(e, directions, diff)
        memo[id(e)] = out
        return out

    integrals = []
    for integrand, measure in form.integrals:
        d = diff(integrand)
        if not is_zero(d):
            integrals.append((d, measure))
    return Form(tuple(integrals))


def _diff(e, directions, diff):
    if isinstance(e, Coefficient):
        direction = directions.get(id(e.field))
        if direction is not None:
            return direction
        return zero_expr(e.shape)
    if isinstance(e, (TrialField, TestField, ScalarConstant, ConstantTensor,
                      SpatialCoordinate, FacetNormal, CellSize)):
        return zero_expr(e.shape)
    if isinstance(e, Grad):
        return _grad_or_zero(diff(e.a), e.shape)
    if isinstance(e, Div):
        da = diff(e.a)
        return zero_expr(e.shape) if is_zero(da) else Div(da)
    if isinstance(e, Transpose):
        da = diff(e.a)
        return zero_expr(e.shape) if is_zero(da) else Transpose(da)
    if isinstance(e, Negate):
        return _negate(diff(e.a))
    if isinstance(e, Sum):
        return _sum(diff(e.a), diff(e.b))
    if isinstance(e, Product):
        return _sum(_product(diff(e.a), e.b), _product(e.a, diff(e.b)))
    if isinstance(e, Inner):
        return _sum(inner(diff(e.a), e.b), inner(e.a, diff(e.b)))
    if isinstance(e, Dot):
        return _sum(dot(diff(e.a), e.b), dot(e.a, diff(e.b)))
    if isinstance(e, Quotient):
        da, db = diff(e.a), diff(e.b)
        term1 = zero_expr(e.shape) if is_zero(da) else _quotient(da, e.b)
        term2 = (zero_expr(e.shape) if is_zero(db)
                 else _negate(_quotient(_product(db, e.a), Product(e.b, e.b))))
        return _sum(term1, term2)
    if isinstance(e, Power):
        if _contains(e.b, (TrialField, Coefficient)) and not is_zero(diff(e.b)):
            raise NotImplementedError("derivative of a variable exponent")
        da = diff(e.a)
        if is_zero(da):
            return ScalarConstant(0.0)
        return _product(_product(e.b, Power(e.a, _sum(e.b, ScalarConstant(-1.0)))), da)
    if isinstance(e, Exp):
        da = diff(e.a)
        return ScalarConstant(0.0) if is_zero(da) else _product(Exp(e.a), da)
    if isinstance(e, Sqrt):
        da = diff(e.a)
        if is_zero(da):
            return ScalarConstant(0.0)
        return _quotient(da, _product(ScalarConstant(2.0), Sqrt(e.a)))
    if isinstance(e, Abs):
        da = diff(e.a)
        return ScalarConstant(0.0) if is_zero(da) else _product(Sign(e.a), da)
    if isinstance(e, Sign):
        return ScalarConstant(0.0)  # subgradient convention, sign'(x) = 0
    raise TypeError(f"cannot differentiate node {type(e).__name__}")


def _grad_or_zero(da, shape):
    return zero_expr(shape) if is_zero(da) else Grad(da)


# ---------------------------------------------------------------------------
# string-formula parsing
# ---------------------------------------------------------------------------

_FORMULA_FUNCS = {
    "grad": grad, "div": div, "inner": inner, "dot": dot,
    "exp": exp, "sqrt": sqrt, "abs": lambda e: Abs(as_expr(e)),
    "transpose": transpose,
}

_ARRAY_FUNCS = {"exp": np.exp, "sqrt": np.sqrt, "abs": np.abs}

_BINOPS = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b,
           ast.Mult: lambda a, b: a * b, ast.Div: lambda a, b: a / b,
           ast.Pow: lambda a, b: a ** b}


def _parse(src: str, lookup, call_table, wrap):
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise FormulaError(f"cannot parse formula {src!r}: {exc}") from None

    def conv(node):
        if isinstance(node, ast.Expression):
            return conv(node.body)
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise FormulaError(f"literal {node.value!r} not allowed in formulas")
            return wrap(float(node.value))
        if isinstance(node, ast.Name):
            return lookup(node.id)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](conv(node.left), conv(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
            return -conv(node.operand)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.UAdd):
            return conv(node.operand)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise FormulaError(f"unsupported call in formula {src!r}")
            fname = node.func.id
            if fname not in call_table:
                raise FormulaError(f"unknown function '{fname}' in formula {src!r}")
            return call_table[fname](*[conv(a) for a in node.args])
        if isinstance(node, ast.Attribute) and node.attr == "T":
            return transpose(conv(node.value))
        raise FormulaError(f"unsupported syntax in formula {src!r}")

    return conv(tree)


def parse_formula(src: str, namespace: dict) -> FormExpr:
    """Parse a formula string into a FormExpr against a named namespace."""

    def lookup(name):
        if name not in namespace:
            raise FormulaError(f"formula references unbound name '{name}'")
        return as_expr(namespace[name])

    return _parse(src, lookup, _FORMULA_FUNCS, ScalarConstant)


def eval_formula_dofs(src: str, namespace: dict):
    """Apply a pointwise formula to dof arrays (compute-dofs mode).

    Derivative and contraction operators are rejected: they are not
    pointwise operations on dof values.
    """

    def lookup(name):
        if name not in namespace:
            raise FormulaError(f"formula references unbound name '{name}'")
        val = namespace[name]
        if isinstance(val, FieldFunction):
            return val.values
        if isinstance(val, FormExpr):
            if isinstance(val, ScalarConstant):
                return val.value
            if isinstance(val, Coefficient):
                return val.field.values
            raise FormulaError(
                f"name '{name}' is not a pointwise value (compute-dofs mode)")
        return val

    def bad(name):
        def _raise(*_):
            raise FormulaError(
                f"'{name}' requires derivatives; use project mode instead")
        return _raise

    table = dict(_ARRAY_FUNCS)
    for name in ("grad", "div", "inner", "dot", "transpose"):
        table[name] = bad(name)
    return _parse(src, lookup, table, float)
