"""The Scheme abstraction: one variational problem's forms, assembled
operators, a solution view, and Picard/Newton stepping with under-relaxation.

A scheme is constructed from a form method following the solver-namespace
convention: for every unknown name `u` the namespace binds `u` to the trial
field and `u_` to the current-iterate coefficient.  Picard splits the form
with lhs_rhs; Newton substitutes trial fields for the lagged coefficients,
applies the form as an action on the current state, and differentiates.
"""

from __future__ import annotations

import inspect
import logging
from dataclasses import dataclass

import numpy as np

from . import linalg
from .assembly import apply_constraints, assemble, form_degree
from .errors import NonlinearityError
from .forms import Form, action, gateaux_derivative, lhs_rhs
from .spaces import FieldFunction

log = logging.getLogger("rans_lab.schemes")

DEFAULT_PRM = {
    "iteration_type": "Picard",
    "omega": 1.0,
    "reassemble_lhs": True,
    "reassemble_rhs": True,
    "linear_solver": "direct",
    "gmres_rtol": 1e-10,
    "gmres_maxit": 500,
    "quadrature_degree": None,
    "echo": False,
}


@dataclass
class IterInfo:
    error: tuple  # (linear-system residual, correction norm)
    iter: int


def _call_form(form_method, namespace):
    """Call a form method with only the arguments it declares."""
    sig = inspect.signature(form_method)
    has_var_kw = any(p.kind is inspect.Parameter.VAR_KEYWORD
                     for p in sig.parameters.values())
    if has_var_kw:
        return form_method(**namespace)
    kwargs = {k: namespace[k] for k in sig.parameters if k in namespace}
    return form_method(**kwargs)


class Scheme:
    """Holds (a, L), the assembled system, and the solution-vector view."""

    def __init__(self, name, form_method, namespace, unknown: FieldFunction,
                 unknown_names, bcs=(), prm=None, update_hook=None):
        self.name = name
        self.form_method = form_method
        self.namespace = namespace
        self.unknown = unknown
        self.unknown_names = list(unknown_names)
        self.bcs = list(bcs)
        self.prm = dict(DEFAULT_PRM)
        if prm:
            self.prm.update(prm)
        self.update_hook = update_hook

        self.x = unknown.values            # aliases the owning solver's storage
        self.work = np.zeros_like(self.x)
        self.A = None
        self.b = None
        self.A_raw = None
        self.b_raw = None
        self.a_form: Form | None = None
        self.L_form: Form | None = None
        self.info = IterInfo((0.0, 0.0), 0)
        self._solver = linalg.DirectSolver()
        self.define()

    # form construction ---------------------------------------------------
    def define(self):
        itype = self.prm["iteration_type"]
        ns = dict(self.namespace)
        if itype == "Picard":
            F = _call_form(self.form_method, ns)
            self.a_form, self.L_form = lhs_rhs(F)
            if self.a_form.is_empty():
                raise NonlinearityError(
                    f"scheme '{self.name}': no trial-function terms; "
                    "Picard needs an implicit part")
        elif itype == "Newton":
            for nm in self.unknown_names:
                ns[nm + "_"] = ns[nm]
            F = _call_form(self.form_method, ns)
            F_res = action(F, self.unknown)
            J = gateaux_derivative(F_res, self.unknown, names=self.unknown_names)
            self.a_form, self.L_form = J, -F_res
        else:
            raise ValueError(f"unknown iteration type '{itype}'")
        if self.prm["quadrature_degree"] is None:
            space = self.unknown.space
            self.prm["quadrature_degree"] = max(
                form_degree(self.a_form, space, space),
                form_degree(self.L_form, space))
        self.A = None
        self.b = None
        self._solver.invalidate()

    # linear algebra ------------------------------------------------------
    def _assemble_lhs(self):
        space = self.unknown.space
        A = assemble(self.a_form, test_space=space, trial_space=space,
                     quadrature_degree=self.prm["quadrature_degree"])
        return A

    def _assemble_rhs(self):
        space = self.unknown.space
        return assemble(self.L_form, test_space=space,
                        quadrature_degree=self.prm["quadrature_degree"])

    def _solve_linear(self, A, b, x0, reuse_factor):
        if self.prm["linear_solver"] == "direct":
            return self._solver.solve(A, b, reuse=reuse_factor)
        x, iters, ok = linalg.gmres(A, x0, b, preconditioner="ilu",
                                    rtol=self.prm["gmres_rtol"],
                                    maxit=self.prm["gmres_maxit"])
        if not ok:
            log.warning("scheme '%s': GMRES did not converge in %d iterations",
                        self.name, iters)
        return x

    # steps ----------------------------------------------------------------
    def solve_picard_step(self, assemble_A: bool = True, assemble_b: bool = True):
        """One relaxed Picard step; returns (residual, correction norm)."""
        if self.prm["iteration_type"] != "Picard":
            raise ValueError("scheme was not built for Picard iteration")
        try:
            fresh_A = assemble_A or self.A is None
            if fresh_A:
                A = self._assemble_lhs()
                self.A_raw = A
                A, _ = apply_constraints(A, None, self.bcs)
                self.A = A
                self._solver.invalidate()
            if assemble_b or self.b is None:
                b = self._assemble_rhs()
                self.b_raw = b.copy()
                _, b = apply_constraints(None, b, self.bcs)
                self.b = b
            A, b = self.A, self.b
            x = self.x
            x_star = self.work
            x_star[:] = self._solve_linear(A, b, x, reuse_factor=not fresh_A)
            x_star -= x                        # correction before relaxation
            omega = self.prm["omega"]
            linalg.axpy(x, omega, x_star)      # x <- x + omega (x* - x)
            res = linalg.residual(A, x, b)
            if self.update_hook:
                self.update_hook(self)
            dx = linalg.norm(x_star)
            self.info = IterInfo((res, dx), self.info.iter + 1)
            return res, dx
        except Exception as exc:
            exc.args = (f"scheme '{self.name}': {exc}",) + exc.args[1:]
            raise

    def solve_newton_step(self, *_args):
        """One relaxed Newton correction; returns (rhs norm, correction norm)."""
        if self.prm["iteration_type"] != "Newton":
            raise ValueError("scheme was not built for Newton iteration")
        try:
            A = self._assemble_lhs()
            b = self._assemble_rhs()
            A, b = apply_constraints(A, b, self.bcs, x=self.x, newton=True)
            self.A, self.b = A, b
            rhs_norm = linalg.norm(b)
            dx = self.work
            dx[:] = 0.0
            dx[:] = self._solver.solve(A, b)
            linalg.axpy(self.x, self.prm["omega"], dx)
            if self.update_hook:
                self.update_hook(self)
            dxn = linalg.norm(dx)
            self.info = IterInfo((rhs_norm, dxn), self.info.iter + 1)
            return rhs_norm, dxn
        except Exception as exc:
            exc.args = (f"scheme '{self.name}': {exc}",) + exc.args[1:]
            raise

    def step(self, assemble_A: bool = True, assemble_b: bool = True):
        if self.prm["iteration_type"] == "Picard":
            return self.solve_picard_step(assemble_A, assemble_b)
        return self.solve_newton_step()


def make_scheme(name, form_method, namespace, unknown, unknown_names,
                bcs=(), prm=None, update_hook=None) -> Scheme:
    return Scheme(name, form_method, namespace, unknown, unknown_names,
                  bcs=bcs, prm=prm, update_hook=update_hook)


def solve_nonlinear(scheme: Scheme, max_iter: int = 1, max_err: float = 1e-8,
                    update=None) -> IterInfo:
    """Drive a scheme to convergence; never raises on non-convergence."""
    j = 0
    err = np.inf
    scheme.info = IterInfo((0.0, 0.0), 0)
    while err > max_err and j < max_iter:
        res, dxn = scheme.step(scheme.prm["reassemble_lhs"],
                               scheme.prm["reassemble_rhs"])
        j += 1
        scheme.info = IterInfo((res, dxn), j)
        if scheme.prm["echo"]:
            log.info("scheme '%s' iter %d: residual=%.3e dx=%.3e",
                     scheme.name, j, res, dxn)
        err = max(scheme.info.error)
        if update:
            update()
    return scheme.info


def positivity_clamp(x: np.ndarray, floor: float = 1e-10) -> None:
    """Raise every entry below the floor up to it (in place)."""
    np.maximum(x, floor, out=x)
