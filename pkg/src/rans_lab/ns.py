"""Coupled steady Navier-Stokes solver.

Supports Taylor-Hood (P2/P1) and equal-order pressure-stabilized (PSPG)
formulations, implicit or explicit convection, Picard or Newton iteration.
Scheme variants are selected by name composition
(time_integration + '_Coupled_' + scheme_number), e.g. Steady_Coupled_1.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np

from . import forms as fe
from .assembly import (DirichletCondition, PeriodicCondition, PinnedDof,
                       Projector, assemble)
from .errors import ConfigError, UnknownSchemeError
from .forms import CellSize, dot, div, ds, dx, grad, inner
from .mesh import INLET, OUTLET, Mesh, PeriodicMap
from .schemes import Scheme, solve_nonlinear
from .spaces import Element, FieldFunction, FunctionSpace, MixedSpace


def viscous_stress(nu, u):
    return nu * (grad(u) + grad(u).T)


def momentum_residual(u_adv, u, p, nu, f):
    """Residual of the momentum equation, used by the PSPG term."""
    return dot(grad(u), u_adv) + grad(p) - div(viscous_stress(nu, u)) - f


def convection_term(variant, u, u_):
    """Named convection variants; the advecting velocity is lagged except
    in the fully implicit form."""
    if variant == "implicit":
        return dot(grad(u), u_)
    if variant == "explicit":
        return dot(grad(u_), u_)
    if variant == "fully_implicit":
        return dot(grad(u), u)
    raise UnknownSchemeError(f"unknown convection variant '{variant}'")


def _coupled_form(conv_variant):
    def form(u, v, p, q, u_, nu, f, tau, **_):
        conv = convection_term(conv_variant, u, u_)
        F = (inner(v, conv) * dx
             + inner(grad(v), viscous_stress(nu, u)) * dx
             - p * div(v) * dx
             - q * div(u) * dx
             - inner(f, v) * dx)
        if tau is not None:
            adv = u if conv_variant == "fully_implicit" else u_
            R = momentum_residual(adv, u, p, nu, f)
            F = F + tau * dot(R, grad(q)) * dx
        return F
    return form


NS_SCHEMES = {
    "Steady_Coupled_1": _coupled_form("implicit"),
    "Steady_Coupled_2": _coupled_form("explicit"),
}


def define_ns_form(namespace, variant: str = "implicit", stabilized: bool = False):
    """Build the coupled NS form directly (functional entry point)."""
    ns = dict(namespace)
    if not stabilized:
        ns["tau"] = None
    elif ns.get("tau") is None:
        raise ConfigError("stabilized form needs a tau expression in the namespace")
    return _coupled_form(variant)(**ns)


@dataclass
class NSProblemSpec:
    """Everything a flow case supplies: geometry, conditions, parameters."""

    mesh: Mesh
    nu: float
    body_force: tuple | callable = (0.0, 0.0)
    velocity_bcs: list = dfield(default_factory=list)  # (marker, value, component|None)
    pressure_bcs: list = dfield(default_factory=list)  # (marker, value)
    periodic: PeriodicMap | None = None
    degrees: dict = dfield(default_factory=lambda: {"velocity": 2, "pressure": 1})
    stabilization: dict | None = None  # {"tau": c} or {"beta": b, "viscosity": "laminar"}
    initial_velocity_pressure: object = None  # (u_callable, p_callable) or None

    def __post_init__(self):
        markers = set(self.mesh.facets[:, 2].tolist())
        for marker, _, *_ in list(self.velocity_bcs) + list(self.pressure_bcs):
            if marker not in markers:
                raise ConfigError(f"boundary condition references unknown marker {marker}")


DEFAULT_NS_PRM = {
    "time_integration": "Steady",
    "scheme_number": 1,
    "iteration_type": "Picard",
    "omega": 1.0,
    "linear_solver": "direct",
}


class NSSolver:
    """Spaces, fields, boundary conditions, and the 'NS' scheme."""

    def __init__(self, spec: NSProblemSpec, prm: dict | None = None):
        self.spec = spec
        self.prm = dict(DEFAULT_NS_PRM)
        if prm:
            self.prm.update(prm)
        self.nut_ = None  # set by a turbulence solver
        self.setup()

    # setup ---------------------------------------------------------------
    def setup(self):
        spec = self.spec
        mesh = spec.mesh
        du = spec.degrees["velocity"]
        dp = spec.degrees["pressure"]
        if du <= dp and spec.stabilization is None:
            raise ConfigError(
                "equal-order velocity/pressure needs pressure stabilization "
                "(Taylor-Hood requires velocity degree > pressure degree)")

        self.V = FunctionSpace(mesh, Element(du, "vector"))
        self.Q = FunctionSpace(mesh, Element(dp))
        self.VQ = MixedSpace([self.V, self.Q])
        self.S = FunctionSpace(mesh, Element(du, "sym_tensor"))
        dq_degree = spec.degrees.get("dq", 1)
        self.V_dq = FunctionSpace(mesh, Element(dq_degree))
        self.V_dq_vec = FunctionSpace(mesh, Element(dq_degree, "vector"))

        self.up_ = FieldFunction(self.VQ, name="up")
        self.u_, self.p_ = self.up_.split()
        self.u_.name, self.p_.name = "u_", "p_"
        self.x_ = self.up_.values

        self.Sij_ = FieldFunction(self.S, name="Sij_")
        self.lap_u_ = FieldFunction(self.V_dq_vec, name="lap_u_")
        self.div_u_ = FieldFunction(self.V_dq, name="div_u_")

        if callable(spec.body_force):
            f_field = FieldFunction(self.V, name="f")
            f_field.interpolate(spec.body_force)
            self.f = fe.Coefficient(f_field)
        else:
            self.f = fe.ConstantTensor(np.asarray(spec.body_force, dtype=float))

        self.bcs = self.create_bcs()
        self.initialize()
        self.schemes = {}
        self._projectors = {}
        self.define()

    def create_bcs(self):
        spec = self.spec
        bcs = []
        if spec.periodic is not None:
            bcs.append(PeriodicCondition(self.VQ, spec.periodic, INLET, OUTLET))
        for marker, value, *rest in spec.velocity_bcs:
            comp = rest[0] if rest else None
            bcs.append(DirichletCondition(self.VQ, marker, value, sub=0, component=comp))
        for marker, value in spec.pressure_bcs:
            bcs.append(DirichletCondition(self.VQ, marker, value, sub=1))
        if not spec.pressure_bcs:
            # Periodic/enclosed problems leave the pressure defined only up
            # to a constant; pin the lowest-index pressure dof.
            bcs.append(PinnedDof(int(self.VQ.offsets[1]), 0.0))
        return bcs

    def initialize(self):
        init = self.spec.initial_velocity_pressure
        if init is None:
            return
        u0, p0 = init
        if u0 is not None:
            self.u_.interpolate(u0)
        if p0 is not None:
            self.p_.interpolate(p0)

    def effective_viscosity(self):
        nu = fe.ScalarConstant(self.spec.nu)
        if self.nut_ is None:
            return nu
        return nu + fe.Coefficient(self.nut_)

    def _tau_expression(self):
        stab = self.spec.stabilization
        if stab is None:
            return None
        if "tau" in stab:
            return fe.ScalarConstant(stab["tau"])
        beta = stab["beta"]
        if stab.get("viscosity", "laminar") == "laminar":
            nu = fe.ScalarConstant(self.spec.nu)
        else:
            nu = self.effective_viscosity()
        return beta * CellSize() * CellSize() / (4.0 * nu)

    def define(self):
        """(Re)build the 'NS' scheme; call again after rebinding viscosity."""
        nu_expr = self.effective_viscosity()
        self.namespace = {
            "u": fe.TrialField(self.VQ, sub=0, name="u"),
            "p": fe.TrialField(self.VQ, sub=1, name="p"),
            "v": fe.TestField(self.VQ, sub=0, name="v"),
            "q": fe.TestField(self.VQ, sub=1, name="q"),
            "u_": fe.Coefficient(self.u_),
            "p_": fe.Coefficient(self.p_),
            "nu": nu_expr,
            "f": self.f,
            "tau": self._tau_expression(),
            "x": fe.SpatialCoordinate(),
        }
        classname = (self.prm["time_integration"] + "_Coupled_"
                     + str(self.prm["scheme_number"]))
        if classname not in NS_SCHEMES:
            raise UnknownSchemeError(
                f"unknown NS scheme '{classname}'; available: "
                + ", ".join(sorted(NS_SCHEMES)))
        prm = {
            "iteration_type": self.prm["iteration_type"],
            "omega": self.prm["omega"],
            "linear_solver": self.prm["linear_solver"],
        }
        scheme = Scheme("NS", NS_SCHEMES[classname], self.namespace, self.up_,
                        ["u", "p"], bcs=self.bcs, prm=prm)
        # Explicit convection with constant viscosity never changes the matrix.
        if (self.prm["scheme_number"] == 2
                and self.prm["iteration_type"] == "Picard"
                and isinstance(nu_expr, fe.ScalarConstant)):
            scheme.prm["reassemble_lhs"] = False
        self.schemes["NS"] = scheme
        return scheme

    def set_effective_viscosity(self, nut_field: FieldFunction | None):
        """Bind nu to laminar-plus-turbulent and rebuild the scheme."""
        self.nut_ = nut_field
        return self.define()

    # derived quantities ----------------------------------------------------
    def _projector(self, space, key):
        if key not in self._projectors:
            bcs = []
            if self.spec.periodic is not None:
                bcs.append(PeriodicCondition(space, self.spec.periodic, INLET, OUTLET))
            self._projectors[key] = Projector(space, bcs=bcs)
        return self._projectors[key]

    def update_derived(self, relax: float | None = None):
        """Recompute strain rate and the velocity-Laplacian projection.

        relax blends the projections into their previous values (used by
        the coupled turbulence driver to damp the production feedback).
        """
        u_ = fe.Coefficient(self.u_)
        strain = 0.5 * (grad(u_) + grad(u_).T)
        self._projector(self.S, "S").project(strain, self.Sij_, relax=relax)

        vtest = fe.TestField(self.V_dq_vec)
        n = fe.FacetNormal()
        rhs = (-inner(grad(u_), grad(vtest)) * dx
               + inner(dot(grad(u_), n), vtest) * ds())
        self._projector(self.V_dq_vec, "lap").project_form(rhs, self.lap_u_,
                                                           relax=relax)

    def ns_derived(self):
        """Strain tensor, divergence, and Laplacian projections of u."""
        self.update_derived()
        self._projector(self.V_dq, "div").project(div(fe.Coefficient(self.u_)),
                                                  self.div_u_)
        return {"S": self.Sij_, "div_u": self.div_u_, "g": self.lap_u_}

    # solving ----------------------------------------------------------------
    def solve(self, max_iter: int = 20, max_err: float = 1e-10):
        return solve_nonlinear(self.schemes["NS"], max_iter=max_iter,
                               max_err=max_err)

    def divergence_l2(self) -> float:
        val = assemble(div(fe.Coefficient(self.u_)) ** 2 * dx)
        return float(np.sqrt(max(val, 0.0)))


def setup_ns_solver(spec: NSProblemSpec, prm: dict | None = None) -> NSSolver:
    return NSSolver(spec, prm)
