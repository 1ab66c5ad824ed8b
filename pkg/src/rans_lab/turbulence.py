"""Generalized turbulence-system engine and the three low-Reynolds k-epsilon
models (Chien, Launder-Sharma, Jones-Launder).

A system composition names the primary unknowns and groups them into
subsystems solved together ([["k", "e"]] coupled, [["k"], ["e"]]
segregated).  Derived quantities (damping functions, eddy viscosity,
near-wall terms) are string formulas evaluated in order between solves,
by projection or dof-wise application.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import forms as fe
from .assembly import (DirichletCondition, PeriodicCondition, Projector,
                       assemble)
from .errors import ConfigError, FormulaError, UnknownSchemeError
from .forms import dot, dx, grad, inner, parse_formula, eval_formula_dofs
from .mesh import INLET, OUTLET, WALL
from .schemes import Scheme, positivity_clamp
from .spaces import Element, FieldFunction, FunctionSpace, MixedSpace

POSITIVITY_FLOOR = 1e-10

MODELS = ("LaunderSharma", "JonesLaunder", "Chien")


@dataclass
class ModelParams:
    """Constants of one low-Reynolds model (all dimensionless)."""

    model: str
    Cmu: float = 0.09
    sigma_k: float = 1.0
    sigma_e: float = 1.3
    Ce1: float = 0.0
    Ce2: float = 0.0
    e_d: float = 0.5
    e_nut: float = 1.0
    f1: float = 1.0


_CE = {
    "LaunderSharma": (1.44, 1.92),
    "JonesLaunder": (1.55, 2.0),
    "Chien": (1.35, 1.80),
}


def model_parameters(model: str) -> ModelParams:
    if model not in _CE:
        raise UnknownSchemeError(
            f"unknown turbulence model '{model}'; available: " + ", ".join(MODELS))
    ce1, ce2 = _CE[model]
    return ModelParams(model=model, Ce1=ce1, Ce2=ce2)


# ---------------------------------------------------------------------------
# system composition
# ---------------------------------------------------------------------------

class TurbSolverState:
    """Spaces, trial/test/current functions, and named attribute bindings."""

    def __init__(self, composition, mesh, degrees):
        names = [n for group in composition for n in group]
        if len(set(names)) != len(names):
            raise ValueError("duplicate unknown name in system composition")
        self.system_composition = [list(g) for g in composition]
        self.system_names = ["".join(g) for g in composition]
        self.names = names

        self.V = {name: FunctionSpace(mesh, Element(degrees.get(name, 1)))
                  for name in names}
        self.V["dq"] = FunctionSpace(mesh, Element(degrees.get("dq", 1)))
        for group, sys_name in zip(self.system_composition, self.system_names):
            if len(group) > 1:
                self.V[sys_name] = MixedSpace([self.V[n] for n in group])

        self.q, self.v, self.q_, self.x_ = {}, {}, {}, {}
        for group, sys_name in zip(self.system_composition, self.system_names):
            space = self.V[sys_name]
            field = FieldFunction(space, name=sys_name)
            self.q_[sys_name] = field
            self.x_[sys_name] = field.values
            if len(group) > 1:
                views = field.split()
                for i, name in enumerate(group):
                    self.q[name] = fe.TrialField(space, sub=i, name=name)
                    self.v[name] = fe.TestField(space, sub=i, name="v_" + name)
                    self.q_[name] = views[i]
                    views[i].name = name + "_"
                    self.x_[name] = views[i].values
            else:
                name = group[0]
                self.q[name] = fe.TrialField(space, name=name)
                self.v[name] = fe.TestField(space, name="v_" + name)
        # Short attribute bindings: k_, e_, v_k, ... like a solver namespace.
        for key, value in self.v.items():
            setattr(self, "v_" + key, value)
        for key, value in self.q.items():
            setattr(self, key, value)
        for key, value in self.q_.items():
            setattr(self, key + "_", value)


def compose_system(composition, mesh, degrees=None) -> TurbSolverState:
    return TurbSolverState(composition, mesh, degrees or {})


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------

@dataclass
class DerivedQuantity:
    """A named formula over the solver namespace, realized on a space.

    mode 'project' solves the mass-matrix system for the formula,
    'compute_dofs' applies the (derivative-free) formula to dof arrays,
    'use_formula' returns the parsed expression for inline use.
    wall_value None means no boundary enforcement on the projection.
    bounded clips projection undershoots of nonnegative quantities at zero
    (a negative eddy viscosity would destroy coercivity).
    """

    name: str
    space: object
    formula: str
    mode: str = "project"
    wall_value: float | None = None
    relax: float | None = None
    bounded: bool = True


class ActiveFloorSet:
    """Active-set handling of the positivity bound.

    Dofs that the linear solve keeps pushing below the floor are pinned AT
    the floor (a Dirichlet-like row), so the solve itself returns the bound
    and the correction norm can genuinely reach zero.  A pinned dof is
    released when the unconstrained equation wants it to rise
    (complementarity: x_i = floor requires residual_i <= 0).
    """

    def __init__(self, floor: float = POSITIVITY_FLOOR):
        self.floor = floor
        self.dofs = np.empty(0, dtype=np.int64)

    def dofs_values(self):
        return self.dofs, np.full(len(self.dofs), self.floor)

    def update(self, scheme, fighters: np.ndarray):
        keep = np.empty(0, dtype=np.int64)
        if len(self.dofs) and scheme.A_raw is not None and scheme.b_raw is not None:
            r = scheme.b_raw - scheme.A_raw @ scheme.x
            keep = self.dofs[r[self.dofs] <= 0.0]
        self.dofs = np.union1d(keep, fighters)


def compute_wall_scales(y: FieldFunction, u_tau: float, nu: float) -> FieldFunction:
    """Wall-unit distance y+ = u_tau * y / nu as a dof-wise field."""
    if u_tau <= 0:
        raise ValueError("u_tau must be positive")
    out = FieldFunction(y.space, name="yplus_")
    out.values[:] = eval_formula_dofs("u_tau*y_/nu",
                                      {"y_": y, "u_tau": u_tau, "nu": nu})
    return out


def register_derived_quantities(state: TurbSolverState, params: ModelParams,
                                namespace: dict) -> list:
    """Model-specific derived-quantity definitions, in evaluation order."""
    V = state.V["dq"]
    model = params.model
    re_t = "(k_*k_/nu/e_)"
    # Only the eddy viscosity is materialized (the NS solver needs a field
    # and it carries the coupling under-relaxation); damping functions and
    # near-wall terms enter the forms inline at quadrature points.
    nut = DerivedQuantity("nut_", V, "Cmu*fmu_*k_*k_*(1/e_)",
                          mode="project", wall_value=0.0)
    # The k-equation wall sink is Table-form 2*nu*|grad(sqrt(k))|^2 with
    # sqrt(k) realized as a nodal field: identical to (nu/2k)|grad k|^2 on
    # smooth positive profiles, but bounded where k touches the positivity
    # floor (the rational form is singular there and extinguishes the
    # sublayer).
    sqrt_k = DerivedQuantity("sqrt_k_", state.V["k"], "sqrt(k_)",
                             mode="compute_dofs")
    d_wall = DerivedQuantity("D_", V, "2*nu*inner(grad(sqrt_k_), grad(sqrt_k_))",
                             mode="use_formula")
    if model == "LaunderSharma":
        dqs = [
            sqrt_k, d_wall,
            DerivedQuantity("fmu_", V, f"exp(-3.4/(1 + {re_t}/50)**2)",
                            mode="use_formula"),
            DerivedQuantity("f2_", V, f"1 - 0.3*exp(-{re_t}**2)",
                            mode="use_formula"),
            nut,
            DerivedQuantity("E0_", V, "2*nu*nut_*dot(lap_u_, lap_u_)",
                            mode="use_formula"),
        ]
    elif model == "JonesLaunder":
        dqs = [
            sqrt_k, d_wall,
            DerivedQuantity("fmu_", V, f"exp(-2.5/(1 + {re_t}/50))",
                            mode="use_formula"),
            DerivedQuantity("f2_", V, f"1 - 0.3*exp(-{re_t}**2)",
                            mode="use_formula"),
            nut,
            DerivedQuantity("E0_", V, "2*nu*nut_*dot(lap_u_, lap_u_)",
                            mode="use_formula"),
        ]
    elif model == "Chien":
        for needed in ("yplus_", "yc_"):
            if needed not in namespace:
                raise FormulaError(
                    f"Chien model needs '{needed}' (wall distance) in the namespace")
        dqs = [
            DerivedQuantity("D_", V, "2*nu*k_/(yc_*yc_)", mode="use_formula"),
            DerivedQuantity("fmu_", V, "1 - exp(-0.0115*yplus_)",
                            mode="use_formula"),
            DerivedQuantity("f2_", V, f"1 - 0.22*exp(-({re_t}/6)**2)",
                            mode="use_formula"),
            nut,
            DerivedQuantity("E0_", V, "-2*nu*e_/(yc_*yc_)*exp(-yplus_/2)",
                            mode="use_formula", bounded=False),
        ]
    else:
        raise UnknownSchemeError(f"unknown turbulence model '{model}'")
    known = set(namespace)
    for dq in dqs:
        _check_names(dq.formula, known, dq.name)
        known.add(dq.name)  # later formulas may reference earlier quantities
    return dqs


def _check_names(formula: str, known, owner: str):
    import ast
    names = {n.id for n in ast.walk(ast.parse(formula, mode="eval"))
             if isinstance(n, ast.Name)}
    missing = sorted(n for n in names if n not in set(known) | set(fe._FORMULA_FUNCS))
    if missing:
        raise FormulaError(
            f"derived quantity '{owner}' references unbound name(s): "
            + ", ".join(missing))


# ---------------------------------------------------------------------------
# k-epsilon scheme forms
# ---------------------------------------------------------------------------

def Steady_ke_1(k, e, v_k, v_e, k_, e_, nut_, u_, Sij_, E0_, f2_, D_,
                nu, e_d, sigma_k, sigma_e, Ce1, Ce2, **_):
    """Coupled forms with the blended dissipation linearization:
    the k-equation sink is e_d*eps + (1-e_d)*eps_*k/k_."""
    Fk = ((nu + nut_ * (1.0 / sigma_k)) * inner(grad(v_k), grad(k)) * dx
          + inner(v_k, dot(grad(k), u_)) * dx
          - 2.0 * inner(grad(u_), Sij_) * nut_ * v_k * dx
          + (k_ * e * e_d + k * e_ * (1.0 - e_d)) * (1.0 / k_) * v_k * dx
          + v_k * D_ * dx)
    Fe = ((nu + nut_ * (1.0 / sigma_e)) * inner(grad(v_e), grad(e)) * dx
          + inner(v_e, dot(grad(e), u_)) * dx
          - (Ce1 * 2.0 * inner(grad(u_), Sij_) * nut_ * e_
             - f2_ * Ce2 * e_ * e) * (1.0 / k_) * v_e * dx
          - E0_ * v_e * dx)
    return Fk + Fe


def Steady_ke_2(k, e, v_k, v_e, k_, e_, inv_dt, **kwargs):
    """Pseudo-transient variant: Steady_ke_1 plus (1/dt) mass terms.

    The relaxation-time term caps how far one Picard step can move the
    state; driving inv_dt to zero recovers the steady forms and their
    converged solution exactly.
    """
    F = Steady_ke_1(k=k, e=e, v_k=v_k, v_e=v_e, k_=k_, e_=e_, **kwargs)
    return (F
            + inv_dt * (k - k_) * v_k * dx
            + inv_dt * (e - e_) * v_e * dx)


def Steady_k_1(k, v_k, k_, e_, nut_, D_, u_, Sij_, nu, sigma_k, **_):
    """Segregated k-equation with the dissipation fully lagged (eps_*k/k_)."""
    return ((nu + nut_ * (1.0 / sigma_k)) * inner(grad(v_k), grad(k)) * dx
            + inner(v_k, dot(grad(k), u_)) * dx
            - 2.0 * inner(grad(u_), Sij_) * nut_ * v_k * dx
            + k * e_ * (1.0 / k_) * v_k * dx
            + v_k * D_ * dx)


def Steady_e_1(e, v_e, e_, k_, nut_, E0_, f2_, u_, Sij_, sigma_e, Ce1, Ce2,
               nu, **_):
    return ((nu + nut_ * (1.0 / sigma_e)) * inner(grad(v_e), grad(e)) * dx
            + inner(v_e, dot(grad(e), u_)) * dx
            - (Ce1 * 2.0 * inner(grad(u_), Sij_) * nut_ * e_
               - f2_ * Ce2 * e_ * e) * (1.0 / k_) * v_e * dx
            - E0_ * v_e * dx)


KE_SCHEMES = {
    "Steady_ke_1": Steady_ke_1,
    "Steady_ke_2": Steady_ke_2,
    "Steady_k_1": Steady_k_1,
    "Steady_e_1": Steady_e_1,
}


def define_ke_forms(namespace: dict, variant: str = "Steady_ke_1"):
    """Build the k/epsilon form(s) from a solver namespace."""
    if variant not in KE_SCHEMES:
        raise UnknownSchemeError(
            f"unknown k-epsilon scheme '{variant}'; available: "
            + ", ".join(sorted(KE_SCHEMES)))
    e_d = namespace.get("e_d")
    ed_val = e_d.value if isinstance(e_d, fe.ScalarConstant) else e_d
    if ed_val is not None and not 0.0 <= float(ed_val) <= 1.0:
        raise ValueError(f"e_d must lie in [0, 1], got {ed_val}")
    return KE_SCHEMES[variant](**dict(namespace))


DEFAULT_TURB_PRM = {
    "iteration_type": "Picard",
    "omega": 1.0,
    "scheme": 1,
    "time_integration": "Steady",
    "linear_solver": "direct",
    "relax_nut": True,
    # pseudo-transient continuation (scheme 2): start value, growth, and cap
    # of the relaxation time.  The (1/dt)(q - q_) term vanishes identically
    # at any fixed point, so the converged state equals the steady-scheme
    # solution for every dt; the cap keeps a damping diagonal active.
    "dt0": 1.0,
    "dt_growth": 1.5,
    "dt_max": np.inf,
    # Optional transient guard bounding the dissipation time scale:
    # eps <= max_e_over_k * k at clamp time.  Where k sits at the positivity
    # floor while eps stays finite, the lagged eps_/k_ ratios blow up and
    # permanently extinguish the near-wall layer; the bound keeps the pair
    # commensurate.  It is far above any converged eps/k ratio, so the
    # steady solution is untouched.
    "max_e_over_k": None,
}


class TurbulenceSolver:
    """Low-Reynolds k-epsilon solver coupled to an NS solver.

    The NS solver supplies u_, the strain projection, and the velocity
    Laplacian; this solver owns k/epsilon, the derived quantities, and
    rebinds the NS effective viscosity to nu + nut_.
    """

    def __init__(self, ns_solver, model: str, composition=None, prm=None,
                 e_d: float = 0.5, wall_distance: FieldFunction | None = None,
                 u_tau: float | None = None, degrees=None,
                 wall_marker: int = WALL):
        self.ns = ns_solver
        self.prm = dict(DEFAULT_TURB_PRM)
        if prm:
            self.prm.update(prm)
        if not 0.0 <= e_d <= 1.0:
            raise ValueError(f"e_d must lie in [0, 1], got {e_d}")
        self.params = model_parameters(model)
        self.params.e_d = e_d
        self.wall_marker = wall_marker
        self.state = compose_system(composition or [["k", "e"]],
                                    ns_solver.spec.mesh, degrees or {})
        self.wall_distance = wall_distance
        self.u_tau = u_tau
        self.schemes = {}
        self.derived_quantities = []
        self._projectors = {}
        self._fields = {}
        self.setup()

    # setup -----------------------------------------------------------------
    def setup(self):
        state = self.state
        V = state.V["dq"]
        self._fields["nut_"] = FieldFunction(V, name="nut_")
        self._dt = float(self.prm["dt0"])
        self.inv_dt_ = FieldFunction(V, name="inv_dt")
        if self.prm["scheme"] == 2:
            self.inv_dt_.values[:] = 1.0 / self._dt

        ns_names = {
            "u_": self.ns.u_, "Sij_": self.ns.Sij_, "lap_u_": self.ns.lap_u_,
            "nu": self.ns.spec.nu,
        }
        p = self.params
        consts = {"Cmu": p.Cmu, "sigma_k": p.sigma_k, "sigma_e": p.sigma_e,
                  "Ce1": p.Ce1, "Ce2": p.Ce2, "e_d": p.e_d,
                  "e_nut": p.e_nut, "f1": p.f1}
        self.namespace = {"inv_dt": self.inv_dt_}
        self.namespace.update(ns_names)
        self.namespace.update(consts)
        self.namespace.update(self._fields)
        for name in state.names:
            self.namespace[name] = state.q[name]
            self.namespace["v_" + name] = state.v[name]
            self.namespace[name + "_"] = state.q_[name]

        if self.params.model == "Chien":
            if self.wall_distance is None or self.u_tau is None:
                raise ConfigError("the Chien model needs wall_distance and u_tau")
            y = self.wall_distance
            yplus = compute_wall_scales(y, self.u_tau, self.ns.spec.nu)
            positive = y.values[y.values > 1e-12 * max(y.values.max(), 1.0)]
            floor = float(positive.min()) if len(positive) else 1.0
            yc = FieldFunction(y.space, name="yc_")
            yc.values[:] = np.maximum(y.values, floor)
            self.namespace["y_"] = y
            self.namespace["yplus_"] = yplus
            self.namespace["yc_"] = yc

        self.derived_quantities = register_derived_quantities(
            self.state, self.params, self.namespace)
        # Inline quantities become expressions over the live iterate fields;
        # materialized ones get their field now.  Later formulas in the
        # ordered list see the earlier bindings.
        for dq in self.derived_quantities:
            if dq.mode == "use_formula":
                self.namespace[dq.name] = parse_formula(dq.formula, self.namespace)
            elif dq.name not in self._fields:
                field = FieldFunction(dq.space, name=dq.name)
                self._fields[dq.name] = field
                self.namespace[dq.name] = field
        self.define()
        self.ns.set_effective_viscosity(self._fields["nut_"])

    def create_bcs(self, space):
        # The homogeneous wall values are set to the positivity floor: the
        # clamp would otherwise lift exact zeros back above the Dirichlet
        # target every iteration and stall the correction norm near
        # floor * sqrt(#wall dofs).
        wall_value = POSITIVITY_FLOOR
        bcs = []
        if self.ns.spec.periodic is not None:
            bcs.append(PeriodicCondition(space, self.ns.spec.periodic,
                                         INLET, OUTLET))
        if isinstance(space, MixedSpace):
            for i in range(len(space.subspaces)):
                bcs.append(DirichletCondition(space, self.wall_marker,
                                              wall_value, sub=i))
        else:
            bcs.append(DirichletCondition(space, self.wall_marker, wall_value))
        return bcs

    def define(self):
        """Create the scheme objects per subsystem."""
        state = self.state
        prm = {
            "iteration_type": self.prm["iteration_type"],
            "omega": self.prm["omega"],
            "linear_solver": self.prm["linear_solver"],
        }

        def clamp_hook(scheme):
            fighters = np.nonzero(scheme.x < POSITIVITY_FLOOR)[0]
            for name in scheme.unknown_names:
                positivity_clamp(state.x_[name], POSITIVITY_FLOOR)
            ratio = self.prm["max_e_over_k"]
            if ratio is not None and {"k", "e"} <= set(scheme.unknown_names):
                np.minimum(state.x_["e"], ratio * state.x_["k"],
                           out=state.x_["e"])
                positivity_clamp(state.x_["e"], POSITIVITY_FLOOR)
            self._active[scheme.name].update(scheme, fighters)

        self._active = {}
        for group, sys_name in zip(state.system_composition, state.system_names):
            classname = (self.prm["time_integration"] + "_"
                         + ("".join(group)) + "_" + str(self.prm["scheme"]))
            if classname not in KE_SCHEMES:
                raise UnknownSchemeError(
                    f"unknown turbulence scheme '{classname}'; available: "
                    + ", ".join(sorted(KE_SCHEMES)))
            # Wall Dirichlet rows come first so they win over floor pins.
            self._active[sys_name] = ActiveFloorSet()
            bcs = self.create_bcs(state.V[sys_name]) + [self._active[sys_name]]
            self.schemes[sys_name] = Scheme(
                sys_name, KE_SCHEMES[classname], self.namespace,
                state.q_[sys_name], group, bcs=bcs, prm=dict(prm),
                update_hook=clamp_hook)

    # state handling ----------------------------------------------------------
    def initialize(self, k0: float = 0.01, e0: float = 0.01):
        self.state.q_["k"].values[:] = k0
        self.state.q_["e"].values[:] = e0
        self._dt = float(self.prm["dt0"])
        if self.prm["scheme"] == 2:
            self.inv_dt_.values[:] = 1.0 / self._dt
        for active in self._active.values():
            active.dofs = np.empty(0, dtype=np.int64)
        self.update_derived()

    def advance_dt(self):
        """Grow the pseudo-time step (continuation toward the steady system)."""
        if self.prm["scheme"] == 2:
            self._dt = min(self._dt * float(self.prm["dt_growth"]),
                           float(self.prm["dt_max"]))
            self.inv_dt_.values[:] = 1.0 / self._dt

    def _projector_for(self, dq: DerivedQuantity):
        key = (id(dq.space), dq.wall_value)
        if key not in self._projectors:
            bcs = []
            if self.ns.spec.periodic is not None:
                bcs.append(PeriodicCondition(dq.space, self.ns.spec.periodic,
                                             INLET, OUTLET))
            if dq.wall_value is not None:
                bcs.append(DirichletCondition(dq.space, self.wall_marker,
                                              dq.wall_value))
            self._projectors[key] = Projector(dq.space, bcs=bcs)
        return self._projectors[key]

    def evaluate_derived(self, dq: DerivedQuantity):
        """Realize one derived quantity (project / compute_dofs / use_formula)."""
        if dq.mode == "use_formula":
            return parse_formula(dq.formula, self.namespace)
        out = self._fields.get(dq.name)
        if out is None:
            out = FieldFunction(dq.space, name=dq.name)
            self._fields[dq.name] = out
            self.namespace[dq.name] = out
        if dq.mode == "project":
            expr = parse_formula(dq.formula, self.namespace)
            relax = dq.relax
            if relax is None and dq.name == "nut_" and self.prm["relax_nut"]:
                relax = self.prm["omega"]
            self._projector_for(dq).project(expr, out, relax=relax)
            if dq.bounded:
                positivity_clamp(out.values, 0.0)
        elif dq.mode == "compute_dofs":
            out.values[:] = eval_formula_dofs(dq.formula, self.namespace)
        else:
            raise ValueError(f"unknown derived-quantity mode '{dq.mode}'")
        return out

    def update_derived(self):
        for dq in self.derived_quantities:
            if dq.mode != "use_formula":  # inline expressions track the state
                self.evaluate_derived(dq)

    @property
    def nut_(self):
        return self._fields["nut_"]

    def clamp_state(self):
        for name in self.state.names:
            positivity_clamp(self.state.x_[name], POSITIVITY_FLOOR)


# ---------------------------------------------------------------------------
# the outer coupled iteration
# ---------------------------------------------------------------------------

@dataclass
class CoupledRunResult:
    converged: bool
    iterations: int
    records: list      # rows (iter, ns_res, ns_dx, turb_res, turb_dx)
    errors: dict       # final per-subsystem (residual, dx)


def coupled_rans_iteration(ns_solver, turb_solver, max_iter: int = 50,
                           max_err: float = 1e-12, callback=None) -> CoupledRunResult:
    """Alternate NS and turbulence solves, updating derived quantities
    between each subsystem's solve; never raises on non-convergence."""
    ns_scheme = ns_solver.schemes["NS"]
    records = []
    errors = {}
    converged = False
    iterations = 0
    for j in range(1, max_iter + 1):
        iterations = j
        ns_res, ns_dx = ns_scheme.step(True, True)
        ns_solver.update_derived()
        t_res, t_dx = 0.0, 0.0
        for sys_name in turb_solver.state.system_names:
            r, d = turb_solver.schemes[sys_name].step(True, True)
            errors[sys_name] = (r, d)
            t_res, t_dx = max(t_res, r), max(t_dx, d)
        turb_solver.update_derived()
        turb_solver.advance_dt()
        errors["NS"] = (ns_res, ns_dx)
        records.append((j, ns_res, ns_dx, t_res, t_dx))
        if callback:
            callback(j, records[-1])
        err = max(ns_res, ns_dx, t_res, t_dx)
        if not np.isfinite(err):
            break
        if err <= max_err:
            converged = True
            break
    return CoupledRunResult(converged, iterations, records, errors)
