"""Streamfunction, field/convergence output, and the channel benchmark driver.

Outputs per run: convergence.csv (iter, ns_residual, ns_dx, turb_residual,
turb_dx), fields_final.vtk (legacy ASCII unstructured grid, vertex data),
summary.json, and mesh.txt.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field as dfield

import numpy as np

from . import forms as fe
from .assembly import PeriodicCondition, PinnedDof, apply_constraints, assemble, \
    eval_grad_on_cells
from .errors import ConfigError
from .forms import dot, ds, dx, grad, inner
from .linalg import sparse_lu_solve
from .mesh import (INLET, OUTLET, SYMMETRY, WALL, Mesh, build_periodic_map,
                   generate_channel_mesh, write_mesh)
from .ns import NSProblemSpec, NSSolver
from .spaces import Element, FieldFunction, FunctionSpace, MixedSpace
from .turbulence import TurbulenceSolver, coupled_rans_iteration
from .walldist import solve_eikonal

log = logging.getLogger("rans_lab.post")

# In-plane rotation used to express the 2D curl alegbra: dot(ROT, n) = (n1, -n0).
_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def streamfunction(u: FieldFunction, periodic=None,
                   pin_marker: int = WALL) -> FieldFunction:
    """Solve the Poisson problem for the streamfunction of a 2D velocity.

    The normal-derivative boundary data enters weakly; the pure-Neumann
    nullspace is removed by pinning psi = 0 at the lowest-index wall dof.
    """
    space = FunctionSpace(u.space.mesh, Element(u.space.element.degree, "scalar"))
    q = fe.TestField(space, name="q")
    psi = fe.TrialField(space, name="psi")
    n = fe.FacetNormal()
    curl_z = inner(grad(u), fe.ConstantTensor([[0.0, -1.0], [1.0, 0.0]]))
    a = inner(grad(q), grad(psi)) * dx
    L = q * curl_z * dx + q * inner(fe.as_expr(u), dot(fe.ConstantTensor(_ROT), n)) * ds()

    A = assemble(a)
    b = assemble(L, test_space=space)
    wall_dofs = space.boundary_scalar_dofs(pin_marker)
    bcs = [PinnedDof(int(wall_dofs.min()), 0.0)]
    if periodic is not None:
        bcs.insert(0, PeriodicCondition(space, periodic, INLET, OUTLET))
    A, b = apply_constraints(A, b, bcs)
    out = FieldFunction(space, name="psi")
    out.values[:] = sparse_lu_solve(A, b)
    return out


# ---------------------------------------------------------------------------
# VTK output
# ---------------------------------------------------------------------------

def _vertex_values(field: FieldFunction):
    nv = field.space.mesh.num_vertices
    ncomp = field.space.element.ncomp
    block = field.values[:ncomp * nv]
    return block.reshape(nv, ncomp)


def write_vtk(mesh: Mesh, fields: dict, path):
    """Legacy ASCII VTK unstructured grid with point data at vertices."""
    fmt = "%.17g"
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("rans-lab fields\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.num_vertices} double\n")
        for x, y in mesh.vertices:
            f.write(f"{fmt % x} {fmt % y} 0\n")
        f.write(f"CELLS {mesh.num_cells} {4 * mesh.num_cells}\n")
        for c in mesh.cells:
            f.write(f"3 {c[0]} {c[1]} {c[2]}\n")
        f.write(f"CELL_TYPES {mesh.num_cells}\n")
        f.write("5\n" * mesh.num_cells)
        f.write(f"POINT_DATA {mesh.num_vertices}\n")
        for name, field in fields.items():
            vals = _vertex_values(field)
            if vals.shape[1] == 1:
                f.write(f"SCALARS {name} double\n")
                f.write("LOOKUP_TABLE default\n")
                for v in vals[:, 0]:
                    f.write(f"{fmt % v}\n")
            elif vals.shape[1] == 2:
                f.write(f"VECTORS {name} double\n")
                for vx, vy in vals:
                    f.write(f"{fmt % vx} {fmt % vy} 0\n")
            else:
                for comp, tag in zip(range(vals.shape[1]), ("xx", "xy", "yy")):
                    f.write(f"SCALARS {name}_{tag} double\n")
                    f.write("LOOKUP_TABLE default\n")
                    for v in vals[:, comp]:
                        f.write(f"{fmt % v}\n")


def read_vtk_point_data(path) -> dict:
    """Re-read point data written by write_vtk (round-trip checks)."""
    out = {}
    with open(path) as f:
        lines = f.read().splitlines()
    i = 0
    npoints = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts and parts[0] == "POINT_DATA":
            npoints = int(parts[1])
        elif parts and parts[0] == "SCALARS":
            name = parts[1]
            vals = [float(lines[j]) for j in range(i + 2, i + 2 + npoints)]
            out[name] = np.array(vals)
            i += 1 + npoints
        elif parts and parts[0] == "VECTORS":
            name = parts[1]
            rows = [tuple(map(float, lines[j].split()))
                    for j in range(i + 1, i + 1 + npoints)]
            out[name] = np.array(rows)
            i += npoints
        i += 1
    return out


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def wall_shear_velocity(ns_solver, marker: int = WALL) -> float:
    """u_tau from the laminar wall shear: sqrt(nu * mean d(u_x)/dy at the wall)."""
    mesh = ns_solver.spec.mesh
    fc = mesh.boundary_facet_cells()
    rows = np.nonzero(mesh.facets[:, 2] == marker)[0]
    refv = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
    total, weight = 0.0, 0.0
    for k in range(3):
        batch = rows[fc[rows, 1] == k]
        if len(batch) == 0:
            continue
        cells = fc[batch, 0]
        mid = 0.5 * (refv[(k + 1) % 3] + refv[(k + 2) % 3])
        g = eval_grad_on_cells(ns_solver.u_, mid[None, :])  # (nc, 1, 2, 2)
        dudy = g[cells, 0, 0, 1]
        va = mesh.vertices[mesh.cells[cells, (k + 1) % 3]]
        vb = mesh.vertices[mesh.cells[cells, (k + 2) % 3]]
        lengths = np.linalg.norm(vb - va, axis=1)
        total += float((dudy * lengths).sum())
        weight += float(lengths.sum())
    tau_w = ns_solver.spec.nu * total / weight
    return float(np.sqrt(max(tau_w, 0.0)))


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_CONFIG_DEFAULTS = {
    "problem": "channel",
    "mesh": {"nx": 10, "ny": 50, "grading": 1.0},
    "model": "LaunderSharma",
    "e_d": 0.5,
    "degrees": {"velocity": 1, "pressure": 1, "turbulence": 1, "dq": 1},
    "omegas": {"ns": 0.8, "turb": 0.6},
    "max_iter": 50,
    "max_err": 1e-12,
    "tau": 0.01,
    "Re_tau": 395.0,
    "u_tau": 0.05,
    "linear_solver": "direct",
    "output_dir": "out",
}


@dataclass
class RunConfig:
    problem: str = "channel"
    mesh: dict = dfield(default_factory=lambda: dict(_CONFIG_DEFAULTS["mesh"]))
    model: str = "LaunderSharma"
    e_d: float = 0.5
    degrees: dict = dfield(default_factory=lambda: dict(_CONFIG_DEFAULTS["degrees"]))
    omegas: dict = dfield(default_factory=lambda: dict(_CONFIG_DEFAULTS["omegas"]))
    max_iter: int = 50
    max_err: float = 1e-12
    tau: float = 0.01
    Re_tau: float = 395.0
    u_tau: float = 0.05
    linear_solver: str = "direct"
    output_dir: str = "out"

    def __post_init__(self):
        if self.problem != "channel":
            raise ConfigError(f"unknown problem '{self.problem}' (only 'channel')")
        if not 0.0 <= self.e_d <= 1.0:
            raise ConfigError(f"e_d must lie in [0, 1], got {self.e_d}")
        if self.linear_solver not in ("direct", "gmres"):
            raise ConfigError(f"unknown linear solver '{self.linear_solver}'")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        merged = {}
        for key, default in _CONFIG_DEFAULTS.items():
            if isinstance(default, dict):
                sub = dict(default)
                given = data.get(key, {})
                unknown = set(given) - set(default)
                if unknown:
                    raise ConfigError(
                        f"unknown config key(s) under '{key}': " + ", ".join(sorted(unknown)))
                sub.update(given)
                merged[key] = sub
            else:
                merged[key] = data.get(key, default)
        unknown = set(data) - set(_CONFIG_DEFAULTS)
        if unknown:
            raise ConfigError("unknown config key(s): " + ", ".join(sorted(unknown)))
        return cls(**merged)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# the channel benchmark
# ---------------------------------------------------------------------------

CHANNEL_HEIGHT = 1.0   # half-channel height h (the paper's length scale)
CHANNEL_LENGTH = 1.0


def channel_ns_spec(cfg: RunConfig) -> NSProblemSpec:
    mesh = generate_channel_mesh(cfg.mesh["nx"], cfg.mesh["ny"],
                                 CHANNEL_LENGTH, CHANNEL_HEIGHT,
                                 grading=cfg.mesh.get("grading", 1.0))
    pm = build_periodic_map(mesh)
    nu = cfg.u_tau * CHANNEL_HEIGHT / cfg.Re_tau
    force = cfg.u_tau ** 2 / CHANNEL_HEIGHT  # constant pressure-gradient drive
    degrees = {"velocity": cfg.degrees["velocity"],
               "pressure": cfg.degrees["pressure"],
               "dq": cfg.degrees.get("dq", 1)}
    stab = None
    if degrees["velocity"] <= degrees["pressure"]:
        stab = {"tau": cfg.tau}
    return NSProblemSpec(
        mesh=mesh, nu=nu, body_force=(force, 0.0),
        velocity_bcs=[(WALL, (0.0, 0.0)), (SYMMETRY, 0.0, 1)],
        periodic=pm, degrees=degrees, stabilization=stab)


def write_convergence_csv(path, records):
    with open(path, "w") as f:
        f.write("iter,ns_residual,ns_dx,turb_residual,turb_dx\n")
        for row in records:
            f.write("%d,%.17g,%.17g,%.17g,%.17g\n" % tuple(row))


@dataclass
class BenchmarkRun:
    config: RunConfig
    result: object               # CoupledRunResult or None when max_iter = 0
    ns_solver: NSSolver
    turb_solver: TurbulenceSolver
    wall_distance: FieldFunction
    u_tau_computed: float
    wall_clock: float


def run_channel_benchmark(cfg: RunConfig, output_dir=None,
                          callback=None) -> BenchmarkRun:
    """Laminar pre-solve, turbulence initialization, coupled iteration,
    and output files (convergence.csv, fields_final.vtk, summary.json)."""
    from pathlib import Path

    t0 = time.perf_counter()
    outdir = Path(output_dir if output_dir is not None else cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    spec = channel_ns_spec(cfg)
    ns = NSSolver(spec, {"iteration_type": "Picard", "omega": 1.0,
                         "scheme_number": 1,
                         "linear_solver": cfg.linear_solver})
    ns.solve(max_iter=25, max_err=1e-13)          # laminar pre-solve
    log.info("laminar pre-solve done (max u = %.4g)", np.abs(ns.u_.values).max())

    wd = solve_eikonal(spec.mesh, WALL, eps=0.01,
                       degree=cfg.degrees.get("dq", 1))
    ns.prm["omega"] = cfg.omegas["ns"]
    tdeg = cfg.degrees.get("turbulence", 1)
    turb = TurbulenceSolver(
        ns, cfg.model, e_d=cfg.e_d,
        prm={"iteration_type": "Picard", "omega": cfg.omegas["turb"],
             "linear_solver": cfg.linear_solver},
        wall_distance=wd.y, u_tau=cfg.u_tau,
        degrees={"k": tdeg, "e": tdeg, "dq": cfg.degrees.get("dq", 1)})
    ns.update_derived()
    turb.initialize(0.01, 0.01)

    result = None
    if cfg.max_iter > 0:
        result = coupled_rans_iteration(ns, turb, max_iter=cfg.max_iter,
                                        max_err=cfg.max_err, callback=callback)

    u_tau_c = wall_shear_velocity(ns)
    wall_clock = time.perf_counter() - t0

    write_mesh(spec.mesh, outdir / "mesh.txt")
    write_convergence_csv(outdir / "convergence.csv",
                          result.records if result else [])
    psi = streamfunction(ns.u_, periodic=spec.periodic)
    fields = {
        "u": ns.u_, "p": ns.p_,
        "k": turb.state.q_["k"], "epsilon": turb.state.q_["e"],
        "nut": turb.nut_, "wall_distance": wd.y, "psi": psi,
    }
    write_vtk(spec.mesh, fields, outdir / "fields_final.vtk")
    summary = {
        "converged": bool(result.converged) if result else False,
        "iterations": result.iterations if result else 0,
        "final_errors": ({"ns_residual": result.records[-1][1],
                          "ns_dx": result.records[-1][2],
                          "turb_residual": result.records[-1][3],
                          "turb_dx": result.records[-1][4]}
                         if result and result.records else {}),
        "wall_clock_s": wall_clock,
        "model": cfg.model,
        "e_d": cfg.e_d,
        "u_tau_computed": u_tau_c,
    }
    with open(outdir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return BenchmarkRun(cfg, result, ns, turb, wd.y, u_tau_c, wall_clock)


def run_sweep(cfg: RunConfig, output_dir=None) -> dict:
    """models x e_d in {0, 0.25, 0.5, 0.75, 1}; failures are recorded and
    the sweep continues."""
    from pathlib import Path

    outdir = Path(output_dir if output_dir is not None else cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {"runs": []}
    for model in ("LaunderSharma", "JonesLaunder", "Chien"):
        for e_d in np.linspace(0.0, 1.0, 5):
            tag = f"{model}_ed{e_d:.2f}"
            sub = outdir / tag
            entry = {"model": model, "e_d": float(e_d), "directory": tag}
            try:
                run_cfg = RunConfig(**{**cfg.__dict__,
                                       "model": model, "e_d": float(e_d),
                                       "output_dir": str(sub)})
                run = run_channel_benchmark(run_cfg, output_dir=sub)
                entry["converged"] = bool(run.result.converged)
                entry["iterations"] = run.result.iterations
                entry["u_tau_computed"] = run.u_tau_computed
            except Exception as exc:  # keep sweeping on per-run failures
                log.exception("sweep run %s failed", tag)
                entry["error"] = f"{type(exc).__name__}: {exc}"
            summary["runs"].append(entry)
    with open(outdir / "sweep_summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return summary
