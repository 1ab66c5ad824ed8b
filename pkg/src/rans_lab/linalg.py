"""Sparse direct and iterative solvers plus the vector kernels.

Matrices are scipy CSR, vectors are numpy arrays.  The direct solver
caches its factorization so callers that signal an unchanged matrix
(reassemble_lhs=False) reuse it across nonlinear iterations.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularMatrixError


def norm(x) -> float:
    return float(np.linalg.norm(x))


def axpy(y: np.ndarray, a: float, x: np.ndarray) -> None:
    """In-place y <- y + a*x (aliased field views observe the update)."""
    if y.shape != x.shape:
        raise ValueError(f"axpy length mismatch: {y.shape} vs {x.shape}")
    y += a * x


def residual(A, x, b) -> float:
    """Euclidean norm of b - A x."""
    return norm(b - A @ x)


def check_finite(x, label="vector"):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{label} contains NaN or Inf")


class DirectSolver:
    """Sparse LU with a reusable factorization."""

    def __init__(self):
        self._lu = None
        self._shape = None

    def invalidate(self):
        self._lu = None

    def factor(self, A):
        if A.shape[0] != A.shape[1]:
            raise ValueError("direct solver needs a square matrix")
        try:
            self._lu = spla.splu(A.tocsc())
        except RuntimeError as exc:  # SuperLU signals singularity this way
            raise SingularMatrixError(str(exc)) from exc
        self._shape = A.shape

    def solve(self, A, b, reuse: bool = False) -> np.ndarray:
        if self._lu is None or not reuse:
            self.factor(A)
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("LU solve produced non-finite values")
        return x


def sparse_lu_solve(A, b) -> np.ndarray:
    """One-shot direct solve."""
    return DirectSolver().solve(A, b)


def gmres(A, x0, b, preconditioner: str | None = "ilu", rtol: float = 1e-8,
          maxit: int = 500, restart: int = 100):
    """Restarted GMRES; returns (x, iterations, converged) and never raises
    on breakdown."""
    if maxit <= 0:
        return np.array(x0, copy=True), 0, False
    M = None
    if preconditioner == "ilu":
        try:
            ilu = spla.spilu(A.tocsc(), drop_tol=0.0, fill_factor=1.0)
            M = spla.LinearOperator(A.shape, ilu.solve)
        except RuntimeError:
            M = None  # fall back to unpreconditioned iterations
    elif preconditioner not in (None, "none"):
        raise ValueError(f"unknown preconditioner '{preconditioner}'")

    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    try:
        x, info = spla.gmres(A, b, x0=x0, M=M, rtol=rtol, atol=0.0,
                             restart=restart, maxiter=maxit, callback=count,
                             callback_type="legacy")
    except Exception:
        return np.array(x0, copy=True), iters, False
    converged = info == 0 and np.all(np.isfinite(x))
    return x, iters, converged


def write_matrix_market(path, A_or_vec):
    """Export a matrix or vector for external debugging."""
    from scipy.io import mmwrite
    obj = A_or_vec
    if isinstance(obj, np.ndarray):
        obj = obj.reshape(-1, 1)
    mmwrite(str(path), sp.coo_matrix(obj) if not sp.issparse(obj) else obj.tocoo())
