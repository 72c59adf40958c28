"""GMsFEM online stage: projection through a restriction matrix, coarse solve, reconstruction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ._validation import FactorizationError, ShapeError, check_field
from .fem import (
    FineSolution,
    PicardOptions,
    assemble_stiffness,
    interior_system,
    load_vector,
    picard_iterate,
)
from .grid import GridPair

logger = logging.getLogger(__name__)

TIKHONOV_DELTA = 1e-12


@dataclass
class CoarseSystem:
    A0: np.ndarray
    f0: np.ndarray


@dataclass
class CoarseSolution:
    values: np.ndarray
    regularized: bool = False
    shift: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def project(A, b, R) -> CoarseSystem:
    """Galerkin projection ``A0 = R A R^T``, ``f0 = R b`` onto the span of R's rows."""
    if A.shape[0] != A.shape[1] or A.shape[0] != R.shape[1] or b.shape[0] != R.shape[1]:
        raise ShapeError(f"dimension mismatch: A {A.shape}, b {b.shape}, R {R.shape}")
    RA = R @ A
    A0 = RA @ R.T
    A0 = A0.toarray() if sp.issparse(A0) else np.asarray(A0)
    A0 = 0.5 * (A0 + A0.T)
    return CoarseSystem(A0, np.asarray(R @ b).ravel())


def _cholesky_checked(M: np.ndarray):
    scale = max(np.max(np.abs(np.diag(M))), np.finfo(float).tiny)
    try:
        c = sla.cho_factor(M, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        return None
    # a numerically zero pivot means the pencil is singular even if LAPACK did not stop
    if np.min(np.diag(c[0])) ** 2 <= 1e-13 * scale:
        return None
    return c


def solve_coarse(system: CoarseSystem) -> CoarseSolution:
    """Cholesky solve of the coarse system, with a diagonal Tikhonov fallback."""
    A0, f0 = system.A0, system.f0
    n = A0.shape[0]
    zero_rows = np.flatnonzero(np.abs(A0).sum(axis=1) == 0)
    if len(zero_rows):
        # a null basis function carries no information; regularizing would hide it
        raise FactorizationError(
            f"coarse matrix singular: {len(zero_rows)} zero rows (first: {zero_rows[:10].tolist()})"
        )
    c = _cholesky_checked(A0)
    shift = 0.0
    if c is None:
        shift = TIKHONOV_DELTA * np.trace(A0) / n
        c = _cholesky_checked(A0 + shift * np.eye(n))
        if c is None:
            raise FactorizationError(f"coarse matrix singular after Tikhonov shift {shift:.3e}")
        logger.warning("coarse matrix not positive definite; Tikhonov shift %.3e applied", shift)
    u0 = sla.cho_solve(c, f0)
    fn = np.linalg.norm(f0)
    res = np.linalg.norm(A0 @ u0 - f0) / fn if fn > 0 else 0.0
    return CoarseSolution(u0, regularized=shift > 0, shift=float(shift), diagnostics={"residual": float(res)})


def reconstruct(u0, R, grid: GridPair) -> FineSolution:
    """Prolongate ``u = R^T u0`` and reattach zero Dirichlet values."""
    u0 = getattr(u0, "values", u0)
    return FineSolution(grid.from_interior(R.T @ u0))


def _coarse_linear_solve(grid, R, coeff, b, diagnostics):
    A = assemble_stiffness(grid, coeff)
    A_int, b_int = interior_system(grid, A, b)
    sol = solve_coarse(project(A_int, b_int, R))
    diagnostics["regularized"] = diagnostics.get("regularized", False) or sol.regularized
    return reconstruct(sol.values, R, grid).values


def solve_gmsfem_diffusion(grid: GridPair, kappa, f, R) -> FineSolution:
    kappa = check_field(getattr(kappa, "values", kappa), grid, name="kappa", positive=True)
    b = load_vector(grid, getattr(f, "values", f))
    diag = {}
    u = _coarse_linear_solve(grid, R, kappa, b, diag)
    return FineSolution(u, diagnostics=diag)


def solve_gmsfem_richards(grid: GridPair, kappa, f, R, picard: PicardOptions = PicardOptions()) -> FineSolution:
    """Coarse Picard loop: re-project the relinearized operator through the fixed ``R``."""
    kappa = check_field(getattr(kappa, "values", kappa), grid, name="kappa", positive=True)
    b = load_vector(grid, getattr(f, "values", f))
    diag = {}
    sol = picard_iterate(lambda c: _coarse_linear_solve(grid, R, c, b, diag), kappa, kappa.shape, picard)
    sol.diagnostics.update(diag)
    return sol


def breakeven(t_data: float, t_train: float, t_inf: float, t_gmsfem: float) -> float:
    """Inference count ``x`` with ``t_data + t_train + t_inf x = t_gmsfem x``.

    Returns ``inf`` when inference is not cheaper than the classical offline stage.
    """
    if t_gmsfem <= t_inf:
        return math.inf
    return (t_data + t_train) / (t_gmsfem - t_inf)


def subspace_error_diagnostic(u, u_exact_basis, u_learned_basis, norm=np.linalg.norm) -> dict:
    """Both sides of ``|u - a| <= |u - b| + |b - a|`` for learned (a) vs exact (b) solutions."""
    u, a, b = (np.ravel(getattr(x, "values", x)) for x in (u, u_learned_basis, u_exact_basis))
    lhs = norm(u - a)
    gmsfem_term = norm(u - b)
    basis_term = norm(b - a)
    return {"lhs": float(lhs), "gmsfem_error": float(gmsfem_term), "basis_error": float(basis_term),
            "rhs": float(gmsfem_term + basis_term), "holds": bool(lhs <= gmsfem_term + basis_term + 1e-14 * max(lhs, 1.0))}
