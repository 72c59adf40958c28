"""P1 finite elements on the structured fine grid.

Every fine square is split along its (0,0)-(h,h) diagonal into two triangles.
Coefficients are taken per triangle as the mean of the three vertex values,
so element integrals are exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._validation import FactorizationError, ShapeError, UndefinedMetricError, check_field
from .grid import GridPair, LocalDomain

logger = logging.getLogger(__name__)

# local vertex offsets (dy, dx) of the two triangles of a unit square
_TRIANGLES = (
    ((0, 0), (0, 1), (1, 1)),
    ((0, 0), (1, 1), (1, 0)),
)


def _reference_matrices():
    stiff, mass = [], []
    for tri in _TRIANGLES:
        P = np.array([[1.0, dx, dy] for dy, dx in tri])
        grads = np.linalg.inv(P)[1:, :].T  # rows: grad of each barycentric coordinate
        area = 0.5 * abs(np.linalg.det(P))
        stiff.append(area * grads @ grads.T)
        mass.append(area / 12.0 * (np.ones((3, 3)) + np.eye(3)))
    return np.array(stiff), np.array(mass)


# the 2-D P1 stiffness is invariant under mesh scaling; mass scales with h^2
_REF_STIFFNESS, _REF_MASS = _reference_matrices()


def _triangle_connectivity(ny: int, nx: int) -> np.ndarray:
    """Node indices of every triangle, shape ``(2 * (ny-1) * (nx-1), 3)``."""
    iy, ix = np.mgrid[0 : ny - 1, 0 : nx - 1]
    iy, ix = iy.ravel(), ix.ravel()
    conn = []
    for tri in _TRIANGLES:
        conn.append(np.stack([(iy + dy) * nx + (ix + dx) for dy, dx in tri], axis=1))
    return np.concatenate(conn)


@lru_cache(maxsize=16)
def _pattern(ny: int, nx: int):
    conn = _triangle_connectivity(ny, nx)
    rows = np.repeat(conn, 3, axis=1).ravel()
    cols = np.tile(conn, (1, 3)).ravel()
    return conn, rows, cols


def _assemble(coeff: np.ndarray, scale: float, reference: np.ndarray) -> sp.csr_matrix:
    ny, nx = coeff.shape
    conn, rows, cols = _pattern(ny, nx)
    ntri = conn.shape[0] // 2
    tri_coeff = coeff.ravel()[conn].mean(axis=1)
    local = np.concatenate(
        [
            tri_coeff[:ntri, None, None] * reference[0],
            tri_coeff[ntri:, None, None] * reference[1],
        ]
    )
    n = ny * nx
    A = sp.coo_matrix((scale * local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def _region_coefficient(grid: GridPair, coeff, region):
    arr = check_field(coeff, grid, name="coefficient")
    if region is not None:
        arr = region.extract(arr)
    if np.any(arr <= 0):
        raise ValueError(f"coefficient must be strictly positive (min {arr.min():.3g})")
    return arr


def assemble_stiffness(grid: GridPair, kappa, region: LocalDomain | None = None) -> sp.csr_matrix:
    """Neumann stiffness ``int kappa grad v . grad w`` on the whole grid or a patch."""
    return _assemble(_region_coefficient(grid, kappa, region), 1.0, _REF_STIFFNESS)


def assemble_mass_weighted(grid: GridPair, kappa, region: LocalDomain | None = None) -> sp.csr_matrix:
    """Weighted mass ``int kappa v w`` on the whole grid or a patch."""
    return _assemble(_region_coefficient(grid, kappa, region), grid.h**2, _REF_MASS)


@lru_cache(maxsize=8)
def unweighted_matrices(grid: GridPair):
    """Plain (kappa = 1) mass and stiffness over the whole grid."""
    ones = np.ones((grid.n_fine, grid.n_fine))
    return assemble_mass_weighted(grid, ones), assemble_stiffness(grid, ones)


def load_vector(grid: GridPair, f) -> np.ndarray:
    """Consistent P1 load ``M f`` for a nodal forcing field."""
    M, _ = unweighted_matrices(grid)
    return M @ check_field(f, grid, name="forcing").ravel()


@dataclass
class FineSolution:
    values: np.ndarray
    picard_iterations: int = 0
    final_update: float = 0.0
    converged: bool = True
    update_history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def interior_system(grid: GridPair, A: sp.spmatrix, b=None):
    idx = grid.interior_index
    A_int = A[idx][:, idx].tocsc()
    return A_int, (None if b is None else b[idx])


def sparse_solve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Direct sparse solve of an SPD system (SuperLU, symmetric ordering)."""
    try:
        lu = spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0)
    except RuntimeError as exc:
        raise FactorizationError(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise FactorizationError("sparse solve produced non-finite values")
    return x


def solve_dirichlet(grid: GridPair, coeff, b: np.ndarray) -> np.ndarray:
    A = assemble_stiffness(grid, coeff)
    A_int, b_int = interior_system(grid, A, b)
    return grid.from_interior(sparse_solve(A_int, b_int))


def solve_fine_diffusion(grid: GridPair, kappa, f) -> FineSolution:
    b = load_vector(grid, getattr(f, "values", f))
    A = assemble_stiffness(grid, getattr(kappa, "values", kappa))
    A_int, b_int = interior_system(grid, A, b)
    u_int = sparse_solve(A_int, b_int)
    bn = np.linalg.norm(b_int)
    residual = np.linalg.norm(A_int @ u_int - b_int) / bn if bn > 0 else 0.0
    return FineSolution(grid.from_interior(u_int), diagnostics={"residual": float(residual)})


@dataclass(frozen=True)
class PicardOptions:
    tol: float = 1e-6
    max_iter: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("Picard tol must be positive")
        if self.max_iter < 1:
            raise ValueError("Picard max_iter must be >= 1")


def haverkamp_coefficient(kappa: np.ndarray, u: np.ndarray) -> np.ndarray:
    return kappa / (1.0 + np.abs(u))


def picard_iterate(linear_solve, kappa: np.ndarray, shape, options: PicardOptions) -> FineSolution:
    """Fixed-point relinearization for the Haverkamp conductivity.

    ``linear_solve(coeff)`` must return the nodal solution of the linear
    Dirichlet problem with the frozen coefficient ``coeff``.
    """
    u = np.zeros(shape)
    history = []
    converged = False
    for it in range(1, options.max_iter + 1):
        u_new = linear_solve(haverkamp_coefficient(kappa, u))
        norm_new = np.linalg.norm(u_new)
        update = np.linalg.norm(u_new - u) / norm_new if norm_new > 0 else 0.0
        history.append(float(update))
        u = u_new
        if update <= options.tol:
            converged = True
            break
    if not converged:
        logger.warning("Picard iteration did not converge in %d steps (update %.3e)", it, update)
    return FineSolution(u, picard_iterations=it, final_update=history[-1], converged=converged, update_history=history)


def solve_fine_richards(grid: GridPair, kappa, f, picard: PicardOptions = PicardOptions()) -> FineSolution:
    kappa = check_field(getattr(kappa, "values", kappa), grid, name="kappa", positive=True)
    b = load_vector(grid, getattr(f, "values", f))
    return picard_iterate(lambda c: solve_dirichlet(grid, c, b), kappa, kappa.shape, picard)


def relative_errors(u_ref, u, grid: GridPair) -> tuple[float, float]:
    """Relative L2 and H1-seminorm errors of ``u`` against ``u_ref``."""
    a = np.asarray(getattr(u_ref, "values", u_ref), dtype=np.float64).ravel()
    b = np.asarray(getattr(u, "values", u), dtype=np.float64).ravel()
    if a.shape != (grid.n_nodes,) or b.shape != a.shape:
        raise ShapeError("solutions must be nodal fields on the same grid")
    M, K = unweighted_matrices(grid)
    e = a - b
    ref_l2, ref_h1 = a @ (M @ a), a @ (K @ a)
    if ref_l2 <= 0 or ref_h1 <= 0:
        raise UndefinedMetricError("reference solution is zero; relative error undefined")
    l2 = np.sqrt(max(e @ (M @ e), 0.0) / ref_l2)
    h1 = np.sqrt(max(e @ (K @ e), 0.0) / ref_h1)
    return float(l2), float(h1)
