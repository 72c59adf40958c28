"""GMsFEM offline stage: local spectral problems, multiscale bases, restriction matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._validation import ConfigurationError, EigenResidualError, FactorizationError, ShapeError
from .fem import assemble_mass_weighted, assemble_stiffness
from .grid import GridPair, LocalDomain, PartitionFunction, enumerate_local_domains, partition_of_unity

RESIDUAL_TOL = 1e-8


@dataclass
class LocalEigenpairs:
    eigenvalues: np.ndarray  # (N,), ascending
    eigenvectors: np.ndarray  # (n_dofs, N), S-orthonormal columns
    residuals: np.ndarray | None = None

    @property
    def count(self) -> int:
        return len(self.eigenvalues)


@dataclass
class BasisSet:
    domain_index: int
    vectors: np.ndarray  # (N_bf, rows, cols) patch-nodal values

    @property
    def n_basis(self) -> int:
        return self.vectors.shape[0]

    def matrix(self) -> np.ndarray:
        """Column-stacked basis, shape ``(n_patch_nodes, N_bf)``."""
        return self.vectors.reshape(self.n_basis, -1).T


def assemble_local_matrices(grid: GridPair, kappa, domain: LocalDomain):
    """Neumann stiffness and kappa-weighted mass on the full patch of ``domain``."""
    kappa = getattr(kappa, "values", kappa)
    return assemble_stiffness(grid, kappa, domain), assemble_mass_weighted(grid, kappa, domain)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry positive; argmax takes the lowest index on ties
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigen_residuals(A, S, eigenvalues, eigenvectors) -> np.ndarray:
    """Relative residuals ``|A phi - lam S phi| / |A phi|``.

    For (near-)null vectors ``|A phi|`` is itself round-off, so those use
    the normwise backward error ``|r| / ((|A| + |lam| |S|) |phi|)`` instead.
    """
    AV = A @ eigenvectors
    R = AV - (S @ eigenvectors) * eigenvalues
    r = np.linalg.norm(R, axis=0)
    a_norm = abs(A).sum(axis=0).max() if sp.issparse(A) else np.abs(A).sum(axis=0).max()
    s_norm = abs(S).sum(axis=0).max() if sp.issparse(S) else np.abs(S).sum(axis=0).max()
    v_norm = np.linalg.norm(eigenvectors, axis=0)
    backward = (a_norm + np.abs(eigenvalues) * s_norm) * v_norm
    av = np.linalg.norm(AV, axis=0)
    null_like = av <= 1e-6 * a_norm * v_norm
    return np.where(null_like, r / backward, r / np.where(null_like, 1.0, av))


def _dense_eigenpairs(A, S, n):
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)
    S = S.toarray() if sp.issparse(S) else np.asarray(S, dtype=np.float64)
    try:
        L = sla.cholesky(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("mass matrix is not positive definite") from exc
    C = sla.solve_triangular(L, A, lower=True)
    C = sla.solve_triangular(L, C.T, lower=True)
    C = 0.5 * (C + C.T)
    w, y = sla.eigh(C, subset_by_index=[0, n - 1], driver="evr")
    return w, sla.solve_triangular(L, y, lower=True, trans="T")


def _sparse_eigenpairs(A, S, n):
    A, S = sp.csc_matrix(A), sp.csc_matrix(S)
    # negative shift keeps A - sigma S positive definite despite the constant null vector
    sigma = -1e-2 * A.diagonal().mean() / S.diagonal().mean()
    v0 = np.ones(A.shape[0])
    try:
        w, V = spla.eigsh(A, k=n, M=S, sigma=sigma, which="LM", v0=v0, tol=0.0)
    except RuntimeError as exc:  # factorization failure inside ARPACK
        raise FactorizationError(f"shift-invert eigensolve failed: {exc}") from exc
    # re-orthonormalize in the S inner product (Loewdin keeps vectors closest to ARPACK's)
    G = V.T @ (S @ V)
    gw, gv = np.linalg.eigh(0.5 * (G + G.T))
    V = V @ (gv @ np.diag(gw**-0.5) @ gv.T)
    return w, V


def solve_local_eigenproblem(A, S, n_requested: int, method: str = "sparse", check: bool = True) -> LocalEigenpairs:
    """Smallest ``n_requested`` eigenpairs of ``A phi = lam S phi``.

    ``method="dense"`` reduces through the Cholesky factor of ``S`` and a
    symmetric eigensolve; ``"sparse"`` uses shift-invert Lanczos. Both return
    ascending eigenvalues, S-orthonormal eigenvectors and deterministic signs.
    """
    n_dofs = A.shape[0]
    if not 1 <= n_requested <= n_dofs:
        raise ConfigurationError(f"n_requested must lie in [1, {n_dofs}], got {n_requested}")
    if method == "sparse" and n_requested >= n_dofs - 1:
        method = "dense"  # ARPACK needs k < n
    if method == "dense":
        w, V = _dense_eigenpairs(A, S, n_requested)
    elif method == "sparse":
        w, V = _sparse_eigenpairs(A, S, n_requested)
    else:
        raise ConfigurationError(f"unknown eigensolver method {method!r}")
    order = np.argsort(w, kind="stable")
    w, V = w[order], _fix_signs(V[:, order])
    res = eigen_residuals(A, S, w, V) if check else None
    if check and np.any(res > RESIDUAL_TOL):
        j = int(np.argmax(res))
        raise EigenResidualError(f"eigenpair {j} residual {res[j]:.3e} exceeds {RESIDUAL_TOL:g}")
    return LocalEigenpairs(w, V, res)


def build_multiscale_basis(
    pairs: LocalEigenpairs, chi: PartitionFunction, n_basis: int, boundary_mask=None
) -> BasisSet:
    """``psi_j = chi * phi_j`` for the ``n_basis`` smallest eigenvalues.

    ``boundary_mask`` (patch-shaped, True on the global boundary) zeroes the
    Dirichlet nodes.
    """
    if n_basis > pairs.count:
        raise ConfigurationError(f"requested {n_basis} basis functions but only {pairs.count} eigenpairs")
    shape = chi.values.shape
    phi = pairs.eigenvectors[:, :n_basis].T.reshape(n_basis, *shape)
    psi = chi.values[None] * phi
    if boundary_mask is not None:
        psi[:, boundary_mask] = 0.0
    return BasisSet(chi.domain_index, psi)


def local_basis(grid: GridPair, kappa, domain: LocalDomain, n_basis: int, n_extra: int = 4, method: str = "sparse"):
    """Offline stage for one local domain; returns ``(BasisSet, LocalEigenpairs)``."""
    A, S = assemble_local_matrices(grid, kappa, domain)
    n_req = min(n_basis + n_extra, A.shape[0])
    pairs = solve_local_eigenproblem(A, S, n_req, method=method)
    basis = build_multiscale_basis(
        pairs, partition_of_unity(grid, domain), n_basis, domain.extract(grid.boundary_mask)
    )
    return basis, pairs


def compute_bases(grid: GridPair, kappa, n_basis: int = 8, n_extra: int = 4, method: str = "sparse", return_pairs=False):
    """Exact multiscale bases for every local domain, in domain order."""
    out, pairs = [], []
    for domain in enumerate_local_domains(grid):
        b, p = local_basis(grid, kappa, domain, n_basis, n_extra, method)
        out.append(b)
        pairs.append(p)
    return (out, pairs) if return_pairs else out


def _interior_lookup(grid: GridPair) -> np.ndarray:
    lookup = np.full(grid.n_nodes, -1, dtype=np.int64)
    lookup[grid.interior_index] = np.arange(grid.n_interior)
    return lookup


def assemble_restriction(bases, grid: GridPair) -> sp.csr_matrix:
    """Rows are basis vectors extended by zero, ordered (domain, j); columns are interior dofs."""
    domains = enumerate_local_domains(grid)
    if len(bases) != len(domains):
        raise ShapeError(f"expected {len(domains)} basis sets, got {len(bases)}")
    n_bf = {b.n_basis for b in bases}
    if len(n_bf) != 1:
        raise ConfigurationError(f"inconsistent N_bf across domains: {sorted(n_bf)}")
    n_bf = n_bf.pop()
    lookup = _interior_lookup(grid)
    rows, cols, vals = [], [], []
    for domain, basis in zip(domains, bases):
        if basis.vectors.shape[1:] != domain.patch_shape:
            raise ShapeError(
                f"basis for domain {domain.index} has patch shape {basis.vectors.shape[1:]}, "
                f"expected {domain.patch_shape}"
            )
        dof = lookup[domain.patch_node_index(grid)]
        keep = dof >= 0
        for j in range(n_bf):
            v = basis.vectors[j].ravel()[keep]
            rows.append(np.full(v.size, domain.index * n_bf + j))
            cols.append(dof[keep])
            vals.append(v)
    R = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(domains) * n_bf, grid.n_interior),
    )
    R.eliminate_zeros()
    return R
