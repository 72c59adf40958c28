"""Subspace algebra: orthonormalization, alignment losses and Grassmannian distance.

All functions take bases either as :class:`~msno.msbasis.BasisSet` objects or
as column-stacked ``(n_dofs, N_bf)`` arrays.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import RankDeficiencyError, ShapeError
from .field import STREAM_SUBSPACE, stream_rng

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass
class OrthonormalBasis:
    Q: np.ndarray  # (n_dofs, N_bf)
    rank: int
    deficient: np.ndarray  # boolean flag per column

    @property
    def n_basis(self) -> int:
        return self.Q.shape[1]

    @property
    def effective(self) -> np.ndarray:
        return self.Q[:, ~self.deficient]


def as_matrix(basis) -> np.ndarray:
    if hasattr(basis, "matrix"):
        return basis.matrix()
    arr = np.asarray(basis, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"basis must be a 2-D (n_dofs, N_bf) array, got shape {arr.shape}")
    return arr


def orthonormalize(basis) -> OrthonormalBasis:
    """Thin Householder QR; columns with a negligible R diagonal are flagged.

    Householder Q columns stay orthonormal even where R is rank deficient, so a
    flagged column is already the QR completion direction.
    """
    if isinstance(basis, OrthonormalBasis):
        return basis
    X = as_matrix(basis)
    if not np.any(X):
        raise RankDeficiencyError("cannot orthonormalize an all-zero basis")
    Q, R = np.linalg.qr(X, mode="reduced")
    d = np.abs(np.diag(R))
    deficient = d < RANK_TOL * d.max()
    if deficient.any():
        logger.info("rank-deficient basis: %d of %d columns flagged", deficient.sum(), len(d))
    return OrthonormalBasis(Q, int((~deficient).sum()), deficient)


def _pair(target, predicted):
    t, p = orthonormalize(target), orthonormalize(predicted)
    if t.Q.shape != p.Q.shape:
        raise ShapeError(f"basis shapes differ: {t.Q.shape} vs {p.Q.shape}")
    return t, p


def overlap(target, predicted) -> float:
    """Squared Frobenius norm of ``Q_t^T Q_p``."""
    t, p = _pair(target, predicted)
    M = t.Q.T @ p.Q
    return float(np.sum(M * M))


def sal_loss(target, predicted) -> float:
    """Subspace alignment loss ``N_bf - |Q_t^T Q_p|_F^2``, clamped at zero."""
    t, p = _pair(target, predicted)
    M = t.Q.T @ p.Q
    return max(0.0, t.n_basis - float(np.sum(M * M)))


def sal_pr_loss(
    target,
    predicted,
    target_basis=None,
    lam: float = 1.0,
    n_vectors: int = 10,
    seed: int = 0,
    stream: tuple = (),
) -> float:
    """SAL plus ``lam`` times the mean squared projection mismatch of random target-space vectors.

    Test vectors are ``v = Psi c`` with ``c ~ N(0, I)``, ``Psi`` the raw
    (non-orthonormalized) target basis; draws are keyed by ``(seed, stream)``.
    """
    if n_vectors < 1:
        raise ValueError("n_vectors must be >= 1")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    t, p = _pair(target, predicted)
    Psi = as_matrix(target if target_basis is None else target_basis)
    if Psi.shape[0] != t.Q.shape[0]:
        raise ShapeError("target_basis lives in a different dof space")
    c = stream_rng(seed, STREAM_SUBSPACE, *stream).standard_normal((Psi.shape[1], n_vectors))
    V = Psi @ c
    diff = t.Q @ (t.Q.T @ V) - p.Q @ (p.Q.T @ V)
    penalty = float(np.mean(np.sum(diff * diff, axis=0)))
    return sal_loss(t, p) + lam * penalty


def rbfl2_loss(target, predicted) -> float:
    """Sign-invariant relative L2 loss, averaged over basis functions."""
    T, P = as_matrix(target), as_matrix(predicted)
    if T.shape != P.shape:
        raise ShapeError(f"basis shapes differ: {T.shape} vs {P.shape}")
    norms = np.sum(T * T, axis=0)
    if np.any(norms == 0):
        raise ValueError("target basis contains a zero vector")
    minus = np.sum((T - P) ** 2, axis=0) / norms
    plus = np.sum((T + P) ** 2, axis=0) / norms
    return float(np.mean(np.minimum(minus, plus)))


def grassmann_distance(target, predicted, self_check: bool | None = None, atol: float = 1e-8) -> float:
    """Grassmannian distance ``sqrt(k - |Q_t^T Q_p|_F^2)``, evaluated as ``|Q_p - Q_t Q_t^T Q_p|_F``.

    With ``self_check`` the projector form ``|P_t - P_p|_F / sqrt(2)`` is
    evaluated explicitly and must agree to ``atol``; by default it runs when
    the dof count is at most 2048.
    """
    t, p = _pair(target, predicted)
    Qt, Qp = t.Q, p.Q
    if t.rank != t.n_basis or p.rank != p.n_basis:
        warnings.warn(
            f"rank-deficient subspaces (ranks {t.rank}, {p.rank}); using effective ranks",
            RuntimeWarning,
            stacklevel=2,
        )
        Qt, Qp = t.effective, p.effective
    k = min(Qt.shape[1], Qp.shape[1])
    M = Qt.T @ Qp
    if Qt.shape[1] == Qp.shape[1]:
        # |Q_p - Q_t M|_F^2 equals k - |M|_F^2 but keeps its digits when d is small
        E = Qp - Qt @ M
        d = float(np.sqrt(np.sum(E * E)))
    else:
        d = float(np.sqrt(max(0.0, k - np.sum(M * M))))
    if self_check is None:
        self_check = Qt.shape[0] <= 2048
    if self_check and Qt.shape[1] == Qp.shape[1]:
        d_proj = projector_distance(Qt, Qp)
        if abs(d - d_proj) > atol:
            raise AssertionError(f"Grassmann formulas disagree: {d!r} vs {d_proj!r}")
    return d


def projector_distance(Qt: np.ndarray, Qp: np.ndarray) -> float:
    """``|Q_t Q_t^T - Q_p Q_p^T|_F / sqrt(2)`` with explicit projectors."""
    D = Qt @ Qt.T - Qp @ Qp.T
    return float(np.linalg.norm(D, "fro") / np.sqrt(2.0))


def principal_angles(target, predicted) -> np.ndarray:
    t, p = _pair(target, predicted)
    s = np.linalg.svd(t.Q.T @ p.Q, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))
