"""Differentiable (torch) versions of the subspace training losses.

Batched over local-domain samples: bases are ``(B, n_dofs, N_bf)``.
"""

from __future__ import annotations

import torch

LOSS_KINDS = ("rbfl2", "sal", "sal-pr")


def orthonormal(P: torch.Tensor) -> torch.Tensor:
    return torch.linalg.qr(P, mode="reduced").Q


def sal(Q_target: torch.Tensor, P_pred: torch.Tensor) -> torch.Tensor:
    """Per-sample ``N_bf - |Q_t^T Q_p|_F^2``."""
    Qp = orthonormal(P_pred)
    M = Q_target.transpose(1, 2) @ Qp
    return Q_target.shape[-1] - (M * M).sum(dim=(1, 2))


def projection_penalty(Q_target, P_pred, V) -> torch.Tensor:
    """Per-sample mean over columns of ``V`` of ``|(P_t - P_p) v|^2``; ``V`` is ``(B, n_dofs, n_vec)``."""
    Qp = orthonormal(P_pred)
    D = Q_target @ (Q_target.transpose(1, 2) @ V) - Qp @ (Qp.transpose(1, 2) @ V)
    return (D * D).sum(dim=1).mean(dim=1)


def rbfl2(T: torch.Tensor, P: torch.Tensor) -> torch.Tensor:
    """Per-sample mean over basis functions of the sign-invariant relative L2 error."""
    norms = (T * T).sum(dim=1)
    minus = ((T - P) ** 2).sum(dim=1) / norms
    plus = ((T + P) ** 2).sum(dim=1) / norms
    return torch.minimum(minus, plus).mean(dim=1)
