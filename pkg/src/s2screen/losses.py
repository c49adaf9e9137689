"""Contrastive and combined training objectives.

The symmetric InfoNCE loss is implemented exactly as the displayed
formula: both directional log-softmax terms live inside one -(1/N) sum,
i.e. the two directions are summed, not averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

__all__ = [
    "ContrastiveConfig",
    "cosine_similarity_matrix",
    "infonce_symmetric",
    "total_loss",
]


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.1
    lam: float = 0.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("temperature must be positive")
        if self.lam < 0:
            raise ValueError("balancing coefficient must be nonnegative")


def cosine_similarity_matrix(h_p: Tensor, h_l: Tensor) -> Tensor:
    """Pairwise cosine similarities; entry (n, m) compares protein row n
    with ligand row m.  Rows are eps-guarded against zero vectors."""
    if h_p.shape[1] != h_l.shape[1]:
        raise ValueError(
            f"embedding dims differ: {h_p.shape} vs {h_l.shape}")
    return ag.matmul(ag.row_l2_normalize(h_p),
                     ag.transpose(ag.row_l2_normalize(h_l)))


def _diag_sum(matrix: Tensor) -> Tensor:
    n = matrix.shape[0]
    return ag.sum_all(ag.elementwise_mul(matrix, ag.constant(np.eye(n))))


def infonce_symmetric(h_p: Tensor, h_l: Tensor, tau: float = 0.1) -> Tensor:
    """Symmetric in-batch contrastive loss over matched rows.

    loss = -(1/N) sum_n [ log softmax_cols(S)_nn + log softmax_rows(S)_nn ]
    with S the cosine matrix over tau.  Both directional terms are summed
    inside the same -(1/N), so the N=2 all-identical case evaluates to
    2 ln 2.
    """
    if not tau > 0:
        raise ValueError("temperature must be positive")
    n = h_p.shape[0]
    if n < 1 or h_l.shape[0] != n:
        raise ValueError("need matched, nonempty embedding batches")
    sims = ag.scalar_scale(cosine_similarity_matrix(h_p, h_l), 1.0 / tau)
    over_ligands = _diag_sum(ag.log(ag.softmax_rows(sims)))
    over_proteins = _diag_sum(ag.log(ag.softmax_rows(ag.transpose(sims))))
    return ag.scalar_scale(ag.add(over_ligands, over_proteins), -1.0 / n)


def total_loss(l_fc: Tensor, l_bsp: Tensor, lam: float = 0.5) -> Tensor:
    """Finetuning objective: contrastive term plus lam times the
    binding-site term."""
    return ag.add(l_fc, ag.scalar_scale(l_bsp, lam))
