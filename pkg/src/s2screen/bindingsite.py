"""Auxiliary binding-site prediction head.

Ligand probes attend over the full residue sequence through a shared
bilinear projection; the per-residue binding probability is the average of
the K probe attention distributions, so it always sums to 1 over residues.
Only sequence representations feed this head, never structure, to keep the
auxiliary signal leakage-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

__all__ = [
    "ProbeAttentionParams",
    "init_probe_attention",
    "sample_probe_ids",
    "probe_attention",
    "residue_binding_prob",
    "bsp_loss",
]

PROB_CLAMP = 1e-12


@dataclass
class ProbeAttentionParams:
    """Shared bilinear attention maps: residues through w_res (d_s -> d),
    probe embeddings through w_lig (d -> d)."""

    w_res: Tensor
    w_lig: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"w_res": self.w_res, "w_lig": self.w_lig}


def init_probe_attention(rng: np.random.Generator, d_s: int, d: int = 64
                         ) -> ProbeAttentionParams:
    return ProbeAttentionParams(
        w_res=ag.parameter(rng.standard_normal((d_s, d)) / np.sqrt(d_s)),
        w_lig=ag.parameter(rng.standard_normal((d, d)) / np.sqrt(d)),
    )


def sample_probe_ids(batch_ligand_ids: Sequence[str], paired_id: str,
                     k: int, rng: np.random.Generator) -> list[str]:
    """Choose K probe ligands: always the paired ligand first, then K - 1
    others drawn uniformly without replacement from the rest of the batch
    (with replacement once the batch is smaller than K)."""
    if k < 1:
        raise ValueError("probe count must be >= 1")
    if paired_id not in batch_ligand_ids:
        raise ValueError(f"paired ligand {paired_id!r} not in batch")
    others = [lid for lid in batch_ligand_ids if lid != paired_id]
    picks = [paired_id]
    need = k - 1
    if need:
        if not others:
            picks.extend([paired_id] * need)
        elif need <= len(others):
            chosen = rng.choice(len(others), size=need, replace=False)
            picks.extend(others[int(i)] for i in chosen)
        else:
            chosen = rng.choice(len(others), size=need, replace=True)
            picks.extend(others[int(i)] for i in chosen)
    return picks


def probe_attention(params: ProbeAttentionParams, x_seq: Tensor,
                    probes: Tensor) -> Tensor:
    """Attention of each probe over the residues.

    ``x_seq`` is I x d_s residue rows, ``probes`` K x d probe embeddings.
    Returns K x I rows of probabilities, each summing to 1: row k is the
    softmax over residues of (W_r x_i) . (W_l probe_k).
    """
    if x_seq.shape[0] < 1:
        raise ValueError("probe_attention needs at least one residue")
    scores = ag.matmul(ag.matmul(x_seq, params.w_res),
                       ag.transpose(ag.matmul(probes, params.w_lig)))
    return ag.softmax_rows(ag.transpose(scores))


def residue_binding_prob(alphas: Tensor) -> Tensor:
    """Average the K probe attention rows into one distribution (1 x I)."""
    if alphas.values.ndim != 2:
        raise ValueError("expected a K x I attention matrix")
    return ag.mean_rows(alphas)


def bsp_loss(y_hats: Sequence[Tensor], labels: Sequence[np.ndarray]
             ) -> Tensor:
    """Summed binary cross-entropy per protein, averaged over the batch.

    Each ``y_hats`` entry is a 1 x I probability row (clamped into
    [1e-12, 1 - 1e-12] here); ``labels`` holds matching 0/1 arrays.  Note
    the predictions sum to 1 across residues, so the loss floor is nonzero
    whenever a protein has more than one positive residue.
    """
    if len(y_hats) != len(labels) or not y_hats:
        raise ValueError("need matching, nonempty predictions and labels")
    total = None
    for y_hat, y in zip(y_hats, labels):
        y = np.asarray(y, dtype=np.float64).reshape(1, -1)
        if y_hat.shape != y.shape:
            raise ValueError(
                f"prediction shape {y_hat.shape} != labels {y.shape}")
        p = ag.clip(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
        pos = ag.elementwise_mul(ag.log(p), ag.constant(y))
        neg = ag.elementwise_mul(
            ag.log(ag.add_scalar(ag.scalar_scale(p, -1.0), 1.0)),
            ag.constant(1.0 - y))
        term = ag.scalar_scale(ag.sum_all(ag.add(pos, neg)), -1.0)
        total = term if total is None else ag.add(total, term)
    return ag.scalar_scale(total, 1.0 / len(y_hats))
