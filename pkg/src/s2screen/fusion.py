"""Residue-level fusion of sequence and structure features.

Pocket atom embeddings are mean-pooled into their residues, combined with
the corresponding sequence rows through a learned sigmoid gate (a convex
per-residue mix of the two projected modalities), contextualized by two
single-head self-attention blocks over the pocket residue set (no
positional encoding: a pocket is a spatial set, so the blocks stay
permutation-equivariant), and mean-pooled into the fused pocket embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

__all__ = [
    "AttentionBlockParams",
    "FusionParams",
    "init_fusion",
    "atoms_to_residues",
    "gate_fuse",
    "attention_block",
    "contextualize_pocket",
    "pool_fused_pocket",
]

# Keeps the gate open: float64 sigmoid saturates to exactly 0/1 once the
# logit passes ~37, but the gate value must stay strictly inside (0, 1).
GATE_EPS = 1e-15


@dataclass
class AttentionBlockParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    ff1_w: Tensor
    ff1_b: Tensor
    ff2_w: Tensor
    ff2_b: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv,
                "ff1_w": self.ff1_w, "ff1_b": self.ff1_b,
                "ff2_w": self.ff2_w, "ff2_b": self.ff2_b}


@dataclass
class FusionParams:
    """Gate parameters plus two post-fusion attention blocks.

    ``w_seq`` and ``w_struct`` project both modalities into the shared
    width d; ``w_gate`` (2d -> 1) and ``b_gate`` produce the gate logit
    from the concatenated projections.
    """

    w_seq: Tensor          # (d_s, d)
    w_struct: Tensor       # (d_g, d)
    w_gate: Tensor         # (2d, 1)
    b_gate: Tensor         # (1,)
    blocks: tuple[AttentionBlockParams, AttentionBlockParams]

    @property
    def dim(self) -> int:
        return self.w_seq.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        out = {"w_seq": self.w_seq, "w_struct": self.w_struct,
               "w_gate": self.w_gate, "b_gate": self.b_gate}
        for i, block in enumerate(self.blocks):
            for name, t in block.tensors().items():
                out[f"block{i}.{name}"] = t
        return out


def _dense(rng: np.random.Generator, n_in: int, n_out: int) -> Tensor:
    return ag.parameter(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in))


def _init_block(rng: np.random.Generator, d: int) -> AttentionBlockParams:
    return AttentionBlockParams(
        wq=_dense(rng, d, d), wk=_dense(rng, d, d), wv=_dense(rng, d, d),
        ff1_w=_dense(rng, d, d), ff1_b=ag.parameter(np.zeros(d)),
        ff2_w=_dense(rng, d, d), ff2_b=ag.parameter(np.zeros(d)),
    )


def init_fusion(rng: np.random.Generator, d_s: int, d_g: int, d: int = 64
                ) -> FusionParams:
    return FusionParams(
        w_seq=_dense(rng, d_s, d),
        w_struct=_dense(rng, d_g, d),
        w_gate=_dense(rng, 2 * d, 1),
        b_gate=ag.parameter(np.zeros(1)),
        blocks=(_init_block(rng, d), _init_block(rng, d)),
    )


def atoms_to_residues(z: Tensor, atom_residues: Sequence[int],
                      pocket_residues: Sequence[int]) -> Tensor:
    """Masked mean pooling of atom rows into pocket residues.

    Output row r is the mean of the atom rows assigned to the r-th pocket
    residue, residues ordered by ascending index.  A pocket residue with no
    assigned atoms is an error.
    """
    assign = np.asarray(atom_residues, dtype=np.int64)
    if z.values.ndim != 2 or assign.shape != (z.shape[0],):
        raise ValueError("atom/residue assignment does not match z")
    pocket = sorted(set(int(r) for r in pocket_residues))
    if not pocket:
        raise ValueError("pocket_residues must be nonempty")
    mask = np.zeros((len(pocket), z.shape[0]))
    for row, residue in enumerate(pocket):
        mask[row, assign == residue] = 1.0
    empty = [pocket[r] for r in range(len(pocket))
             if not mask[r].any()]
    if empty:
        raise ValueError(f"pocket residues without atoms: {empty}")
    return ag.masked_mean_rows(z, mask)


def gate_fuse(params: FusionParams, x_seq: Tensor, x_struct: Tensor
              ) -> tuple[Tensor, Tensor]:
    """Per-residue convex combination of the projected modalities.

    beta = sigmoid(w_gate . [W_s x_s ; W_g x_g] + b_gate), and the fused
    row is beta * W_s x_s + (1 - beta) * W_g x_g.  Returns (fused R x d,
    beta R x 1); beta is strictly inside (0, 1) for finite inputs.
    """
    if x_seq.shape[0] != x_struct.shape[0]:
        raise ValueError(
            f"row count mismatch: {x_seq.shape} vs {x_struct.shape}")
    sp = ag.matmul(x_seq, params.w_seq)
    gp = ag.matmul(x_struct, params.w_struct)
    logit = ag.add(ag.matmul(ag.concat_cols(sp, gp), params.w_gate),
                   params.b_gate)
    beta = ag.clip(ag.sigmoid(logit), GATE_EPS, 1.0 - GATE_EPS)
    one_minus = ag.add_scalar(ag.scalar_scale(beta, -1.0), 1.0)
    fused = ag.add(ag.elementwise_mul(sp, beta),
                   ag.elementwise_mul(gp, one_minus))
    return fused, beta


def attention_block(params: AttentionBlockParams, x: Tensor,
                    return_attention: bool = False):
    """Single-head scaled dot-product self-attention with residual and
    post-layer-norm, then a relu feed-forward (hidden width d) with the
    same residual + norm."""
    d = x.shape[1]
    q = ag.matmul(x, params.wq)
    k = ag.matmul(x, params.wk)
    v = ag.matmul(x, params.wv)
    attn = ag.softmax_rows(
        ag.scalar_scale(ag.matmul(q, ag.transpose(k)), 1.0 / np.sqrt(d)))
    x = ag.layer_norm_rows(ag.add(x, ag.matmul(attn, v)))
    ff = ag.add(ag.matmul(
        ag.relu(ag.add(ag.matmul(x, params.ff1_w), params.ff1_b)),
        params.ff2_w), params.ff2_b)
    out = ag.layer_norm_rows(ag.add(x, ff))
    if return_attention:
        return out, attn
    return out


def contextualize_pocket(params: FusionParams, x: Tensor) -> Tensor:
    """Two attention blocks over the pocket residues.  No positional
    encoding, so permuting the input rows permutes the output rows."""
    if x.shape[0] < 1:
        raise ValueError("contextualize_pocket needs at least one residue")
    for block in params.blocks:
        x = attention_block(block, x)
    return x


def pool_fused_pocket(x: Tensor) -> Tensor:
    """Mean over pocket residues; the fused pocket embedding (1 x d)."""
    if x.shape[0] < 1:
        raise ValueError("pool_fused_pocket needs at least one row")
    return ag.mean_rows(x)
