"""Desk-scale substitute encoders.

The sequence encoder is a position-free per-residue MLP over a 21-symbol
embedding table: a residue's row depends only on its code, and the protein
embedding is the mean over residue rows followed by a projection head.
The molecule encoder embeds element types and mixes neighbor embeddings
with a continuous distance filter built from 16 Gaussian radial basis
functions, so atom representations depend on coordinates only through
pairwise distances (rigid-motion invariant) and permute with the atoms.

Both modalities project into a shared space through a two-layer MLP with
layer normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import ELEMENTS, RESIDUE_ALPHABET

__all__ = [
    "RBF_CENTERS",
    "RBF_WIDTH",
    "SeqEncoderParams",
    "MolEncoderParams",
    "ProjectionParams",
    "init_seq_encoder",
    "init_mol_encoder",
    "init_projection",
    "residue_indices",
    "element_indices",
    "encode_residue_table",
    "encode_residues",
    "encode_protein_sequence",
    "rbf_features",
    "encode_molecule_atoms",
    "encode_ligand",
    "project",
]

RBF_CENTERS = np.linspace(0.0, 10.0, 16)
RBF_WIDTH = 0.5
N_ELEMENT_TYPES = len(ELEMENTS) + 1          # 16 known + unknown
_ELEMENT_INDEX = {e: i for i, e in enumerate(ELEMENTS)}
_RESIDUE_INDEX = {c: i for i, c in enumerate(RESIDUE_ALPHABET)}


@dataclass
class SeqEncoderParams:
    """Residue embedding table plus two residual relu layers (d_s -> d_s)."""

    embed: Tensor          # (21, d_s)
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def dim(self) -> int:
        return self.embed.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"embed": self.embed, "w1": self.w1, "b1": self.b1,
                "w2": self.w2, "b2": self.b2}


@dataclass
class MolEncoderParams:
    """Element embeddings, the RBF distance filter, and the output layer."""

    embed: Tensor          # (17, d_g)
    filter_w: Tensor       # (16, d_g)
    filter_b: Tensor       # (d_g,)
    out_w: Tensor          # (2 d_g, d_g)
    out_b: Tensor          # (d_g,)

    @property
    def dim(self) -> int:
        return self.embed.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"embed": self.embed, "filter_w": self.filter_w,
                "filter_b": self.filter_b, "out_w": self.out_w,
                "out_b": self.out_b}


@dataclass
class ProjectionParams:
    """Two dense layers with layer normalization, mapping into the shared
    embedding space."""

    w1: Tensor             # (d_in, d)
    b1: Tensor
    w2: Tensor             # (d, d)
    b2: Tensor

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def _dense_init(rng: np.random.Generator, n_in: int, n_out: int) -> Tensor:
    return ag.parameter(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in))


def init_seq_encoder(rng: np.random.Generator, d_s: int = 64
                     ) -> SeqEncoderParams:
    if d_s < 8:
        raise ValueError("sequence dim must be >= 8")
    return SeqEncoderParams(
        embed=ag.parameter(rng.standard_normal(
            (len(RESIDUE_ALPHABET), d_s)) / np.sqrt(d_s)),
        w1=_dense_init(rng, d_s, d_s),
        b1=ag.parameter(np.zeros(d_s)),
        w2=_dense_init(rng, d_s, d_s),
        b2=ag.parameter(np.zeros(d_s)),
    )


def init_mol_encoder(rng: np.random.Generator, d_g: int = 64
                     ) -> MolEncoderParams:
    return MolEncoderParams(
        embed=ag.parameter(rng.standard_normal(
            (N_ELEMENT_TYPES, d_g)) / np.sqrt(d_g)),
        filter_w=_dense_init(rng, len(RBF_CENTERS), d_g),
        filter_b=ag.parameter(np.zeros(d_g)),
        out_w=_dense_init(rng, 2 * d_g, d_g),
        out_b=ag.parameter(np.zeros(d_g)),
    )


def init_projection(rng: np.random.Generator, d_in: int, d: int = 64
                    ) -> ProjectionParams:
    return ProjectionParams(
        w1=_dense_init(rng, d_in, d),
        b1=ag.parameter(np.zeros(d)),
        w2=_dense_init(rng, d, d),
        b2=ag.parameter(np.zeros(d)),
    )


# ---------------------------------------------------------------------------
# sequence side
# ---------------------------------------------------------------------------

def residue_indices(sequence: str) -> np.ndarray:
    unknown = _RESIDUE_INDEX["X"]
    return np.array([_RESIDUE_INDEX.get(c, unknown) for c in sequence],
                    dtype=np.int64)


def encode_residue_table(params: SeqEncoderParams) -> Tensor:
    """Run the per-residue MLP over the whole 21-row embedding table.

    Because the encoder is position-free, encoding a sequence reduces to a
    row gather from this table; batches encode the table once and share it.
    """
    h = params.embed
    h = ag.add(h, ag.relu(ag.add(ag.matmul(h, params.w1), params.b1)))
    h = ag.add(h, ag.relu(ag.add(ag.matmul(h, params.w2), params.b2)))
    return h


def encode_residues(params: SeqEncoderParams, sequence: str,
                    table: Tensor | None = None) -> Tensor:
    """Residue-level representation, one row per sequence position."""
    if not sequence:
        raise ValueError("cannot encode an empty sequence")
    if table is None:
        table = encode_residue_table(params)
    return ag.gather_rows(table, residue_indices(sequence))


def project(params: ProjectionParams, x: Tensor) -> Tensor:
    h = ag.layer_norm_rows(ag.add(ag.matmul(x, params.w1), params.b1))
    return ag.add(ag.matmul(ag.relu(h), params.w2), params.b2)


def encode_protein_sequence(params: SeqEncoderParams,
                            proj: ProjectionParams, sequence: str,
                            table: Tensor | None = None) -> Tensor:
    """Mean pooling over residue rows, then the shared-space projection.
    Returns a 1 x d row."""
    rows = encode_residues(params, sequence, table=table)
    return project(proj, ag.mean_rows(rows))


# ---------------------------------------------------------------------------
# molecule side
# ---------------------------------------------------------------------------

def element_indices(elements: list[str]) -> np.ndarray:
    unknown = N_ELEMENT_TYPES - 1
    return np.array([_ELEMENT_INDEX.get(e, unknown) for e in elements],
                    dtype=np.int64)


def rbf_features(distances: np.ndarray) -> np.ndarray:
    """Gaussian radial basis expansion of a distance array; appends one
    axis of size 16."""
    d = np.asarray(distances, dtype=np.float64)[..., None]
    return np.exp(-((d - RBF_CENTERS) ** 2) / (2.0 * RBF_WIDTH ** 2))


def encode_molecule_atoms(params: MolEncoderParams, elements: list[str],
                          coords: np.ndarray) -> Tensor:
    """Atom-level representation (A x d_g).

    Each atom's message sums, over all other atoms, the neighbor embedding
    gated by a learned linear filter of the RBF-expanded pairwise distance:

        z_a = dense([emb_a ; sum_{b != a} (rbf(|p_a - p_b|) W_f + b_f) * emb_b])

    The filter is linear in its RBF features, so the double sum over
    (neighbor, feature) is reordered into 16 constant-matrix products,
    keeping the graph small.  Depends on coordinates only through
    distances.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n_atoms = len(elements)
    if n_atoms < 1:
        raise ValueError("molecule needs at least one atom")
    if coords.shape != (n_atoms, 3):
        raise ValueError(f"coords shape {coords.shape} does not match "
                         f"{n_atoms} atoms")
    if not np.all(np.isfinite(coords)):
        raise ValueError("molecule coordinates must be finite")

    emb = ag.gather_rows(params.embed, element_indices(elements))

    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    rbf = rbf_features(dist)                      # (A, A, 16), constant

    # G[a, j] = sum_k W_f[k, j] * (R_k @ emb)[a, j], with R_k the k-th
    # feature slice of the RBF tensor.
    g = None
    for k in range(rbf.shape[2]):
        hk = ag.matmul(ag.constant(rbf[:, :, k]), emb)
        term = ag.elementwise_mul(hk, ag.gather_rows(params.filter_w, [k]))
        g = term if g is None else ag.add(g, term)

    # Remove each atom's self contribution (distance 0) and add the filter
    # bias applied to the neighbor-embedding sum.
    r0 = rbf_features(np.zeros(1)).reshape(1, -1)
    self_gate = ag.matmul(ag.constant(r0), params.filter_w)   # (1, d_g)
    g = ag.sub(g, ag.elementwise_mul(emb, self_gate))
    total = ag.scalar_scale(ag.mean_rows(emb), float(n_atoms))
    neighbor_sum = ag.sub(ag.matmul(ag.constant(np.ones((n_atoms, 1))),
                                    total), emb)
    message = ag.add(g, ag.elementwise_mul(neighbor_sum, params.filter_b))

    fused = ag.concat_cols(emb, message)
    return ag.add(ag.matmul(fused, params.out_w), params.out_b)


def encode_ligand(params: MolEncoderParams, proj: ProjectionParams,
                  elements: list[str], coords: np.ndarray) -> Tensor:
    """Mean pooling over atom rows, then the shared-space projection.
    Returns a 1 x d row; invariant to atom order and rigid motion."""
    atoms = encode_molecule_atoms(params, elements, coords)
    return project(proj, ag.mean_rows(atoms))
