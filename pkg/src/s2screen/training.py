"""Two-stage training: contrastive pretraining over (protein, ligand)
pairs, then fusion finetuning with the auxiliary binding-site term.

Both loops are single-threaded and fully determined by (seed, config,
data): initialization, batch shuffling, and probe sampling all draw from
one seeded generator, and every reduction runs in a fixed order, so two
runs with the same inputs produce bitwise-identical checkpoints.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from . import bindingsite as bs
from . import encoders as enc
from . import fusion as fu
from . import losses
from .autograd import AdamState, Tensor
from .data import Dataset, LigandRecord, ProteinRecord, derive_binding_labels
from .retrieval import EmbeddingStore

__all__ = [
    "TrainConfig",
    "ModelParams",
    "init_stage1_params",
    "pretrain",
    "finetune",
    "embed_corpus",
    "predict_sites",
]

PRETRAIN_EPOCHS = 30
FINETUNE_EPOCHS = 60
PRETRAIN_BATCH = 32
FINETUNE_BATCH = 16


@dataclass
class TrainConfig:
    """Hyperparameters shared by both stages.

    ``epochs`` and ``batch_size`` default per stage (30/32 for
    pretraining, 60/16 for finetuning) when left as None.  The ablation
    switches mirror the three removable techniques: curation
    (``disable_bds``, honored by the experiment drivers, not the loops
    themselves), fusion (``disable_ssf``), and the auxiliary site task
    (``disable_bsp``, equivalent to lam = 0).
    """

    epochs: Optional[int] = None
    batch_size: Optional[int] = None
    learning_rate: float = 1e-3
    tau: float = 0.1
    lam: float = 0.5
    probes: int = 4
    seed: int = 0
    d_seq: int = 64
    d_mol: int = 64
    d_shared: int = 64
    disable_bds: bool = False
    disable_ssf: bool = False
    disable_bsp: bool = False

    def resolved(self, stage: str) -> "TrainConfig":
        cfg = copy.copy(self)
        if cfg.epochs is None:
            cfg.epochs = PRETRAIN_EPOCHS if stage == "pretrain" \
                else FINETUNE_EPOCHS
        if cfg.batch_size is None:
            cfg.batch_size = PRETRAIN_BATCH if stage == "pretrain" \
                else FINETUNE_BATCH
        if cfg.epochs < 1 or cfg.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if cfg.probes < 1:
            raise ValueError("probe count must be >= 1")
        return cfg

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "epochs", "batch_size", "learning_rate", "tau", "lam", "probes",
            "seed", "d_seq", "d_mol", "d_shared", "disable_bds",
            "disable_ssf", "disable_bsp")}


@dataclass
class ModelParams:
    """All trainable parameter collections.  Stage-1 checkpoints carry the
    sequence/ligand encoders and both projection heads; stage-2 adds the
    pocket encoder, fusion module, and probe attention."""

    seq: enc.SeqEncoderParams
    mol_ligand: enc.MolEncoderParams
    proj_seq: enc.ProjectionParams
    proj_ligand: enc.ProjectionParams
    mol_pocket: Optional[enc.MolEncoderParams] = None
    fusion: Optional[fu.FusionParams] = None
    probe: Optional[bs.ProbeAttentionParams] = None

    @property
    def has_stage2(self) -> bool:
        return self.fusion is not None

    def tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        groups = [("seq", self.seq), ("mol_ligand", self.mol_ligand),
                  ("proj_seq", self.proj_seq),
                  ("proj_ligand", self.proj_ligand)]
        if self.mol_pocket is not None:
            groups.append(("mol_pocket", self.mol_pocket))
        if self.fusion is not None:
            groups.append(("fusion", self.fusion))
        if self.probe is not None:
            groups.append(("probe", self.probe))
        for prefix, group in groups:
            for name, t in group.tensors().items():
                out[f"{prefix}.{name}"] = t
        return out

    def parameters(self) -> list[Tensor]:
        named = self.tensors()
        return [named[name] for name in sorted(named)]

    def save(self, path) -> None:
        ag.save_checkpoint(
            {name: t.values for name, t in self.tensors().items()}, path)

    def clone(self) -> "ModelParams":
        arrays = {name: t.values.copy()
                  for name, t in self.tensors().items()}
        return ModelParams.from_arrays(arrays)

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_arrays(ag.load_checkpoint(path))

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        def group(prefix: str) -> dict[str, Tensor]:
            plen = len(prefix) + 1
            return {name[plen:]: ag.parameter(arr)
                    for name, arr in arrays.items()
                    if name.startswith(prefix + ".")}

        def seq_params(g):
            return enc.SeqEncoderParams(g["embed"], g["w1"], g["b1"],
                                        g["w2"], g["b2"])

        def mol_params(g):
            return enc.MolEncoderParams(g["embed"], g["filter_w"],
                                        g["filter_b"], g["out_w"],
                                        g["out_b"])

        def proj_params(g):
            return enc.ProjectionParams(g["w1"], g["b1"], g["w2"], g["b2"])

        try:
            model = cls(
                seq=seq_params(group("seq")),
                mol_ligand=mol_params(group("mol_ligand")),
                proj_seq=proj_params(group("proj_seq")),
                proj_ligand=proj_params(group("proj_ligand")),
            )
        except KeyError as err:
            raise ag.CheckpointError(
                f"checkpoint missing parameter {err}") from err
        if any(name.startswith("fusion.") for name in arrays):
            g = group("fusion")
            try:
                blocks = tuple(
                    fu.AttentionBlockParams(
                        g[f"block{i}.wq"], g[f"block{i}.wk"],
                        g[f"block{i}.wv"], g[f"block{i}.ff1_w"],
                        g[f"block{i}.ff1_b"], g[f"block{i}.ff2_w"],
                        g[f"block{i}.ff2_b"]) for i in (0, 1))
                model.fusion = fu.FusionParams(
                    g["w_seq"], g["w_struct"], g["w_gate"], g["b_gate"],
                    blocks)
                model.mol_pocket = mol_params(group("mol_pocket"))
                pg = group("probe")
                model.probe = bs.ProbeAttentionParams(pg["w_res"],
                                                      pg["w_lig"])
            except KeyError as err:
                raise ag.CheckpointError(
                    f"checkpoint missing parameter {err}") from err
        return model


def init_stage1_params(rng: np.random.Generator,
                       config: TrainConfig) -> ModelParams:
    return ModelParams(
        seq=enc.init_seq_encoder(rng, config.d_seq),
        mol_ligand=enc.init_mol_encoder(rng, config.d_mol),
        proj_seq=enc.init_projection(rng, config.d_seq, config.d_shared),
        proj_ligand=enc.init_projection(rng, config.d_mol, config.d_shared),
    )


def _attach_stage2(params: ModelParams, rng: np.random.Generator,
                   config: TrainConfig) -> None:
    """Add the finetuning modules: the pocket encoder starts from a copy of
    the pretrained ligand encoder (both stand in for the same structural
    backbone); fusion and probe attention start fresh."""
    arrays = {name: t.values.copy()
              for name, t in params.mol_ligand.tensors().items()}
    params.mol_pocket = enc.MolEncoderParams(
        **{name: ag.parameter(arr) for name, arr in arrays.items()})
    params.fusion = fu.init_fusion(rng, config.d_seq, config.d_mol,
                                   config.d_shared)
    params.probe = bs.init_probe_attention(rng, config.d_seq,
                                           config.d_shared)


# ---------------------------------------------------------------------------
# shared batch helpers
# ---------------------------------------------------------------------------

def _batch_protein_sequences(params: ModelParams, table: Tensor,
                             sequences: Sequence[np.ndarray]) -> Tensor:
    pooled = ag.concat_rows([
        ag.mean_rows(ag.gather_rows(table, idx)) for idx in sequences])
    return enc.project(params.proj_seq, pooled)


def _batch_ligands(params: ModelParams,
                   mols: Sequence[tuple[list[str], np.ndarray]]) -> Tensor:
    pooled = ag.concat_rows([
        ag.mean_rows(enc.encode_molecule_atoms(params.mol_ligand, el, xyz))
        for el, xyz in mols])
    return enc.project(params.proj_ligand, pooled)


def _epoch_batches(n: int, batch_size: int,
                   rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------

def pretrain(dataset: Dataset, config: TrainConfig,
             snapshot_dir=None) -> tuple[ModelParams, list[dict]]:
    """Contrastive pretraining of the sequence and ligand encoders.

    Iterates seeded shuffled batches of positive pairs, computes the
    symmetric in-batch InfoNCE loss over mean-pooled projected embeddings,
    and applies Adam.  Returns the final parameters and the per-epoch loss
    trajectory; with ``snapshot_dir`` set, also writes a checkpoint per
    epoch.
    """
    cfg = config.resolved("pretrain")
    if not dataset.triplets:
        raise ValueError("pretrain requires a nonempty dataset")
    rng = np.random.default_rng(cfg.seed)
    params = init_stage1_params(rng, cfg)
    opt = AdamState(learning_rate=cfg.learning_rate)
    tensors = params.parameters()

    seq_cache = {pid: enc.residue_indices(p.sequence)
                 for pid, p in dataset.proteins.items()}
    mol_cache = {lid: (lig.atom_elements(), lig.atom_coords())
                 for lid, lig in dataset.ligands.items()}
    pairs = [(t.protein_id, t.ligand_id) for t in dataset.triplets]

    history: list[dict] = []
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        batches = _epoch_batches(len(pairs), cfg.batch_size, rng)
        for batch in batches:
            table = enc.encode_residue_table(params.seq)
            h_p = _batch_protein_sequences(
                params, table, [seq_cache[pairs[i][0]] for i in batch])
            h_l = _batch_ligands(
                params, [mol_cache[pairs[i][1]] for i in batch])
            loss = losses.infonce_symmetric(h_p, h_l, cfg.tau)
            ag.backward(loss)
            adam_safe_step(tensors, opt)
            epoch_loss += float(loss.values)
        row = {"epoch": epoch, "loss_fc": epoch_loss / len(batches),
               "loss_bsp": 0.0}
        row["loss_total"] = row["loss_fc"]
        history.append(row)
        if snapshot_dir is not None:
            params.save(Path(snapshot_dir) / f"epoch{epoch:04d}.ckpt")
    return params, history


def adam_safe_step(tensors: Sequence[Tensor], opt: AdamState) -> None:
    """Adam over the collection, tolerating parameters that did not take
    part in the batch graph (zero gradient)."""
    for t in tensors:
        if t.grad is None:
            t.grad = np.zeros_like(t.values)
    ag.adam_step(tensors, opt)


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------

def _pocket_embedding(params: ModelParams, x_seq_full: Tensor,
                      protein: ProteinRecord,
                      pocket_cache: dict, disable_ssf: bool) -> Tensor:
    """Fused pocket embedding for one protein (1 x d).

    With fusion disabled, falls back to the sequence-only pocket pathway:
    the mean of W_s x_s over pocket residues.
    """
    pocket_positions = np.asarray(protein.pocket_residues, dtype=np.int64)
    x_seq_pocket = ag.gather_rows(x_seq_full, pocket_positions)
    if disable_ssf:
        return ag.mean_rows(ag.matmul(x_seq_pocket, params.fusion.w_seq))
    coords, elements, assign = pocket_cache[protein.id]
    z = enc.encode_molecule_atoms(params.mol_pocket, elements, coords)
    x_struct = fu.atoms_to_residues(z, assign, protein.pocket_residues)
    fused, _ = fu.gate_fuse(params.fusion, x_seq_pocket, x_struct)
    return fu.pool_fused_pocket(fu.contextualize_pocket(params.fusion,
                                                        fused))


def finetune(dataset: Dataset, config: TrainConfig,
             init_params: ModelParams,
             snapshot_dir=None) -> tuple[ModelParams, list[dict]]:
    """Fusion finetuning with the auxiliary binding-site objective.

    Every batch builds fused pocket embeddings and ligand embeddings, takes
    the symmetric contrastive loss, and (unless disabled) adds lam times
    the probe-attention binding-site loss with labels derived from the
    paired ligand geometry at 8 A.  ``disable_bsp`` and ``lam = 0`` follow
    the identical code path, so their trajectories match exactly.
    """
    cfg = config.resolved("finetune")
    if not dataset.triplets:
        raise ValueError("finetune requires a nonempty dataset")
    rng = np.random.default_rng(cfg.seed)
    params = init_params.clone()
    if params.seq.dim != cfg.d_seq or params.mol_ligand.dim != cfg.d_mol:
        raise ValueError("init checkpoint dims do not match config")
    if not params.has_stage2:
        _attach_stage2(params, rng, cfg)
    opt = AdamState(learning_rate=cfg.learning_rate)
    tensors = params.parameters()

    seq_cache = {}
    pocket_cache = {}
    for pid, protein in dataset.proteins.items():
        if not protein.pocket_residues:
            raise ValueError(f"protein {pid!r} has no pocket residues")
        seq_cache[pid] = enc.residue_indices(protein.sequence)
        pocket_cache[pid] = protein.pocket_atom_view()
    mol_cache = {lid: (lig.atom_elements(), lig.atom_coords())
                 for lid, lig in dataset.ligands.items()}
    label_cache = {
        (t.protein_id, t.ligand_id): np.asarray(
            derive_binding_labels(dataset.proteins[t.protein_id],
                                  dataset.ligands[t.ligand_id]).labels,
            dtype=np.float64)
        for t in dataset.triplets}

    bsp_active = cfg.lam > 0 and not cfg.disable_bsp
    lam = cfg.lam if bsp_active else 0.0
    triplets = dataset.triplets

    history: list[dict] = []
    for epoch in range(cfg.epochs):
        fc_sum = bsp_sum = total_sum = 0.0
        batches = _epoch_batches(len(triplets), cfg.batch_size, rng)
        for batch in batches:
            batch_triplets = [triplets[i] for i in batch]
            table = enc.encode_residue_table(params.seq)
            x_seq_rows = {
                t.protein_id: ag.gather_rows(table,
                                             seq_cache[t.protein_id])
                for t in batch_triplets}
            h_p = ag.concat_rows([
                _pocket_embedding(params, x_seq_rows[t.protein_id],
                                  dataset.proteins[t.protein_id],
                                  pocket_cache, cfg.disable_ssf)
                for t in batch_triplets])
            h_l = _batch_ligands(
                params, [mol_cache[t.ligand_id] for t in batch_triplets])
            l_fc = losses.infonce_symmetric(h_p, h_l, cfg.tau)

            if bsp_active:
                batch_lids = [t.ligand_id for t in batch_triplets]
                y_hats, labels = [], []
                for row, t in enumerate(batch_triplets):
                    probe_ids = bs.sample_probe_ids(
                        batch_lids, t.ligand_id, cfg.probes, rng)
                    probe_rows = [batch_lids.index(pid)
                                  for pid in probe_ids]
                    probes = ag.gather_rows(h_l, probe_rows)
                    alphas = bs.probe_attention(
                        params.probe, x_seq_rows[t.protein_id], probes)
                    y_hats.append(bs.residue_binding_prob(alphas))
                    labels.append(label_cache[(t.protein_id, t.ligand_id)])
                l_bsp = bs.bsp_loss(y_hats, labels)
                loss = losses.total_loss(l_fc, l_bsp, lam)
                bsp_sum += float(l_bsp.values)
            else:
                loss = l_fc
            ag.backward(loss)
            adam_safe_step(tensors, opt)
            fc_sum += float(l_fc.values)
            total_sum += float(loss.values)
        n = len(batches)
        history.append({"epoch": epoch, "loss_fc": fc_sum / n,
                        "loss_bsp": bsp_sum / n,
                        "loss_total": total_sum / n})
        if snapshot_dir is not None:
            params.save(Path(snapshot_dir) / f"epoch{epoch:04d}.ckpt")
    return params, history


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def _embed_pocket_one(params: ModelParams,
                      protein: ProteinRecord) -> np.ndarray:
    table = enc.encode_residue_table(params.seq)
    x_seq = ag.gather_rows(table, enc.residue_indices(protein.sequence))
    pocket_cache = {protein.id: protein.pocket_atom_view()}
    h = _pocket_embedding(params, x_seq, protein, pocket_cache,
                          disable_ssf=False)
    return h.values[0].copy()


def embed_corpus(params: ModelParams, records: Sequence, mode: str
                 ) -> EmbeddingStore:
    """One shared-space vector per record.

    ``pocket`` uses the fused pocket pathway (stage-2 checkpoints only),
    ``ligand`` the molecule encoder plus its projection head, and
    ``sequence`` the stage-1 whole-sequence pathway.
    """
    if mode not in ("pocket", "ligand", "sequence"):
        raise ValueError(f"unknown embedding mode {mode!r}")
    if mode == "pocket" and not params.has_stage2:
        raise ValueError("pocket mode requires a stage-2 checkpoint")
    dim = params.proj_seq.out_dim
    ids: list[str] = []
    rows: list[np.ndarray] = []
    for record in records:
        if mode == "ligand":
            if not isinstance(record, LigandRecord):
                raise ValueError("ligand mode expects ligand records")
            h = enc.encode_ligand(params.mol_ligand, params.proj_ligand,
                                  record.atom_elements(),
                                  record.atom_coords())
            rows.append(h.values[0].copy())
        elif mode == "sequence":
            if not isinstance(record, ProteinRecord):
                raise ValueError("sequence mode expects protein records")
            h = enc.encode_protein_sequence(params.seq, params.proj_seq,
                                            record.sequence)
            rows.append(h.values[0].copy())
        else:
            if not isinstance(record, ProteinRecord):
                raise ValueError("pocket mode expects protein records")
            if not record.pocket_residues:
                raise ValueError(
                    f"protein {record.id!r} has no pocket residues")
            rows.append(_embed_pocket_one(params, record))
        ids.append(record.id)
    matrix = np.vstack(rows) if rows else np.zeros((0, dim))
    return EmbeddingStore.from_vectors(ids, matrix)


def predict_sites(params: ModelParams, protein: ProteinRecord,
                  probe_ligands: Sequence[LigandRecord], k: int = 4,
                  seed: int = 0,
                  paired_id: Optional[str] = None) -> np.ndarray:
    """Per-residue binding scores from K ligand-probe attentions.

    Probes are drawn from ``probe_ligands``: uniformly without replacement
    when no pairing is known, or via the training-time scheme (paired
    ligand always included) when ``paired_id`` is given.  Scores sum to 1
    over the sequence.
    """
    if params.probe is None:
        raise ValueError("site prediction requires a stage-2 checkpoint")
    if not probe_ligands:
        raise ValueError("need at least one probe ligand")
    rng = np.random.default_rng(seed)
    by_id = {lig.id: lig for lig in probe_ligands}
    if paired_id is not None:
        probe_ids = bs.sample_probe_ids(sorted(by_id), paired_id, k, rng)
    else:
        pool = sorted(by_id)
        replace = len(pool) < k
        chosen = rng.choice(len(pool), size=k, replace=replace)
        probe_ids = [pool[int(i)] for i in chosen]
    probes = ag.concat_rows([
        enc.encode_ligand(params.mol_ligand, params.proj_ligand,
                          by_id[pid].atom_elements(),
                          by_id[pid].atom_coords())
        for pid in probe_ids])
    table = enc.encode_residue_table(params.seq)
    x_seq = ag.gather_rows(table, enc.residue_indices(protein.sequence))
    alphas = bs.probe_attention(params.probe, x_seq, probes)
    return bs.residue_binding_prob(alphas).values[0].copy()
