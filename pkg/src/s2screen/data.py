"""Domain records, input-file parsing, and synthetic corpus generation.

Three text formats feed the pipeline:

* ``proteins.jsonl`` -- one object per line::

      {"id": ..., "sequence": "ACD...", "atoms": [{"element", "x", "y", "z",
       "residue_index"}, ...], "pocket_residues": [ints],
       "annotation": str | null}

* ``ligands.jsonl`` -- ``{"id", "atoms": [{"element", "x", "y", "z"}],
  "smiles": str | null}``

* ``affinities.tsv`` -- tab-separated ``protein_id  ligand_id  affinity
  assay_id`` with the assay column optional/empty and ``#`` comment lines
  ignored.  Affinities are linear-scale positive reals (nanomolar
  concentrations by default); all variance math downstream works on log10.

Records are immutable after construction and safe to share across threads.
"Heavy atom" means any atom record; inputs are expected to omit hydrogens,
which is documented rather than enforced.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "AMINO_ACIDS",
    "UNKNOWN_RESIDUE",
    "RESIDUE_ALPHABET",
    "ELEMENTS",
    "DataFormatError",
    "Atom",
    "ProteinRecord",
    "LigandRecord",
    "AffinityTriplet",
    "BindingSiteLabels",
    "Dataset",
    "parse_dataset",
    "load_proteins",
    "load_ligands",
    "load_affinities",
    "write_dataset",
    "write_labels",
    "load_labels",
    "derive_binding_labels",
    "MotifConfig",
    "generate_synthetic_dataset",
    "inject_noise",
]

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
UNKNOWN_RESIDUE = "X"
# 20 amino acids plus the unknown symbol; anything else maps onto X.
RESIDUE_ALPHABET = AMINO_ACIDS + UNKNOWN_RESIDUE

# 16 common element symbols; anything else maps to the unknown slot of the
# molecule encoder vocabulary.
ELEMENTS = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B",
            "Se", "Zn", "Mg", "Fe", "Ca", "Na")


class DataFormatError(ValueError):
    """Malformed or inconsistent input data; carries file/line context."""


@dataclass(frozen=True)
class Atom:
    element: str
    x: float
    y: float
    z: float

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class ProteinRecord:
    """A protein: residue sequence, heavy atoms with residue assignment,
    pocket residue indices, and an optional functional annotation."""

    id: str
    sequence: str
    atoms: tuple[tuple[Atom, int], ...]          # (atom, residue_index)
    pocket_residues: tuple[int, ...] = ()
    annotation: Optional[str] = None

    def __post_init__(self):
        if len(self.sequence) < 1:
            raise DataFormatError(f"protein {self.id!r}: empty sequence")
        n = len(self.sequence)
        for atom, ridx in self.atoms:
            if not (0 <= ridx < n):
                raise DataFormatError(
                    f"protein {self.id!r}: atom residue_index {ridx} "
                    f"outside [0, {n})")
            if not all(math.isfinite(v) for v in (atom.x, atom.y, atom.z)):
                raise DataFormatError(
                    f"protein {self.id!r}: non-finite atom coordinates")
        pocket = tuple(sorted(set(self.pocket_residues)))
        object.__setattr__(self, "pocket_residues", pocket)
        for ridx in pocket:
            if not (0 <= ridx < n):
                raise DataFormatError(
                    f"protein {self.id!r}: pocket residue {ridx} "
                    f"outside [0, {n})")

    @property
    def length(self) -> int:
        return len(self.sequence)

    def atom_coords(self) -> np.ndarray:
        """(A, 3) coordinates of all atoms."""
        if not self.atoms:
            return np.zeros((0, 3))
        return np.array([[a.x, a.y, a.z] for a, _ in self.atoms])

    def residue_of_atoms(self) -> np.ndarray:
        return np.array([ridx for _, ridx in self.atoms], dtype=np.int64)

    def pocket_atom_view(self) -> tuple[np.ndarray, list[str], np.ndarray]:
        """Atoms belonging to pocket residues: (coords, elements,
        residue indices).  Raises when a pocket residue has no atoms."""
        pocket = set(self.pocket_residues)
        coords, elements, assign = [], [], []
        for atom, ridx in self.atoms:
            if ridx in pocket:
                coords.append([atom.x, atom.y, atom.z])
                elements.append(atom.element)
                assign.append(ridx)
        covered = set(assign)
        missing = pocket - covered
        if missing:
            raise DataFormatError(
                f"protein {self.id!r}: pocket residues without atoms: "
                f"{sorted(missing)}")
        return np.array(coords), elements, np.array(assign, dtype=np.int64)


@dataclass(frozen=True)
class LigandRecord:
    """A candidate small molecule: typed 3-d atoms, an optional SMILES
    string (opaque except for denylist matching), and the number of
    distinct proteins it binds in the current affinity table."""

    id: str
    atoms: tuple[Atom, ...]
    smiles: Optional[str] = None
    target_count: int = 0

    def __post_init__(self):
        if len(self.atoms) < 1:
            raise DataFormatError(f"ligand {self.id!r}: no atoms")
        for atom in self.atoms:
            if not all(math.isfinite(v) for v in (atom.x, atom.y, atom.z)):
                raise DataFormatError(
                    f"ligand {self.id!r}: non-finite atom coordinates")
        if self.target_count < 0:
            raise DataFormatError(
                f"ligand {self.id!r}: negative target count")

    def atom_coords(self) -> np.ndarray:
        return np.array([[a.x, a.y, a.z] for a in self.atoms])

    def atom_elements(self) -> list[str]:
        return [a.element for a in self.atoms]


@dataclass(frozen=True)
class AffinityTriplet:
    protein_id: str
    ligand_id: str
    affinity: float            # linear scale, strictly positive
    assay_id: Optional[str] = None

    def __post_init__(self):
        if not (self.affinity > 0 and math.isfinite(self.affinity)):
            raise DataFormatError(
                f"triplet ({self.protein_id}, {self.ligand_id}): "
                f"affinity must be a positive real, got {self.affinity!r}")


@dataclass(frozen=True)
class BindingSiteLabels:
    protein_id: str
    labels: tuple[int, ...]


@dataclass(frozen=True)
class Dataset:
    proteins: dict[str, ProteinRecord]
    ligands: dict[str, LigandRecord]
    triplets: tuple[AffinityTriplet, ...]

    def __post_init__(self):
        seen = set()
        for t in self.triplets:
            if t.protein_id not in self.proteins:
                raise DataFormatError(
                    f"triplet references unknown protein id {t.protein_id!r}")
            if t.ligand_id not in self.ligands:
                raise DataFormatError(
                    f"triplet references unknown ligand id {t.ligand_id!r}")
            key = (t.protein_id, t.ligand_id, t.assay_id)
            if key in seen:
                raise DataFormatError(
                    f"duplicate (protein, ligand, assay) row: {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.triplets)

    def with_target_counts(self) -> "Dataset":
        """Return a copy whose ligand ``target_count`` fields equal the
        number of distinct proteins each ligand binds in ``triplets``."""
        counts: dict[str, set[str]] = {lid: set() for lid in self.ligands}
        for t in self.triplets:
            counts[t.ligand_id].add(t.protein_id)
        ligands = {lid: replace(lig, target_count=len(counts[lid]))
                   for lid, lig in self.ligands.items()}
        return Dataset(self.proteins, ligands, self.triplets)


# ---------------------------------------------------------------------------
# parsing and serialization
# ---------------------------------------------------------------------------

def _context(path, line_no: int) -> str:
    return f"{path}:{line_no}"


def normalize_residue(code: str) -> str:
    """Map any residue code onto the 21-symbol alphabet (unknown -> X)."""
    code = code.upper()
    return code if code in AMINO_ACIDS else UNKNOWN_RESIDUE


def load_proteins(path) -> dict[str, ProteinRecord]:
    records: dict[str, ProteinRecord] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataFormatError(
                    f"{_context(path, line_no)}: invalid JSON ({err.msg})")
            try:
                seq = "".join(normalize_residue(c) for c in obj["sequence"])
                atoms = tuple(
                    (Atom(a["element"], float(a["x"]), float(a["y"]),
                          float(a["z"])), int(a["residue_index"]))
                    for a in obj.get("atoms", []))
                record = ProteinRecord(
                    id=str(obj["id"]),
                    sequence=seq,
                    atoms=atoms,
                    pocket_residues=tuple(
                        int(i) for i in obj.get("pocket_residues") or ()),
                    annotation=obj.get("annotation"),
                )
            except (KeyError, TypeError, ValueError) as err:
                raise DataFormatError(
                    f"{_context(path, line_no)}: {err}") from err
            if record.id in records:
                raise DataFormatError(
                    f"{_context(path, line_no)}: duplicate protein id "
                    f"{record.id!r}")
            records[record.id] = record
    return records


def load_ligands(path) -> dict[str, LigandRecord]:
    records: dict[str, LigandRecord] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataFormatError(
                    f"{_context(path, line_no)}: invalid JSON ({err.msg})")
            try:
                record = LigandRecord(
                    id=str(obj["id"]),
                    atoms=tuple(Atom(a["element"], float(a["x"]),
                                     float(a["y"]), float(a["z"]))
                                for a in obj["atoms"]),
                    smiles=obj.get("smiles"),
                )
            except (KeyError, TypeError, ValueError) as err:
                raise DataFormatError(
                    f"{_context(path, line_no)}: {err}") from err
            if record.id in records:
                raise DataFormatError(
                    f"{_context(path, line_no)}: duplicate ligand id "
                    f"{record.id!r}")
            records[record.id] = record
    return records


def load_affinities(path) -> list[AffinityTriplet]:
    triplets: list[AffinityTriplet] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split("\t")
            if len(fields) not in (3, 4):
                raise DataFormatError(
                    f"{_context(path, line_no)}: expected 3 or 4 tab-"
                    f"separated fields, got {len(fields)}")
            try:
                value = float(fields[2])
            except ValueError:
                raise DataFormatError(
                    f"{_context(path, line_no)}: affinity {fields[2]!r} "
                    f"is not a number")
            assay = fields[3] if len(fields) == 4 and fields[3] else None
            try:
                triplets.append(AffinityTriplet(fields[0], fields[1],
                                                value, assay))
            except DataFormatError as err:
                raise DataFormatError(
                    f"{_context(path, line_no)}: {err}") from err
    return triplets


def parse_dataset(protein_path, ligand_path, affinity_path) -> Dataset:
    """Load and cross-link the three input files; ligand target counts are
    populated from the affinity table."""
    proteins = load_proteins(protein_path)
    ligands = load_ligands(ligand_path)
    triplets = load_affinities(affinity_path)
    return Dataset(proteins, ligands, tuple(triplets)).with_target_counts()


def write_dataset(dataset: Dataset, out_dir) -> None:
    """Serialize back into proteins.jsonl / ligands.jsonl / affinities.tsv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "proteins.jsonl", "w", encoding="utf-8") as fh:
        for pid in sorted(dataset.proteins):
            p = dataset.proteins[pid]
            fh.write(json.dumps({
                "id": p.id,
                "sequence": p.sequence,
                "atoms": [{"element": a.element, "x": a.x, "y": a.y,
                           "z": a.z, "residue_index": int(ridx)}
                          for a, ridx in p.atoms],
                "pocket_residues": [int(i) for i in p.pocket_residues],
                "annotation": p.annotation,
            }, sort_keys=True) + "\n")
    with open(out / "ligands.jsonl", "w", encoding="utf-8") as fh:
        for lid in sorted(dataset.ligands):
            lig = dataset.ligands[lid]
            fh.write(json.dumps({
                "id": lig.id,
                "atoms": [{"element": a.element, "x": a.x, "y": a.y,
                           "z": a.z} for a in lig.atoms],
                "smiles": lig.smiles,
            }, sort_keys=True) + "\n")
    with open(out / "affinities.tsv", "w", encoding="utf-8") as fh:
        fh.write("# protein_id\tligand_id\taffinity\tassay_id\n")
        for t in dataset.triplets:
            fh.write(f"{t.protein_id}\t{t.ligand_id}\t{t.affinity!r}\t"
                     f"{t.assay_id or ''}\n")


def write_labels(records: list[dict], path) -> None:
    """Write labels.jsonl-style rows ({"protein_id", "labels" or "scores"})."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_labels(path) -> list[BindingSiteLabels]:
    out: list[BindingSiteLabels] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(BindingSiteLabels(
                    str(obj["protein_id"]),
                    tuple(int(v) for v in obj["labels"])))
            except (json.JSONDecodeError, KeyError, TypeError,
                    ValueError) as err:
                raise DataFormatError(
                    f"{_context(path, line_no)}: {err}") from err
    return out


# ---------------------------------------------------------------------------
# binding-site ground truth
# ---------------------------------------------------------------------------

def derive_binding_labels(protein: ProteinRecord, ligand: LigandRecord,
                          threshold: float = 8.0) -> BindingSiteLabels:
    """Label residue i positive iff any of its heavy atoms lies within
    ``threshold`` angstroms (Euclidean) of any ligand atom."""
    if not protein.atoms:
        raise DataFormatError(
            f"protein {protein.id!r} has no atoms; cannot derive labels")
    lig = ligand.atom_coords()
    labels = [0] * protein.length
    for atom, ridx in protein.atoms:
        if labels[ridx]:
            continue
        d2 = ((lig - atom.position()) ** 2).sum(axis=1)
        if float(d2.min()) <= threshold * threshold:
            labels[ridx] = 1
    return BindingSiteLabels(protein.id, tuple(labels))


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MotifConfig:
    """Controls the planted structure of the synthetic corpus.

    Each protein-ligand pair belongs to one of ``n_classes`` latent classes.
    A class fixes a sequence k-mer motif and a 2-element atom palette
    (palettes are disjoint across classes).  On top of the class, every pair
    carries a continuous composition dial in [0, 1] that sets both the
    ligand's palette mixing ratio and the protein's background-residue
    mixing ratio, so exact-pair correspondence is learnable, not just class
    membership.
    """

    n_classes: int = 8
    motif_len: int = 5
    background_residues: str = "AG"
    affinity_noise: float = 0.1

    def __post_init__(self):
        if self.n_classes < 1 or self.n_classes > len(ELEMENTS) // 2:
            raise ValueError(
                f"n_classes must be in [1, {len(ELEMENTS) // 2}]")
        if self.motif_len < 1:
            raise ValueError("motif_len must be >= 1")


def _class_motif(cls: int, motif_len: int, background: str) -> str:
    """The k-mer defining latent class ``cls``, over residues outside the
    background letters (keeps motif content separable from the composition
    dial).  Derived from the class index alone, so corpora generated with
    different seeds agree on what each class looks like."""
    pool = [c for c in AMINO_ACIDS if c not in background]
    rng = np.random.default_rng(0xC1A55 + cls)
    sub = rng.choice(len(pool), size=motif_len, replace=True)
    return "".join(pool[i] for i in sub)


def _class_palette(cls: int) -> tuple[str, str]:
    return ELEMENTS[2 * cls], ELEMENTS[2 * cls + 1]


def generate_synthetic_dataset(n_pairs: int, seq_len: int = 30,
                               n_atoms: int = 12,
                               motif_config: Optional[MotifConfig] = None,
                               seed: int = 0) -> Dataset:
    """Deterministic planted-correspondence corpus.

    Pair p of class c gets a protein whose sequence carries the class motif
    at a random position and a ligand whose atoms use the class palette.
    Motif residues sit within 8 A of the ligand atoms and every other
    residue sits far outside, so :func:`derive_binding_labels` recovers
    exactly the motif positions.  Affinities scatter around a
    class-consistent level.
    """
    cfg = motif_config or MotifConfig()
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if cfg.motif_len > seq_len:
        raise ValueError(
            f"motif length {cfg.motif_len} exceeds sequence length {seq_len}")
    if n_atoms < 2:
        raise ValueError("n_atoms must be >= 2")
    rng = np.random.default_rng(seed)
    motifs = [_class_motif(c, cfg.motif_len, cfg.background_residues)
              for c in range(cfg.n_classes)]

    proteins: dict[str, ProteinRecord] = {}
    ligands: dict[str, LigandRecord] = {}
    triplets: list[AffinityTriplet] = []
    bg = cfg.background_residues
    for p in range(n_pairs):
        cls = p % cfg.n_classes
        dial = float(rng.uniform(0.0, 1.0))
        pid = f"P{p:04d}"
        lid = f"L{p:04d}"

        # Sequence: background mixture encoding the dial, motif planted at a
        # random offset.
        background = rng.choice([bg[0], bg[1]], size=seq_len,
                                p=[dial, 1.0 - dial])
        seq = list(background)
        start = int(rng.integers(0, seq_len - cfg.motif_len + 1))
        seq[start:start + cfg.motif_len] = motifs[cls]
        sequence = "".join(seq)
        motif_positions = list(range(start, start + cfg.motif_len))

        # Ligand atoms: class palette mixed by the dial, jittered inside a
        # ball whose radius also tracks the dial, so pair identity is
        # present in both composition and geometry.
        e1, e2 = _class_palette(cls)
        n_e1 = int(round(dial * (n_atoms - 2))) + 1   # both elements present
        lig_radius = 1.0 + 0.5 * dial
        lig_atoms = []
        for a in range(n_atoms):
            pos = rng.uniform(-lig_radius, lig_radius, size=3)
            element = e1 if a < n_e1 else e2
            lig_atoms.append(Atom(element, *pos))
        ligands[lid] = LigandRecord(lid, tuple(lig_atoms),
                                    smiles=f"[{e1}][{e2}]", target_count=0)

        # Protein atoms: motif residues on a shell around the ligand whose
        # radius tracks the dial (worst case 6.4 + 1.5 < 8 A keeps every
        # motif residue inside the labeling threshold), the rest far away.
        shell = 4.0 + 2.0 * dial
        atoms: list[tuple[Atom, int]] = []
        for j, ridx in enumerate(motif_positions):
            angle = 2.0 * math.pi * j / max(1, len(motif_positions))
            center = np.array([shell * math.cos(angle),
                               shell * math.sin(angle), 0.0])
            for k in range(2):
                jitter = rng.uniform(-0.4, 0.4, size=3)
                atoms.append((Atom("C", *(center + jitter)), ridx))
        far_indices = [i for i in range(seq_len) if i not in
                       set(motif_positions)]
        for j, ridx in enumerate(far_indices):
            angle = 2.0 * math.pi * j / max(1, len(far_indices))
            center = np.array([40.0 + 6.0 * math.cos(angle),
                               40.0 + 6.0 * math.sin(angle), 25.0])
            jitter = rng.uniform(-0.4, 0.4, size=3)
            atoms.append((Atom("C", *(center + jitter)), ridx))

        proteins[pid] = ProteinRecord(
            id=pid, sequence=sequence, atoms=tuple(atoms),
            pocket_residues=tuple(motif_positions), annotation=None)

        # Affinity around a class-consistent pAffinity level (nanomolar
        # inputs: value = 10 ** (9 - pAff)).
        p_aff = 6.5 + (cls % 3) + rng.normal(0.0, cfg.affinity_noise)
        value_nm = 10.0 ** (9.0 - p_aff)
        triplets.append(AffinityTriplet(pid, lid, float(value_nm), None))

    return Dataset(proteins, ligands, tuple(triplets)).with_target_counts()


def inject_noise(dataset: Dataset, seed: int = 0,
                 duplicate_fraction: float = 0.2,
                 n_promiscuous: int = 4,
                 promiscuous_degree: int = 25) -> Dataset:
    """Pollute a clean corpus for curation experiments.

    Adds (a) duplicates of a fraction of pairs whose affinities are shuffled
    across the duplicated set, creating high-variance assay disagreement,
    and (b) promiscuous ligands with mixed palettes weakly bound to many
    proteins.  The bilateral pipeline should remove both kinds.
    """
    rng = np.random.default_rng(seed)
    triplets = list(dataset.triplets)
    ligands = dict(dataset.ligands)

    n_dup = int(round(duplicate_fraction * len(triplets)))
    dup_idx = rng.choice(len(triplets), size=n_dup, replace=False)
    # Shuffled affinities: each duplicate gets another duplicate's value
    # scaled hard enough that the pairwise log-sigma crosses the filter.
    dup_values = [triplets[i].affinity for i in dup_idx]
    shuffled = list(rng.permutation(dup_values))
    for j, i in enumerate(dup_idx):
        t = triplets[i]
        noisy = shuffled[j] * 10.0 ** float(rng.choice([-3.0, 3.0]))
        triplets.append(AffinityTriplet(t.protein_id, t.ligand_id,
                                        float(noisy), f"assay-dup{j}"))

    protein_ids = sorted(dataset.proteins)
    for k in range(n_promiscuous):
        lid = f"LHUB{k:02d}"
        atoms = []
        for a in range(10):
            element = ELEMENTS[int(rng.integers(0, len(ELEMENTS)))]
            atoms.append(Atom(element, *rng.uniform(-1.5, 1.5, size=3)))
        ligands[lid] = LigandRecord(lid, tuple(atoms), smiles=None)
        degree = min(promiscuous_degree, len(protein_ids))
        chosen = rng.choice(len(protein_ids), size=degree, replace=False)
        for c in chosen:
            # Weak binders: pAffinity ~ 4 (100 uM), below the strong cut.
            value_nm = 10.0 ** (9.0 - float(rng.normal(4.0, 0.2)))
            triplets.append(AffinityTriplet(protein_ids[c], lid,
                                            value_nm, f"assay-hub{k}"))

    return Dataset(dataset.proteins, ligands,
                   tuple(triplets)).with_target_counts()
