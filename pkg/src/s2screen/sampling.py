"""Bilateral data curation: protein-side redundancy reduction, ligand-side
noise mitigation, and joint rebalanced subsampling.

The protein side clusters sequences by global-alignment identity and
downweights members of large clusters by ``size ** -alpha``; within each
functional-annotation group only the protein with the greatest ligand
diversity is retained.  The ligand side drops pairs whose replicate assay
values disagree (population sigma of log10 values >= delta), discards
frequent hitters unless a strict majority of their affinities indicate
strong binding, and applies a literal-substring SMILES denylist.  Survivors
are subsampled without replacement with per-triplet weight
``protein_prob * 1 / max(target_count, 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import AffinityTriplet, Dataset, ProteinRecord

__all__ = [
    "MATCH_SCORE",
    "MISMATCH_SCORE",
    "GAP_SCORE",
    "seq_identity",
    "HomologyClusters",
    "cluster_homologs",
    "homology_weight",
    "functional_dedup",
    "affinity_variability",
    "paffinity",
    "frequent_hitter_keep",
    "pains_flag",
    "SamplingConfig",
    "SamplingPlan",
    "CurationReport",
    "joint_subsample",
    "run_bilateral_pipeline",
]

MATCH_SCORE = 2
MISMATCH_SCORE = -1
GAP_SCORE = -2


def seq_identity(a: str, b: str) -> float:
    """Fraction of identical aligned positions under an optimal global
    alignment (match +2, mismatch -1, gap -2), normalized by max(|a|, |b|).

    Among equal-score alignments the one with the most identical positions
    is used, which makes the value well defined and symmetric.  Exact
    dynamic program, no heuristics.
    """
    if not a or not b:
        raise ValueError("seq_identity requires nonempty sequences")
    n, m = len(a), len(b)
    # Lexicographic (score, matches) packed into one int: score * base +
    # matches, valid because 0 <= matches < base and all scores are ints.
    base = min(n, m) + 1
    prev = [-2 * j * base for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [-2 * i * base] + [0] * m
        ca = a[i - 1]
        for j in range(1, m + 1):
            if ca == b[j - 1]:
                diag = prev[j - 1] + MATCH_SCORE * base + 1
            else:
                diag = prev[j - 1] + MISMATCH_SCORE * base
            up = prev[j] + GAP_SCORE * base
            left = cur[j - 1] + GAP_SCORE * base
            best = diag if diag >= up else up
            if left > best:
                best = left
            cur[j] = best
        prev = cur
    matches = prev[m] % base
    return matches / max(n, m)


# ---------------------------------------------------------------------------
# protein side
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HomologyClusters:
    """Partition of protein ids into identity clusters, one representative
    each (the first, longest member)."""

    clusters: tuple[tuple[str, ...], ...]
    representatives: tuple[str, ...]
    identity_threshold: float

    def size_of(self, protein_id: str) -> int:
        for members in self.clusters:
            if protein_id in members:
                return len(members)
        raise KeyError(protein_id)

    def size_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for members in self.clusters:
            hist[len(members)] = hist.get(len(members), 0) + 1
        return hist


def cluster_homologs(proteins: dict[str, ProteinRecord],
                     threshold: float = 0.40) -> HomologyClusters:
    """Greedy incremental clustering: visit proteins by descending sequence
    length (ties by id), join the first cluster whose representative matches
    at identity >= threshold, otherwise found a new cluster."""
    if not proteins:
        raise ValueError("cluster_homologs requires at least one protein")
    order = sorted(proteins.values(), key=lambda p: (-p.length, p.id))
    clusters: list[list[str]] = []
    reps: list[ProteinRecord] = []
    for protein in order:
        placed = False
        for ci, rep in enumerate(reps):
            if seq_identity(protein.sequence, rep.sequence) >= threshold:
                clusters[ci].append(protein.id)
                placed = True
                break
        if not placed:
            clusters.append([protein.id])
            reps.append(protein)
    return HomologyClusters(
        clusters=tuple(tuple(c) for c in clusters),
        representatives=tuple(r.id for r in reps),
        identity_threshold=threshold,
    )


def homology_weight(cluster_size: int, alpha: float = 0.5) -> float:
    """Inclusion probability ``cluster_size ** -alpha`` penalizing large
    families while keeping diversity."""
    if cluster_size < 1:
        raise ValueError("cluster_size must be >= 1")
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    return cluster_size ** (-alpha)


def functional_dedup(proteins: dict[str, ProteinRecord],
                     triplets: Sequence[AffinityTriplet]) -> set[str]:
    """Retain one representative per functional-annotation group: the
    protein binding the most distinct ligands, ties to the smallest id.
    Proteins without annotation are their own group and always survive."""
    diversity: dict[str, set[str]] = {pid: set() for pid in proteins}
    for t in triplets:
        if t.protein_id in diversity:
            diversity[t.protein_id].add(t.ligand_id)
    groups: dict[str, list[str]] = {}
    retained: set[str] = set()
    for pid, protein in proteins.items():
        if protein.annotation is None:
            retained.add(pid)
        else:
            groups.setdefault(protein.annotation, []).append(pid)
    for members in groups.values():
        members.sort(key=lambda pid: (-len(diversity[pid]), pid))
        retained.add(members[0])
    return retained


# ---------------------------------------------------------------------------
# ligand side
# ---------------------------------------------------------------------------

def affinity_variability(values: Sequence[float]) -> tuple[float, float]:
    """(population std, mean) of log10 affinities for one protein-ligand
    pair observed across assays.  A single observation has sigma 0."""
    if not values:
        raise ValueError("affinity_variability requires at least one value")
    logs = []
    for v in values:
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"affinity values must be positive, got {v!r}")
        logs.append(math.log10(v))
    arr = np.asarray(logs)
    return float(arr.std()), float(arr.mean())


def paffinity(canonical_log: float, convention: str = "nanomolar") -> float:
    """Negative-log binding strength from a canonical log10 value.

    ``nanomolar``: inputs are concentrations in nM, pAff = 9 - log10(nM).
    ``p``: inputs are already p-values (pKd/pKi/pIC50), used as-is.
    """
    if convention == "nanomolar":
        return 9.0 - canonical_log
    if convention == "p":
        return canonical_log
    raise ValueError(f"unknown affinity convention {convention!r}")


def frequent_hitter_keep(target_count: int,
                         canonical_logs: Sequence[float],
                         cutoff: int = 20,
                         strong_paffinity: float = 6.0,
                         convention: str = "nanomolar") -> bool:
    """Keep a ligand bound to more than ``cutoff`` distinct proteins only if
    strictly more than half of its canonical affinities are strong
    (pAffinity >= strong_paffinity, i.e. <= 1 uM under the default
    nanomolar convention)."""
    if target_count < 0:
        raise ValueError("target_count must be nonnegative")
    if target_count <= cutoff:
        return True
    if not canonical_logs:
        return False
    strong = sum(1 for c in canonical_logs
                 if paffinity(c, convention) >= strong_paffinity)
    return strong * 2 > len(canonical_logs)


def pains_flag(smiles: Optional[str], denylist: Sequence[str]) -> bool:
    """True iff any denylist pattern occurs literally in the SMILES string.
    Opaque substring matching, not chemistry; null SMILES never match."""
    if smiles is None:
        return False
    return any(pattern in smiles for pattern in denylist if pattern)


# ---------------------------------------------------------------------------
# joint subsampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingConfig:
    alpha: float = 0.5
    delta: float = 1.0
    hitter_cutoff: int = 20
    identity_threshold: float = 0.40
    strong_paffinity: float = 6.0
    affinity_convention: str = "nanomolar"
    pains_denylist: tuple[str, ...] = ()
    target_size: Optional[int] = None    # None keeps every clean triplet
    seed: int = 0


@dataclass(frozen=True)
class SamplingPlan:
    """Everything the subsampler needs, computed before any randomness:
    per-protein inclusion probability, per-ligand rebalancing weight, and
    the per-triplet clean flag."""

    protein_prob: dict[str, float]
    ligand_weight: dict[str, float]
    clean: tuple[bool, ...]
    alpha: float
    delta: float
    hitter_cutoff: int
    target_size: int
    seed: int

    def __post_init__(self):
        for pid, pr in self.protein_prob.items():
            if not (0.0 < pr <= 1.0):
                raise ValueError(
                    f"protein probability out of (0, 1] for {pid!r}: {pr}")
        for lid, w in self.ligand_weight.items():
            if not w > 0:
                raise ValueError(
                    f"ligand weight must be positive for {lid!r}: {w}")


@dataclass
class CurationReport:
    n_input_triplets: int = 0
    n_input_proteins: int = 0
    n_input_ligands: int = 0
    collapsed_duplicate_rows: int = 0
    removed_variance: int = 0
    removed_dedup: int = 0
    removed_hitter: int = 0
    removed_pains: int = 0
    clean_pool: int = 0
    target_size: int = 0
    final_size: int = 0
    cluster_size_histogram: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_input_triplets": self.n_input_triplets,
            "n_input_proteins": self.n_input_proteins,
            "n_input_ligands": self.n_input_ligands,
            "collapsed_duplicate_rows": self.collapsed_duplicate_rows,
            "removed_variance": self.removed_variance,
            "removed_dedup": self.removed_dedup,
            "removed_hitter": self.removed_hitter,
            "removed_pains": self.removed_pains,
            "clean_pool": self.clean_pool,
            "target_size": self.target_size,
            "final_size": self.final_size,
            "cluster_size_histogram": {
                str(k): v for k, v in sorted(
                    self.cluster_size_histogram.items())},
        }


def joint_subsample(dataset: Dataset, plan: SamplingPlan) -> Dataset:
    """Weighted sampling without replacement over the clean triplets.

    Each clean triplet carries weight ``Pr(P) * w_lig(L)``.  Selection uses
    the weighted-order method: draw one uniform U per triplet, rank by
    ``U ** (1 / weight)`` (computed as log(U) / weight, a monotone
    equivalent), keep the top ``target_size``.  Seeded and deterministic;
    non-clean triplets are never selected.
    """
    if len(plan.clean) != len(dataset.triplets):
        raise ValueError("plan clean flags do not align with dataset")
    clean_idx = [i for i, ok in enumerate(plan.clean) if ok]
    if plan.target_size > len(clean_idx):
        raise ValueError(
            f"target_size {plan.target_size} exceeds clean pool "
            f"{len(clean_idx)}")
    rng = np.random.default_rng(plan.seed)
    u = rng.random(len(dataset.triplets))   # one draw per triplet, in order
    keyed = []
    for i in clean_idx:
        t = dataset.triplets[i]
        weight = (plan.protein_prob[t.protein_id]
                  * plan.ligand_weight[t.ligand_id])
        keyed.append((math.log(u[i]) / weight, i))
    keyed.sort(key=lambda kv: (-kv[0], kv[1]))
    chosen = sorted(i for _, i in keyed[:plan.target_size])

    triplets = tuple(dataset.triplets[i] for i in chosen)
    proteins = {t.protein_id: dataset.proteins[t.protein_id]
                for t in triplets}
    ligands = {t.ligand_id: dataset.ligands[t.ligand_id] for t in triplets}
    return Dataset(proteins, ligands, triplets).with_target_counts()


def _canonical_pairs(dataset: Dataset, delta: float,
                     report: CurationReport) -> list[AffinityTriplet]:
    """Collapse replicate (protein, ligand) rows: pairs whose log10 values
    have population sigma >= delta are dropped entirely; surviving
    replicates merge into one row at the mean log-value."""
    groups: dict[tuple[str, str], list[AffinityTriplet]] = {}
    order: list[tuple[str, str]] = []
    for t in dataset.triplets:
        key = (t.protein_id, t.ligand_id)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(t)
    canonical: list[AffinityTriplet] = []
    for key in order:
        rows = groups[key]
        sigma, mean_log = affinity_variability([t.affinity for t in rows])
        if sigma >= delta:
            report.removed_variance += len(rows)
            continue
        if len(rows) == 1:
            canonical.append(rows[0])
        else:
            report.collapsed_duplicate_rows += len(rows) - 1
            canonical.append(AffinityTriplet(
                key[0], key[1], 10.0 ** mean_log, None))
    return canonical


def run_bilateral_pipeline(
        dataset: Dataset,
        config: SamplingConfig) -> tuple[Dataset, CurationReport]:
    """Execute the full curation pass and return the cleaned dataset plus a
    per-rule removal report.

    Order of operations: homology clustering (weights are computed before
    dedup, over all input proteins), replicate-variance filtering, hitter
    and denylist filtering with target counts taken over the
    variance-filtered pairs, functional dedup, then seeded weighted
    subsampling of the surviving triplets.  Proteins and ligands no longer
    referenced by any selected triplet are dropped from the output.
    """
    report = CurationReport(
        n_input_triplets=len(dataset.triplets),
        n_input_proteins=len(dataset.proteins),
        n_input_ligands=len(dataset.ligands),
    )
    clusters = cluster_homologs(dataset.proteins, config.identity_threshold)
    report.cluster_size_histogram = clusters.size_histogram()
    protein_prob = {}
    for members in clusters.clusters:
        w = homology_weight(len(members), config.alpha)
        for pid in members:
            protein_prob[pid] = w

    canonical = _canonical_pairs(dataset, config.delta, report)

    lig_proteins: dict[str, set[str]] = {}
    lig_logs: dict[str, list[float]] = {}
    for t in canonical:
        lig_proteins.setdefault(t.ligand_id, set()).add(t.protein_id)
        lig_logs.setdefault(t.ligand_id, []).append(math.log10(t.affinity))

    hitter_keep = {
        lid: frequent_hitter_keep(
            len(lig_proteins[lid]), lig_logs[lid], config.hitter_cutoff,
            config.strong_paffinity, config.affinity_convention)
        for lid in lig_proteins}
    pains = {lid: pains_flag(dataset.ligands[lid].smiles,
                             config.pains_denylist)
             for lid in lig_proteins}
    retained_proteins = functional_dedup(dataset.proteins, canonical)

    clean_flags = []
    for t in canonical:
        if not hitter_keep[t.ligand_id]:
            clean_flags.append(False)
            report.removed_hitter += 1
        elif pains[t.ligand_id]:
            clean_flags.append(False)
            report.removed_pains += 1
        elif t.protein_id not in retained_proteins:
            clean_flags.append(False)
            report.removed_dedup += 1
        else:
            clean_flags.append(True)

    canonical_ds = Dataset(dataset.proteins, dataset.ligands,
                           tuple(canonical)).with_target_counts()
    ligand_weight = {
        lid: 1.0 / max(len(lig_proteins.get(lid, ())), 1)
        for lid in dataset.ligands}

    clean_count = sum(clean_flags)
    report.clean_pool = clean_count
    target = config.target_size if config.target_size is not None \
        else clean_count
    report.target_size = target

    plan = SamplingPlan(
        protein_prob=protein_prob,
        ligand_weight=ligand_weight,
        clean=tuple(clean_flags),
        alpha=config.alpha,
        delta=config.delta,
        hitter_cutoff=config.hitter_cutoff,
        target_size=target,
        seed=config.seed,
    )
    sampled = joint_subsample(canonical_ds, plan)
    report.final_size = len(sampled.triplets)
    return sampled, report
