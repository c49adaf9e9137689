"""Homology-exclusion splits for generalization experiments.

Training proteins whose sequence identity to any test protein reaches the
cutoff are removed; the audit records one witness pair per removal so the
filtering is verifiable.
"""

from __future__ import annotations

from dataclasses import dataclass

from .data import ProteinRecord
from .sampling import seq_identity

__all__ = ["ExclusionAuditEntry", "homology_exclusion_split"]

STANDARD_CUTOFFS = (0.90, 0.60, 0.30)


@dataclass(frozen=True)
class ExclusionAuditEntry:
    train_id: str
    test_id: str
    identity: float

    def to_dict(self) -> dict:
        return {"train_id": self.train_id, "test_id": self.test_id,
                "identity": self.identity}


def homology_exclusion_split(
        train: dict[str, ProteinRecord],
        test: dict[str, ProteinRecord],
        cutoff: float) -> tuple[dict[str, ProteinRecord],
                                list[ExclusionAuditEntry]]:
    """Drop every training protein with identity >= cutoff to any test
    protein.  Returns the filtered training set and, per removal, the first
    offending (train, test) pair with its identity value.  Lowering the
    cutoff can only grow the removed set."""
    if not train or not test:
        raise ValueError("both protein sets must be nonempty")
    if not (0.0 < cutoff <= 1.0):
        raise ValueError("cutoff must lie in (0, 1]")
    kept: dict[str, ProteinRecord] = {}
    audit: list[ExclusionAuditEntry] = []
    test_items = [test[tid] for tid in sorted(test)]
    for pid in sorted(train):
        protein = train[pid]
        witness = None
        for other in test_items:
            identity = seq_identity(protein.sequence, other.sequence)
            if identity >= cutoff:
                witness = ExclusionAuditEntry(pid, other.id, identity)
                break
        if witness is None:
            kept[pid] = protein
        else:
            audit.append(witness)
    return kept, audit
