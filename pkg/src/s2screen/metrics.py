"""Ranking metrics for screening and residue-labeling evaluation.

All metrics are rank-based and therefore invariant under strictly monotone
score transformations.  Ranking is by descending score with ties broken by
stable input order, except where noted:

* ``auroc`` credits ties 0.5 (Mann-Whitney U convention), so it does not
  depend on tie order at all.
* ``pr_auc`` is average precision with tied scores treated as a single
  operating point (one threshold per distinct score), which makes the
  all-ties value equal the positive prevalence.

``bedroc`` follows the Truchon-Bayly construction: the exponentially
weighted sum over active ranks is min-max rescaled between its worst-case
and best-case placements, computed with the same summation so the extremes
land exactly on 0 and 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "RankedList",
    "auroc",
    "bedroc",
    "enrichment_factor",
    "pr_auc",
    "f1_best",
    "evaluate_screening",
    "evaluate_site_predictions",
    "BEDROC_ALPHA",
    "EF_FRACTIONS",
]

BEDROC_ALPHA = 80.5
EF_FRACTIONS = (0.005, 0.01, 0.05)


@dataclass(frozen=True)
class RankedList:
    """Scores with binary labels (1 = active)."""

    scores: tuple[float, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.scores) != len(self.labels):
            raise ValueError("scores and labels must have equal length")
        if any(l not in (0, 1) for l in self.labels):
            raise ValueError("labels must be 0/1")

    @property
    def n(self) -> int:
        return len(self.scores)

    @property
    def n_pos(self) -> int:
        return sum(self.labels)


def _as_ranked(scores, labels) -> RankedList:
    if isinstance(scores, RankedList):
        return scores
    return RankedList(tuple(float(s) for s in scores),
                      tuple(int(l) for l in labels))


def _stable_descending_order(scores: Sequence[float]) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def auroc(scores, labels=None) -> float:
    """Probability a random active outscores a random decoy, ties 0.5.

    Computed as the Mann-Whitney U statistic over n_pos * n_neg pairs via
    midranks, O(N log N).
    """
    rl = _as_ranked(scores, labels)
    n_pos = rl.n_pos
    n_neg = rl.n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc requires both classes present")
    order = sorted(range(rl.n), key=lambda i: rl.scores[i])
    ranks = [0.0] * rl.n
    i = 0
    while i < rl.n:
        j = i
        while j + 1 < rl.n and rl.scores[order[j + 1]] == rl.scores[order[i]]:
            j += 1
        midrank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = midrank
        i = j + 1
    rank_sum = sum(r for r, l in zip(ranks, rl.labels) if l == 1)
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _bedroc_rank_sum(ranks: Sequence[int], alpha: float, n: int) -> float:
    return sum(math.exp(-alpha * r / n) for r in ranks)


def bedroc(scores, labels=None, alpha: float = BEDROC_ALPHA) -> float:
    """Early-recognition score in [0, 1]: exponentially weighted active
    ranks, min-max rescaled so all-actives-first gives exactly 1 and
    all-actives-last exactly 0.  Ranks are 1-based by descending score,
    stable on ties."""
    rl = _as_ranked(scores, labels)
    n, n_pos = rl.n, rl.n_pos
    if n_pos == 0 or n_pos == n:
        raise ValueError("bedroc requires both classes present")
    order = _stable_descending_order(rl.scores)
    active_ranks = [pos + 1 for pos, idx in enumerate(order)
                    if rl.labels[idx] == 1]
    observed = _bedroc_rank_sum(active_ranks, alpha, n)
    best = _bedroc_rank_sum(range(1, n_pos + 1), alpha, n)
    worst = _bedroc_rank_sum(range(n - n_pos + 1, n + 1), alpha, n)
    return (observed - worst) / (best - worst)


def enrichment_factor(scores, labels=None, fraction: float = 0.01) -> float:
    """Active concentration in the top ceil(fraction * N) over the global
    concentration: (hits / n_pos) / fraction."""
    rl = _as_ranked(scores, labels)
    if rl.n == 0:
        raise ValueError("enrichment_factor requires a nonempty list")
    if rl.n_pos == 0:
        raise ValueError("enrichment_factor requires at least one active")
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    top = math.ceil(fraction * rl.n)
    order = _stable_descending_order(rl.scores)
    hits = sum(rl.labels[idx] for idx in order[:top])
    return (hits / rl.n_pos) / fraction


def pr_auc(scores, labels=None) -> float:
    """Average precision with one operating point per distinct score:
    sum over thresholds of precision * recall increment."""
    rl = _as_ranked(scores, labels)
    n_pos = rl.n_pos
    if n_pos == 0:
        raise ValueError("pr_auc requires at least one positive")
    order = _stable_descending_order(rl.scores)
    ap = 0.0
    tp = fp = 0
    prev_tp = 0
    i = 0
    while i < rl.n:
        j = i
        score = rl.scores[order[i]]
        while j < rl.n and rl.scores[order[j]] == score:
            if rl.labels[order[j]] == 1:
                tp += 1
            else:
                fp += 1
            j += 1
        if tp > prev_tp:
            precision = tp / (tp + fp)
            ap += precision * (tp - prev_tp) / n_pos
            prev_tp = tp
        i = j
    return ap


def f1_best(scores, labels=None) -> tuple[float, float]:
    """Sweep every distinct score as a >=-threshold and return the best F1
    together with the threshold achieving it (highest such threshold on
    ties).  F1 is 0 whenever precision + recall is 0."""
    rl = _as_ranked(scores, labels)
    n_pos = rl.n_pos
    if n_pos == 0:
        raise ValueError("f1_best requires at least one positive")
    order = _stable_descending_order(rl.scores)
    best_f1 = -1.0
    best_thr = math.inf
    tp = fp = 0
    i = 0
    while i < rl.n:
        j = i
        score = rl.scores[order[i]]
        while j < rl.n and rl.scores[order[j]] == score:
            if rl.labels[order[j]] == 1:
                tp += 1
            else:
                fp += 1
            j += 1
        fn = n_pos - tp
        f1 = 0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
        if f1 > best_f1:
            best_f1 = f1
            best_thr = score
        i = j
    return best_f1, best_thr


def evaluate_screening(per_target: Mapping[str, RankedList]) -> dict:
    """Per-target auroc / bedroc / EF at 0.5, 1, 5 percent plus their
    unweighted macro averages, percentage-scaled and rounded to 2 decimals.
    """
    if not per_target:
        raise ValueError("evaluate_screening requires at least one target")
    per_target_out: dict[str, dict[str, float]] = {}
    sums = {"auroc": 0.0, "bedroc": 0.0, "ef_0.5%": 0.0, "ef_1%": 0.0,
            "ef_5%": 0.0}
    for target_id in sorted(per_target):
        rl = per_target[target_id]
        row = {
            "auroc": auroc(rl),
            "bedroc": bedroc(rl),
            "ef_0.5%": enrichment_factor(rl, fraction=0.005),
            "ef_1%": enrichment_factor(rl, fraction=0.01),
            "ef_5%": enrichment_factor(rl, fraction=0.05),
        }
        for k, v in row.items():
            sums[k] += v
        per_target_out[target_id] = {
            k: round(100.0 * v, 2) for k, v in row.items()}
    n = len(per_target)
    macro = {k: round(100.0 * v / n, 2) for k, v in sums.items()}
    return {"n_targets": n, "macro": macro, "per_target": per_target_out}


def evaluate_site_predictions(
        per_protein: Mapping[str, RankedList]) -> dict:
    """Residue-labeling report: per-protein best-threshold F1 and PR-AUC,
    macro-averaged, percentage-scaled, 2 decimals.  Prevalence is included
    because PR-AUC is only meaningful against it."""
    if not per_protein:
        raise ValueError(
            "evaluate_site_predictions requires at least one protein")
    per_out: dict[str, dict[str, float]] = {}
    f1_sum = ap_sum = prev_sum = 0.0
    for pid in sorted(per_protein):
        rl = per_protein[pid]
        f1, _ = f1_best(rl)
        ap = pr_auc(rl)
        prevalence = rl.n_pos / rl.n
        f1_sum += f1
        ap_sum += ap
        prev_sum += prevalence
        per_out[pid] = {
            "f1": round(100.0 * f1, 2),
            "pr_auc": round(100.0 * ap, 2),
            "prevalence": round(100.0 * prevalence, 2),
        }
    n = len(per_protein)
    return {
        "n_proteins": n,
        "macro": {
            "f1": round(100.0 * f1_sum / n, 2),
            "pr_auc": round(100.0 * ap_sum / n, 2),
            "prevalence": round(100.0 * prev_sum / n, 2),
        },
        "per_protein": per_out,
    }
