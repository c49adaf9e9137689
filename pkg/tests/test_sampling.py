"""Tests for sequence identity, clustering, the ligand-side filters, and
the weighted subsampler."""

import itertools
import math

import numpy as np
import pytest

from s2screen import data as dm
from s2screen import sampling as sp


def brute_force_identity(a, b):
    """Enumerate every global alignment (all gap placements), keep the
    maximum-score ones, and return the best match count over max(len)."""
    best = {}

    def extend(i, j, score, matches):
        if i == len(a) and j == len(b):
            prev = best.get("done")
            cand = (score, matches)
            if prev is None or cand > prev:
                best["done"] = cand
            return
        if i < len(a) and j < len(b):
            gain = sp.MATCH_SCORE if a[i] == b[j] else sp.MISMATCH_SCORE
            extend(i + 1, j + 1, score + gain,
                   matches + (1 if a[i] == b[j] else 0))
        if i < len(a):
            extend(i + 1, j, score + sp.GAP_SCORE, matches)
        if j < len(b):
            extend(i, j + 1, score + sp.GAP_SCORE, matches)

    extend(0, 0, 0, 0)
    return best["done"][1] / max(len(a), len(b))


def make_protein(pid, sequence, annotation=None):
    return dm.ProteinRecord(id=pid, sequence=sequence, atoms=(),
                            annotation=annotation)


def make_dataset(proteins, ligand_ids, triplets):
    ligands = {lid: dm.LigandRecord(
        id=lid, atoms=(dm.Atom("C", 0.0, 0.0, 0.0),)) for lid in ligand_ids}
    return dm.Dataset({p.id: p for p in proteins}, ligands,
                      tuple(triplets)).with_target_counts()


class TestSeqIdentity:
    def test_identical(self):
        assert sp.seq_identity("ACDEFG", "ACDEFG") == 1.0

    def test_disjoint_alphabets(self):
        assert sp.seq_identity("AAAA", "CCCC") == 0.0

    def test_prefix_case(self):
        assert sp.seq_identity("ACDE", "ACD") == 0.75

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(17)
        alphabet = "ACDE"
        for _ in range(40):
            la = int(rng.integers(1, 6))
            lb = int(rng.integers(1, 6))
            a = "".join(rng.choice(list(alphabet), la))
            b = "".join(rng.choice(list(alphabet), lb))
            assert sp.seq_identity(a, b) == pytest.approx(
                brute_force_identity(a, b), abs=1e-12), (a, b)

    def test_symmetric(self):
        rng = np.random.default_rng(23)
        for _ in range(30):
            a = "".join(rng.choice(list("ACDEFGHIK"),
                                   int(rng.integers(1, 12))))
            b = "".join(rng.choice(list("ACDEFGHIK"),
                                   int(rng.integers(1, 12))))
            assert sp.seq_identity(a, b) == sp.seq_identity(b, a)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sp.seq_identity("", "ACD")


class TestClustering:
    def test_forced_pair_and_singleton(self):
        proteins = {p.id: p for p in [
            make_protein("p1", "ACDEFGHIKL"),
            make_protein("p2", "ACDEFGHIKL"),
            make_protein("p3", "WWWWWWWWWW"),
        ]}
        clusters = sp.cluster_homologs(proteins, 0.40)
        sizes = sorted(len(c) for c in clusters.clusters)
        assert sizes == [1, 2]

    def test_all_distant_all_singletons(self):
        proteins = {p.id: p for p in [
            make_protein("p1", "AAAAAAAA"),
            make_protein("p2", "CCCCCCCC"),
            make_protein("p3", "GGGGGGGG"),
        ]}
        clusters = sp.cluster_homologs(proteins, 0.40)
        assert all(len(c) == 1 for c in clusters.clusters)

    def test_chain_case_membership_via_representative(self):
        # B matches A, C matches B but not A; with A first (tie broken by
        # id), C is compared against representative A only and splits off.
        a, b, c = "AAAAAAAAAA", "AAAAACCCCC", "CCCCCGGGGG"
        assert sp.seq_identity(a, b) >= 0.4
        assert sp.seq_identity(b, c) >= 0.4
        assert sp.seq_identity(a, c) < 0.4
        proteins = {p.id: p for p in [
            make_protein("pA", a), make_protein("pB", b),
            make_protein("pC", c)]}
        clusters = sp.cluster_homologs(proteins, 0.40)
        as_sets = [set(members) for members in clusters.clusters]
        assert {"pA", "pB"} in as_sets
        assert {"pC"} in as_sets

    def test_partition_property(self):
        rng = np.random.default_rng(31)
        proteins = {}
        for i in range(20):
            seq = "".join(rng.choice(list("ACDEFG"),
                                     int(rng.integers(4, 12))))
            proteins[f"p{i:02d}"] = make_protein(f"p{i:02d}", seq)
        clusters = sp.cluster_homologs(proteins, 0.40)
        seen = list(itertools.chain.from_iterable(clusters.clusters))
        assert sorted(seen) == sorted(proteins)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(37)
        proteins = {}
        for i in range(15):
            seq = "".join(rng.choice(list("ACDE"), 10))
            proteins[f"p{i:02d}"] = make_protein(f"p{i:02d}", seq)
        counts = [len(sp.cluster_homologs(proteins, thr).clusters)
                  for thr in (0.2, 0.4, 0.6, 0.8, 1.0)]
        assert counts == sorted(counts)


class TestHomologyWeight:
    def test_reference_values(self):
        assert sp.homology_weight(1) == 1.0
        assert sp.homology_weight(4, alpha=0.5) == 0.5
        assert sp.homology_weight(9, alpha=0.5) == pytest.approx(1 / 3)

    def test_strictly_decreasing_in_size(self):
        for alpha in (0.25, 0.5, 1.0):
            weights = [sp.homology_weight(s, alpha) for s in range(1, 30)]
            assert all(a > b for a, b in zip(weights, weights[1:]))

    def test_alpha_bounds(self):
        with pytest.raises(ValueError):
            sp.homology_weight(4, alpha=0.0)
        with pytest.raises(ValueError):
            sp.homology_weight(4, alpha=1.5)


class TestFunctionalDedup:
    def triplets_for(self, counts):
        rows = []
        for pid, n in counts.items():
            for k in range(n):
                rows.append(dm.AffinityTriplet(pid, f"L{pid}{k}", 1.0))
        return rows

    def test_retains_most_diverse(self):
        proteins = {p.id: p for p in [
            make_protein("P1", "AAAA", "kinase"),
            make_protein("P2", "CCCC", "kinase")]}
        rows = self.triplets_for({"P1": 3, "P2": 1})
        assert sp.functional_dedup(proteins, rows) == {"P1"}

    def test_distinct_annotations_all_retained(self):
        proteins = {p.id: p for p in [
            make_protein("P1", "AAAA", "kinase"),
            make_protein("P2", "CCCC", "protease")]}
        assert sp.functional_dedup(proteins, []) == {"P1", "P2"}

    def test_tie_breaks_to_smallest_id(self):
        proteins = {p.id: p for p in [
            make_protein("P2", "AAAA", "kinase"),
            make_protein("P1", "CCCC", "kinase")]}
        rows = self.triplets_for({"P1": 2, "P2": 2})
        assert sp.functional_dedup(proteins, rows) == {"P1"}

    def test_null_annotations_survive(self):
        proteins = {p.id: p for p in [
            make_protein("P1", "AAAA"), make_protein("P2", "CCCC")]}
        assert sp.functional_dedup(proteins, []) == {"P1", "P2"}


class TestAffinityVariability:
    def test_constant_values(self):
        sigma, canonical = sp.affinity_variability([100.0, 100.0, 100.0])
        assert sigma == 0.0
        assert canonical == pytest.approx(2.0)

    def test_population_sigma(self):
        # logs are {1, 3}: population sigma 1, mean 2.
        sigma, canonical = sp.affinity_variability([10.0, 1000.0])
        assert sigma == pytest.approx(1.0)
        assert canonical == pytest.approx(2.0)

    def test_singleton(self):
        sigma, canonical = sp.affinity_variability([50.0])
        assert sigma == 0.0
        assert canonical == pytest.approx(math.log10(50.0))

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            sp.affinity_variability([10.0, 0.0])


class TestFrequentHitter:
    def test_below_cutoff_always_kept(self):
        assert sp.frequent_hitter_keep(5, [5.0, 5.0])

    def test_majority_strong_kept(self):
        # pAff = 9 - log10(nM): logs of 2 give pAff 7 (strong), logs of 4
        # give pAff 5 (weak).  3 of 5 strong is a strict majority.
        assert sp.frequent_hitter_keep(25, [2.0, 2.0, 2.0, 4.0, 4.0])

    def test_minority_strong_discarded(self):
        assert not sp.frequent_hitter_keep(25, [2.0, 2.0, 4.0, 4.0, 4.0])

    def test_exact_half_is_not_majority(self):
        assert not sp.frequent_hitter_keep(25, [2.0, 4.0])

    def test_p_value_convention(self):
        # Under the p convention the canonical log is already pAffinity.
        assert sp.frequent_hitter_keep(25, [7.0, 7.0, 4.0], convention="p")
        assert not sp.frequent_hitter_keep(25, [4.0, 4.0, 7.0],
                                           convention="p")


class TestPainsFlag:
    def test_no_match(self):
        assert sp.pains_flag("CCO", ["N=N"]) is False

    def test_substring_match(self):
        assert sp.pains_flag("CN=NC", ["N=N"]) is True

    def test_empty_denylist(self):
        assert sp.pains_flag("CN=NC", []) is False

    def test_null_smiles(self):
        assert sp.pains_flag(None, ["N=N"]) is False


class TestJointSubsample:
    def two_triplet_dataset(self):
        proteins = [make_protein("PA", "AAAA"), make_protein("PB", "CCCC")]
        rows = [dm.AffinityTriplet("PA", "L1", 10.0),
                dm.AffinityTriplet("PB", "L2", 10.0)]
        return make_dataset(proteins, ["L1", "L2"], rows)

    def make_plan(self, clean=(True, True), seed=0, target=1):
        return sp.SamplingPlan(
            protein_prob={"PA": 1.0, "PB": 0.5},
            ligand_weight={"L1": 1.0, "L2": 1.0},
            clean=clean, alpha=0.5, delta=1.0, hitter_cutoff=20,
            target_size=target, seed=seed)

    def test_weighted_marginal_matches_eq1(self):
        # Cluster sizes 1 vs 4 at alpha 0.5 give weights 1 and 0.5; the
        # top-1 weighted-order draw selects the singleton-cluster triplet
        # with probability 1 / 1.5.
        ds = self.two_triplet_dataset()
        hits = 0
        trials = 20000
        for seed in range(trials):
            out = sp.joint_subsample(ds, self.make_plan(seed=seed))
            if out.triplets[0].protein_id == "PA":
                hits += 1
        assert hits / trials == pytest.approx(2.0 / 3.0, abs=0.02)

    def test_unclean_never_selected(self):
        ds = self.two_triplet_dataset()
        for seed in range(1000):
            out = sp.joint_subsample(
                ds, self.make_plan(clean=(True, False), seed=seed))
            assert out.triplets[0].protein_id == "PA"

    def test_full_pool_returned_when_target_equals_pool(self):
        ds = self.two_triplet_dataset()
        out = sp.joint_subsample(ds, self.make_plan(target=2))
        assert len(out.triplets) == 2

    def test_oversized_target_rejected(self):
        ds = self.two_triplet_dataset()
        with pytest.raises(ValueError, match="exceeds clean pool"):
            sp.joint_subsample(ds, self.make_plan(target=3))

    def test_seed_determinism(self):
        ds = self.two_triplet_dataset()
        a = sp.joint_subsample(ds, self.make_plan(seed=99))
        b = sp.joint_subsample(ds, self.make_plan(seed=99))
        assert a.triplets == b.triplets


def random_messy_dataset(rng):
    proteins = []
    n_prot = int(rng.integers(3, 8))
    for i in range(n_prot):
        seq = "".join(rng.choice(list("ACDEFGHIK"),
                                 int(rng.integers(5, 15))))
        annotation = None if rng.random() < 0.5 else \
            f"fn{int(rng.integers(0, 3))}"
        proteins.append(make_protein(f"P{i:02d}", seq, annotation))
    ligand_ids = [f"L{j:02d}" for j in range(int(rng.integers(2, 6)))]
    rows = []
    seen = set()
    for _ in range(int(rng.integers(4, 14))):
        pid = f"P{int(rng.integers(0, n_prot)):02d}"
        lid = ligand_ids[int(rng.integers(0, len(ligand_ids)))]
        assay = str(int(rng.integers(0, 3)))
        if (pid, lid, assay) in seen:
            continue
        seen.add((pid, lid, assay))
        rows.append(dm.AffinityTriplet(
            pid, lid, float(10 ** rng.uniform(0, 5)), assay))
    if not rows:
        rows = [dm.AffinityTriplet("P00", ligand_ids[0], 100.0, "0")]
    return make_dataset(proteins, ligand_ids, rows)


class TestPipeline:
    def test_clean_dataset_passes_through(self):
        proteins = [make_protein(f"P{i}", seq) for i, seq in
                    enumerate(["AAAAAAAA", "CCCCCCCC", "GGGGGGGG"])]
        rows = [dm.AffinityTriplet(f"P{i}", f"L{i}", 100.0)
                for i in range(3)]
        ds = make_dataset(proteins, [f"L{i}" for i in range(3)], rows)
        out, report = sp.run_bilateral_pipeline(ds, sp.SamplingConfig())
        assert out.triplets == ds.triplets
        assert report.removed_variance == 0
        assert report.removed_dedup == 0
        assert report.removed_hitter == 0
        assert report.removed_pains == 0
        assert report.final_size == 3

    def test_high_variance_duplicate_removed(self):
        proteins = [make_protein("P1", "AAAAAAAA")]
        rows = [dm.AffinityTriplet("P1", "L1", 1.0, "a"),
                dm.AffinityTriplet("P1", "L1", 10000.0, "b")]
        ds = make_dataset(proteins, ["L1"], rows)
        out, report = sp.run_bilateral_pipeline(ds, sp.SamplingConfig())
        # Pairwise logs {0, 4} have sigma 2 >= delta: both rows dropped.
        assert report.removed_variance == 2
        assert len(out.triplets) == 0

    def test_low_variance_duplicates_collapse_to_canonical(self):
        proteins = [make_protein("P1", "AAAAAAAA")]
        rows = [dm.AffinityTriplet("P1", "L1", 90.0, "a"),
                dm.AffinityTriplet("P1", "L1", 110.0, "b")]
        ds = make_dataset(proteins, ["L1"], rows)
        out, report = sp.run_bilateral_pipeline(ds, sp.SamplingConfig())
        assert report.collapsed_duplicate_rows == 1
        assert len(out.triplets) == 1
        expected = 10 ** ((math.log10(90) + math.log10(110)) / 2)
        assert out.triplets[0].affinity == pytest.approx(expected)

    def test_seeded_determinism(self):
        rng = np.random.default_rng(55)
        ds = random_messy_dataset(rng)
        cfg = sp.SamplingConfig(seed=5)
        out1, _ = sp.run_bilateral_pipeline(ds, cfg)
        out2, _ = sp.run_bilateral_pipeline(ds, cfg)
        assert [t.protein_id for t in out1.triplets] == \
            [t.protein_id for t in out2.triplets]
        assert [t.ligand_id for t in out1.triplets] == \
            [t.ligand_id for t in out2.triplets]

    def test_idempotent_on_own_output(self):
        rng = np.random.default_rng(77)
        for _ in range(8):
            ds = random_messy_dataset(rng)
            once, _ = sp.run_bilateral_pipeline(ds, sp.SamplingConfig())
            if not once.triplets:
                continue
            twice, report = sp.run_bilateral_pipeline(
                once, sp.SamplingConfig())
            assert [(t.protein_id, t.ligand_id) for t in twice.triplets] \
                == [(t.protein_id, t.ligand_id) for t in once.triplets]

    def test_pains_filter_counts(self):
        proteins = [make_protein("P1", "AAAAAAAA"),
                    make_protein("P2", "CCCCCCCC")]
        ligands = {
            "L1": dm.LigandRecord("L1", (dm.Atom("C", 0, 0, 0),),
                                  smiles="CN=NC"),
            "L2": dm.LigandRecord("L2", (dm.Atom("C", 0, 0, 0),),
                                  smiles="CCO"),
        }
        rows = (dm.AffinityTriplet("P1", "L1", 100.0),
                dm.AffinityTriplet("P2", "L2", 100.0))
        ds = dm.Dataset({p.id: p for p in proteins}, ligands,
                        rows).with_target_counts()
        out, report = sp.run_bilateral_pipeline(
            ds, sp.SamplingConfig(pains_denylist=("N=N",)))
        assert report.removed_pains == 1
        assert [t.ligand_id for t in out.triplets] == ["L2"]
