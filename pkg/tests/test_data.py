"""Tests for records, file parsing, label derivation, and the synthetic
corpus generator."""

import json

import numpy as np
import pytest

from s2screen import data as dm


def write_minimal_corpus(tmp_path, protein_lines, ligand_lines,
                         affinity_lines):
    (tmp_path / "proteins.jsonl").write_text(
        "\n".join(protein_lines) + "\n")
    (tmp_path / "ligands.jsonl").write_text("\n".join(ligand_lines) + "\n")
    (tmp_path / "affinities.tsv").write_text(
        "\n".join(affinity_lines) + "\n")
    return (tmp_path / "proteins.jsonl", tmp_path / "ligands.jsonl",
            tmp_path / "affinities.tsv")


def protein_json(pid="P1", sequence="ACDE", pocket=(0,)):
    atoms = [{"element": "C", "x": float(i), "y": 0.0, "z": 0.0,
              "residue_index": i} for i in range(len(sequence))]
    return json.dumps({"id": pid, "sequence": sequence, "atoms": atoms,
                       "pocket_residues": list(pocket),
                       "annotation": None})


def ligand_json(lid="L1"):
    return json.dumps({"id": lid,
                       "atoms": [{"element": "N", "x": 0.0, "y": 0.0,
                                  "z": 1.0}],
                       "smiles": "CCO"})


class TestParsing:
    def test_minimal_round(self, tmp_path):
        paths = write_minimal_corpus(
            tmp_path, [protein_json()], [ligand_json()],
            ["# comment", "P1\tL1\t100.0\tassayA"])
        ds = dm.parse_dataset(*paths)
        assert len(ds.triplets) == 1
        assert ds.ligands["L1"].target_count == 1
        assert ds.proteins["P1"].pocket_residues == (0,)

    def test_dangling_ligand_reference(self, tmp_path):
        paths = write_minimal_corpus(
            tmp_path, [protein_json()], [ligand_json()],
            ["P1\tLMISSING\t100.0\t"])
        with pytest.raises(dm.DataFormatError, match="unknown ligand"):
            dm.parse_dataset(*paths)

    def test_target_count_distinct_proteins(self, tmp_path):
        paths = write_minimal_corpus(
            tmp_path,
            [protein_json("P1"), protein_json("P2"), protein_json("P3")],
            [ligand_json("L1")],
            ["P1\tL1\t10\t", "P2\tL1\t10\t", "P3\tL1\t10\t",
             "P1\tL1\t20\tother"])
        ds = dm.parse_dataset(*paths)
        assert ds.ligands["L1"].target_count == 3

    def test_malformed_line_reports_number(self, tmp_path):
        paths = write_minimal_corpus(
            tmp_path, [protein_json()], [ligand_json()],
            ["P1\tL1\t100.0\t", "P1\tL1\tnot_a_number\tx"])
        with pytest.raises(dm.DataFormatError, match="affinities.tsv:2"):
            dm.parse_dataset(*paths)

    def test_nonpositive_affinity_rejected(self, tmp_path):
        paths = write_minimal_corpus(
            tmp_path, [protein_json()], [ligand_json()],
            ["P1\tL1\t-5.0\t"])
        with pytest.raises(dm.DataFormatError, match="positive"):
            dm.parse_dataset(*paths)

    def test_duplicate_assay_row_rejected(self, tmp_path):
        paths = write_minimal_corpus(
            tmp_path, [protein_json()], [ligand_json()],
            ["P1\tL1\t5.0\ta", "P1\tL1\t5.0\ta"])
        with pytest.raises(dm.DataFormatError, match="duplicate"):
            dm.parse_dataset(*paths)

    def test_unknown_residues_map_to_x(self, tmp_path):
        line = json.dumps({"id": "P1", "sequence": "AZB*",
                           "atoms": [], "pocket_residues": [],
                           "annotation": None})
        paths = write_minimal_corpus(tmp_path, [line], [ligand_json()], [])
        ds = dm.parse_dataset(*paths)
        assert ds.proteins["P1"].sequence == "AXXX"

    def test_serialize_parse_round_trip(self, tmp_path):
        ds = dm.generate_synthetic_dataset(6, seq_len=12, n_atoms=6,
                                           seed=11)
        out = tmp_path / "corpus"
        dm.write_dataset(ds, out)
        again = dm.parse_dataset(out / "proteins.jsonl",
                                 out / "ligands.jsonl",
                                 out / "affinities.tsv")
        assert set(again.proteins) == set(ds.proteins)
        assert set(again.ligands) == set(ds.ligands)
        assert len(again.triplets) == len(ds.triplets)
        for pid in ds.proteins:
            assert again.proteins[pid] == ds.proteins[pid]
        for lid in ds.ligands:
            assert again.ligands[lid] == ds.ligands[lid]
        for a, b in zip(sorted(ds.triplets, key=lambda t: t.protein_id),
                        sorted(again.triplets, key=lambda t: t.protein_id)):
            assert (a.protein_id, a.ligand_id, a.assay_id) == \
                (b.protein_id, b.ligand_id, b.assay_id)
            assert a.affinity == b.affinity

    def test_atom_residue_index_bounds(self):
        with pytest.raises(dm.DataFormatError, match="residue_index"):
            dm.ProteinRecord(
                id="P", sequence="AC",
                atoms=((dm.Atom("C", 0, 0, 0), 5),))


class TestBindingLabels:
    def make_protein(self, positions):
        atoms = tuple((dm.Atom("C", *xyz), i)
                      for i, xyz in enumerate(positions))
        return dm.ProteinRecord(id="P", sequence="A" * len(positions),
                                atoms=atoms)

    def make_ligand(self, positions):
        return dm.LigandRecord(
            id="L", atoms=tuple(dm.Atom("N", *xyz) for xyz in positions))

    def test_inside_threshold(self):
        protein = self.make_protein([(0.0, 0.0, 0.0)])
        ligand = self.make_ligand([(0.0, 0.0, 7.9)])
        assert dm.derive_binding_labels(protein, ligand).labels == (1,)

    def test_outside_threshold(self):
        protein = self.make_protein([(0.0, 0.0, 0.0)])
        ligand = self.make_ligand([(0.0, 0.0, 8.1)])
        assert dm.derive_binding_labels(protein, ligand).labels == (0,)

    def test_middle_residue_only(self):
        protein = self.make_protein([(0, 0, 0), (20, 0, 0), (40, 0, 0)])
        ligand = self.make_ligand([(20.0, 3.0, 0.0)])
        assert dm.derive_binding_labels(protein, ligand).labels == (0, 1, 0)

    def test_translation_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            prot_xyz = rng.uniform(-10, 10, (6, 3))
            lig_xyz = rng.uniform(-10, 10, (3, 3))
            shift = rng.uniform(-50, 50, 3)
            base = dm.derive_binding_labels(
                self.make_protein(list(prot_xyz)),
                self.make_ligand(list(lig_xyz)))
            moved = dm.derive_binding_labels(
                self.make_protein(list(prot_xyz + shift)),
                self.make_ligand(list(lig_xyz + shift)))
            assert base.labels == moved.labels

    def test_protein_without_atoms_rejected(self):
        protein = dm.ProteinRecord(id="P", sequence="AC", atoms=())
        ligand = self.make_ligand([(0, 0, 0)])
        with pytest.raises(dm.DataFormatError, match="no atoms"):
            dm.derive_binding_labels(protein, ligand)


class TestSyntheticCorpus:
    def test_same_seed_identical(self, tmp_path):
        a = dm.generate_synthetic_dataset(8, seed=42)
        b = dm.generate_synthetic_dataset(8, seed=42)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        dm.write_dataset(a, out_a)
        dm.write_dataset(b, out_b)
        for name in ("proteins.jsonl", "ligands.jsonl", "affinities.tsv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_different_seed_differs(self):
        a = dm.generate_synthetic_dataset(8, seed=1)
        b = dm.generate_synthetic_dataset(8, seed=2)
        assert any(a.proteins[p].sequence != b.proteins[p].sequence
                   for p in a.proteins)

    def test_distinct_classes_have_disjoint_palettes(self):
        ds = dm.generate_synthetic_dataset(2, seed=3)
        sig0 = set(ds.ligands["L0000"].atom_elements())
        sig1 = set(ds.ligands["L0001"].atom_elements())
        assert sig0.isdisjoint(sig1)

    def test_derived_labels_mark_exactly_the_motif(self):
        # Oracle: run the geometric labeler over the generated coordinates
        # and compare with the planted pocket annotation.
        ds = dm.generate_synthetic_dataset(
            12, seq_len=30, n_atoms=10,
            motif_config=dm.MotifConfig(n_classes=4, motif_len=5), seed=9)
        for t in ds.triplets:
            protein = ds.proteins[t.protein_id]
            ligand = ds.ligands[t.ligand_id]
            labels = dm.derive_binding_labels(protein, ligand)
            positives = tuple(i for i, v in enumerate(labels.labels) if v)
            assert positives == protein.pocket_residues
            assert len(positives) == 5

    def test_motif_longer_than_sequence_rejected(self):
        with pytest.raises(ValueError, match="exceeds sequence length"):
            dm.generate_synthetic_dataset(
                2, seq_len=4, motif_config=dm.MotifConfig(motif_len=5))

    def test_affinities_positive_and_class_consistent(self):
        ds = dm.generate_synthetic_dataset(
            16, motif_config=dm.MotifConfig(n_classes=2,
                                            affinity_noise=0.01), seed=4)
        by_class = {0: [], 1: []}
        for i, t in enumerate(ds.triplets):
            assert t.affinity > 0
            by_class[i % 2].append(np.log10(t.affinity))
        # Same-class affinities cluster tightly, class levels differ.
        assert np.std(by_class[0]) < 0.1
        assert np.std(by_class[1]) < 0.1
        assert abs(np.mean(by_class[0]) - np.mean(by_class[1])) > 0.5

    def test_noise_injection_adds_duplicates_and_hubs(self):
        ds = dm.generate_synthetic_dataset(20, seed=6)
        noisy = dm.inject_noise(ds, seed=7, duplicate_fraction=0.2,
                                n_promiscuous=2, promiscuous_degree=10)
        assert len(noisy.triplets) == 20 + 4 + 2 * 10
        hubs = [lid for lid in noisy.ligands if lid.startswith("LHUB")]
        assert len(hubs) == 2
        for hub in hubs:
            assert noisy.ligands[hub].target_count == 10
