"""Desk-scale sequence-structure contrastive virtual screening.

The package pairs a curation pipeline (homology downweighting, functional
dedup, assay-variance and frequent-hitter filtering, weighted subsampling)
with a two-stage contrastive model: sequence/ligand pretraining, then
gated sequence-structure fusion finetuning with an auxiliary binding-site
head.  A retrieval engine and the standard early-recognition metrics close
the loop.  :class:`~s2screen.model.VirtualScreener` and
:class:`~s2screen.model.BilateralSampler` expose the scikit-learn
estimator surface; the ``s2screen`` CLI drives the same code end to end.
"""

__version__ = "0.1.0"

from .data import (AffinityTriplet, Atom, BindingSiteLabels, Dataset,
                   DataFormatError, LigandRecord, MotifConfig,
                   ProteinRecord, derive_binding_labels,
                   generate_synthetic_dataset, parse_dataset)
from .metrics import (RankedList, auroc, bedroc, enrichment_factor, f1_best,
                      evaluate_screening, pr_auc)
from .model import BilateralSampler, VirtualScreener
from .retrieval import EmbeddingStore, screen, store_read, store_write
from .sampling import (SamplingConfig, cluster_homologs, homology_weight,
                       run_bilateral_pipeline, seq_identity)
from .splits import homology_exclusion_split
from .training import (ModelParams, TrainConfig, embed_corpus, finetune,
                       predict_sites, pretrain)

__all__ = [
    "__version__",
    "AffinityTriplet", "Atom", "BindingSiteLabels", "Dataset",
    "DataFormatError", "LigandRecord", "MotifConfig", "ProteinRecord",
    "derive_binding_labels", "generate_synthetic_dataset", "parse_dataset",
    "RankedList", "auroc", "bedroc", "enrichment_factor", "f1_best",
    "evaluate_screening", "pr_auc",
    "BilateralSampler", "VirtualScreener",
    "EmbeddingStore", "screen", "store_read", "store_write",
    "SamplingConfig", "cluster_homologs", "homology_weight",
    "run_bilateral_pipeline", "seq_identity",
    "homology_exclusion_split",
    "ModelParams", "TrainConfig", "embed_corpus", "finetune",
    "predict_sites", "pretrain",
]
