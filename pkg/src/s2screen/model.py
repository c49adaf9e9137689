"""Estimator-style front end.

Two scikit-learn compatible wrappers expose the pipeline to the wider
ecosystem: :class:`BilateralSampler` is a dataset -> dataset transformer
running the curation pass, and :class:`VirtualScreener` is the trainable
two-stage model with ``fit`` / ``transform`` / ``predict`` plus the
ranking and residue-scoring entry points.  Both inherit ``get_params`` /
``set_params`` from ``BaseEstimator``, so they compose with grid search
and pipelines; the heavy lifting stays in the functional modules.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import retrieval, training
from .data import Dataset, LigandRecord, ProteinRecord
from .sampling import SamplingConfig, run_bilateral_pipeline

__all__ = ["BilateralSampler", "VirtualScreener"]


class BilateralSampler(BaseEstimator):
    """Dataset curation as a transformer.

    ``transform`` runs the full bilateral pass (homology downweighting,
    functional dedup, variance / hitter / denylist filters, weighted
    subsampling) and stores the removal report on ``report_``.  The
    transform is stateless across datasets, so ``fit`` only validates.
    """

    def __init__(self, alpha: float = 0.5, delta: float = 1.0,
                 hitter_cutoff: int = 20, identity_threshold: float = 0.40,
                 strong_paffinity: float = 6.0,
                 affinity_convention: str = "nanomolar",
                 pains_denylist: tuple = (),
                 target_size: Optional[int] = None, seed: int = 0):
        self.alpha = alpha
        self.delta = delta
        self.hitter_cutoff = hitter_cutoff
        self.identity_threshold = identity_threshold
        self.strong_paffinity = strong_paffinity
        self.affinity_convention = affinity_convention
        self.pains_denylist = pains_denylist
        self.target_size = target_size
        self.seed = seed

    def _config(self) -> SamplingConfig:
        return SamplingConfig(
            alpha=self.alpha, delta=self.delta,
            hitter_cutoff=self.hitter_cutoff,
            identity_threshold=self.identity_threshold,
            strong_paffinity=self.strong_paffinity,
            affinity_convention=self.affinity_convention,
            pains_denylist=tuple(self.pains_denylist),
            target_size=self.target_size, seed=self.seed)

    def fit(self, X: Dataset, y=None) -> "BilateralSampler":
        if not isinstance(X, Dataset):
            raise TypeError("BilateralSampler operates on Dataset objects")
        return self

    def transform(self, X: Dataset) -> Dataset:
        self.fit(X)
        curated, report = run_bilateral_pipeline(X, self._config())
        self.report_ = report
        return curated


class VirtualScreener(BaseEstimator):
    """The two-stage contrastive screener.

    ``fit`` pretrains on all pairs of the given dataset and finetunes on
    the pocket-bearing pairs (a separate finetuning dataset may be passed).
    ``transform`` embeds records into the shared space, ``rank`` screens a
    ligand library for one protein, and ``predict`` returns the top ligand
    id per protein.
    """

    def __init__(self, d_seq: int = 64, d_mol: int = 64, d_shared: int = 64,
                 tau: float = 0.1, lam: float = 0.5, probes: int = 4,
                 pretrain_epochs: Optional[int] = None,
                 finetune_epochs: Optional[int] = None,
                 pretrain_batch: Optional[int] = None,
                 finetune_batch: Optional[int] = None,
                 learning_rate: float = 1e-3, seed: int = 0,
                 disable_ssf: bool = False, disable_bsp: bool = False):
        self.d_seq = d_seq
        self.d_mol = d_mol
        self.d_shared = d_shared
        self.tau = tau
        self.lam = lam
        self.probes = probes
        self.pretrain_epochs = pretrain_epochs
        self.finetune_epochs = finetune_epochs
        self.pretrain_batch = pretrain_batch
        self.finetune_batch = finetune_batch
        self.learning_rate = learning_rate
        self.seed = seed
        self.disable_ssf = disable_ssf
        self.disable_bsp = disable_bsp

    def _config(self, stage: str) -> training.TrainConfig:
        epochs = self.pretrain_epochs if stage == "pretrain" \
            else self.finetune_epochs
        batch = self.pretrain_batch if stage == "pretrain" \
            else self.finetune_batch
        return training.TrainConfig(
            epochs=epochs, batch_size=batch,
            learning_rate=self.learning_rate, tau=self.tau, lam=self.lam,
            probes=self.probes, seed=self.seed, d_seq=self.d_seq,
            d_mol=self.d_mol, d_shared=self.d_shared,
            disable_ssf=self.disable_ssf, disable_bsp=self.disable_bsp)

    def fit(self, X: Dataset, y=None,
            finetune_dataset: Optional[Dataset] = None
            ) -> "VirtualScreener":
        if not isinstance(X, Dataset):
            raise TypeError("VirtualScreener operates on Dataset objects")
        stage1, hist1 = training.pretrain(X, self._config("pretrain"))
        ft = finetune_dataset if finetune_dataset is not None else X
        self.params_, hist2 = training.finetune(
            ft, self._config("finetune"), stage1)
        self.history_ = {"pretrain": hist1, "finetune": hist2}
        return self

    def _check_fitted(self) -> training.ModelParams:
        params = getattr(self, "params_", None)
        if params is None:
            raise NotFittedError("VirtualScreener is not fitted yet")
        return params

    def transform(self, records: Sequence, mode: str = "ligand"
                  ) -> np.ndarray:
        """Embed records into the shared space, one row per record, in
        input order."""
        store = training.embed_corpus(self._check_fitted(), records, mode)
        return store.vectors

    def rank(self, protein: ProteinRecord,
             ligands: Sequence[LigandRecord],
             top_k: Optional[int] = None) -> list[tuple[str, float]]:
        params = self._check_fitted()
        library = training.embed_corpus(params, ligands, "ligand")
        query = training.embed_corpus(params, [protein], "pocket")
        k = top_k if top_k is not None else len(ligands)
        return retrieval.screen(query.vectors[0], library, k)

    def predict(self, proteins: Sequence[ProteinRecord],
                ligands: Sequence[LigandRecord]) -> list[str]:
        """Top-ranked ligand id for each protein."""
        params = self._check_fitted()
        library = training.embed_corpus(params, ligands, "ligand")
        queries = training.embed_corpus(params, proteins, "pocket")
        return [retrieval.screen(q, library, 1)[0][0]
                for q in queries.vectors]

    def site_scores(self, protein: ProteinRecord,
                    probe_ligands: Sequence[LigandRecord],
                    seed: int = 0,
                    paired_id: Optional[str] = None) -> np.ndarray:
        return training.predict_sites(
            self._check_fitted(), protein, probe_ligands, k=self.probes,
            seed=seed, paired_id=paired_id)
