"""Synthetic experiments: order recovery, occlusion detection by sigma, and the P1/P2 pipeline run.

Each function builds its own corpus from a ``SyntheticConfig`` so results
depend only on the arguments.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as data_mod
from . import pipeline as pl
from .data import PairSamplerConfig, SyntheticConfig
from .evaluation import kendall_tau, occlusion_auroc
from .nn_core import TrainConfig
from .pseudo_intensity import pair_order_accuracy, predict_pseudo, train_pseudo
from .uncertainty import predict_uncertainty, train_uncertainty


@dataclass
class OrderRecoveryResult:
    au: str
    held_out_tau: float  # mean over held-out videos of tau(y_hat, latent)
    per_video_tau: list
    train_pair_accuracy: float
    epochs_run: int


def order_recovery(synthetic=None, train=None, validation_fraction=0.2, split_seed=0, aus=None):
    """Train the pseudo-intensity scorer on noise-free videos; score ordering on held-out ones."""
    synthetic = synthetic or SyntheticConfig(num_videos=20, frames_per_video=200, feature_dim=8)
    train = train or TrainConfig(epochs=40, learning_rate=3e-3, hidden=(32,))
    videos = data_mod.generate_synthetic(synthetic)
    fit, held_out = data_mod.split_by_video(videos, validation_fraction, split_seed)
    store = data_mod.FrameStore(fit)
    results = []
    for k, au in enumerate(videos[0].au_names):
        if aus is not None and au not in aus:
            continue
        pairs = data_mod.build_pair_dataset(fit, k, PairSamplerConfig(seed=k))
        model = train_pseudo(pairs, store, train, au_index=k)
        ri, rj = store.rows(pairs)
        scores = model.score(store.features)
        acc = pair_order_accuracy(scores[ri], scores[rj], np.array([p.r for p in pairs]))
        taus = [kendall_tau(predict_pseudo(model, v), v.latent[:, k]) for v in held_out]
        results.append(OrderRecoveryResult(au, float(np.mean(taus)), taus, acc, model.metadata["epochs_run"]))
    return results


@dataclass
class OcclusionResult:
    au: str
    auroc: float
    sigma_occluded: float
    sigma_clean: float
    pseudo_epochs: int
    loss_form: str


def occlusion_detection(synthetic=None, pseudo_train=None, uncertainty_train=None, loss_form="corrected",
                        aus=None, split_seed=0):
    """Fit pseudo (early-stopped) and sigma on training videos; AUROC of sigma on held-out videos.

    Videos are split three ways: held-out test videos, early-stopping videos
    for the scorer, and the fitting set both nets train on.
    """
    synthetic = synthetic or SyntheticConfig(num_videos=100, frames_per_video=200, occlusion_probability=0.2)
    pseudo_train = pseudo_train or TrainConfig(epochs=60, hidden=(32,), patience=5)
    uncertainty_train = uncertainty_train or TrainConfig(epochs=30, hidden=(32,))
    videos = data_mod.generate_synthetic(synthetic)
    rest, test = data_mod.split_by_video(videos, 0.2, split_seed)
    fit, es = data_mod.split_by_video(rest, 0.2, split_seed + 1)
    flags = np.concatenate([v.occluded for v in test])
    results = []
    for k, au in enumerate(videos[0].au_names):
        if aus is not None and au not in aus:
            continue
        pairs = data_mod.build_pair_dataset(fit, k, PairSamplerConfig(seed=2 * k))
        es_pairs = data_mod.build_pair_dataset(es, k, PairSamplerConfig(seed=2 * k + 1))
        pseudo = train_pseudo(pairs, fit, pseudo_train, au_index=k, val_pairs=es_pairs, val_frames=es)
        unc = train_uncertainty(pairs, fit, pseudo, uncertainty_train, loss_form=loss_form)
        sigma = np.concatenate([predict_uncertainty(unc, v) for v in test])
        results.append(OcclusionResult(au, occlusion_auroc(sigma, flags), float(sigma[flags].mean()),
                                       float(sigma[~flags].mean()), pseudo.metadata["epochs_run"], loss_form))
    return results


@dataclass
class PipelineResult:
    p1: dict
    p2: dict
    report: dict = field(repr=False, default_factory=dict)


def end_to_end(cfg=None, seed=0, workdir=None):
    """Generate the corpus, then train and score P1 and P2 through the ablation runner."""
    cfg = cfg or pl.RunConfig()
    workdir = workdir or tempfile.mkdtemp(prefix="aupair-e2e-")
    cfg = replace(cfg, data_dir=f"{workdir}/data", model_dir=f"{workdir}/models", report_dir=f"{workdir}/reports")
    videos = data_mod.generate_synthetic(cfg.synthetic)
    data_mod.write_dataset(videos, cfg.data_dir, manifest=data_mod.synthetic_manifest(cfg.synthetic))
    data_mod.write_occlusion_flags(videos, cfg.data_dir)
    report = pl.run_ablation(cfg, seed=seed)
    return PipelineResult(report["variants"]["P1"], report["variants"]["P2"], report)
