"""Facial action unit recognition from within-video pairwise rankings.

Three trained stages per AU: a siamese pseudo-intensity scorer (margin
ranking hinge), a siamese uncertainty net (Gaussian probability of margin
violation with the scorer frozen), and a fully connected mapping net over
window and video statistics of both series, trained with MAE.
"""

from .data import (
    FrameRecord,
    PairSamplerConfig,
    RankedPair,
    SyntheticConfig,
    VideoSequence,
    build_pair_dataset,
    generate_synthetic,
    load_annotations,
    split_by_video,
)
from .evaluation import competition_metric, kendall_tau, occlusion_auroc, score_occurrence
from .mapping import GConfig, build_mapping_dataset, extract_g_features, predict_labels, train_mapping
from .nn_core import NetworkParams, TrainConfig, init_params
from .pseudo_intensity import predict_pseudo, ranking_loss, train_pseudo
from .uncertainty import expanded_ranking_loss, predict_uncertainty, train_uncertainty

__version__ = "0.1.0"

__all__ = [
    "FrameRecord", "PairSamplerConfig", "RankedPair", "SyntheticConfig", "VideoSequence",
    "build_pair_dataset", "generate_synthetic", "load_annotations", "split_by_video",
    "competition_metric", "kendall_tau", "occlusion_auroc", "score_occurrence",
    "GConfig", "build_mapping_dataset", "extract_g_features", "predict_labels", "train_mapping",
    "NetworkParams", "TrainConfig", "init_params",
    "predict_pseudo", "ranking_loss", "train_pseudo",
    "expanded_ranking_loss", "predict_uncertainty", "train_uncertainty",
]
