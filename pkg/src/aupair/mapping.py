"""Window/video statistics over (pseudo-intensity, sigma) series and the MAE-trained mapping net."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core
from .data import INVALID_LABEL
from .errors import ConfigurationError, DivergenceError, EmptyDatasetError, ShapeError
from .pseudo_intensity import predict_pseudo
from .uncertainty import SIGMA_FLOOR, predict_uncertainty

TARGET_RANGES = {"occurrence": (0.0, 1.0), "intensity": (0.0, 5.0)}


@dataclass
class GConfig:
    window_seconds: float = 2.0
    percentiles: tuple = (5, 25, 50, 75, 95)
    include_video_level: bool = True
    uncertainty_weighting: bool = True

    def __post_init__(self):
        self.percentiles = tuple(float(p) for p in self.percentiles)
        if not self.window_seconds > 0:
            raise ConfigurationError("window_seconds must be positive")
        if any(not 0 <= p <= 100 for p in self.percentiles):
            raise ConfigurationError("percentiles must lie in [0, 100]")
        if list(self.percentiles) != sorted(set(self.percentiles)):
            raise ConfigurationError("percentiles must be sorted and unique")

    def window_frames(self, fps):
        """Window length in frames; the centred window spans ``2 * (n // 2) + 1`` frames."""
        return max(1, int(round(self.window_seconds * fps)))

    def columns(self):
        names = ["y_hat", "sigma"]
        for prefix in ("win", "vid") if self.include_video_level else ("win",):
            names += [f"{prefix}_mean", f"{prefix}_std", f"{prefix}_min", f"{prefix}_max"]
            names += [f"{prefix}_p{p:g}" for p in self.percentiles]
            names += [f"{prefix}_sigma_mean", f"{prefix}_sigma_std"]
            if self.uncertainty_weighting:
                names.append(f"{prefix}_wmean")
        return names

    def to_dict(self):
        d = asdict(self)
        d["percentiles"] = list(self.percentiles)
        return d


@dataclass
class IntensitySeries:
    video_id: str
    y_hat: np.ndarray
    sigma: np.ndarray
    frames_per_second: float = 30.0

    def __post_init__(self):
        self.y_hat = np.asarray(self.y_hat, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.y_hat.shape != self.sigma.shape or self.y_hat.ndim != 1:
            raise ShapeError("y_hat and sigma must be 1-D series of equal length")
        if np.any(self.sigma <= 0):
            raise ShapeError("sigma must be positive")


def _mean_std(x):
    # a constant window (e.g. the sigma floor in P2 mode) reports its value exactly
    lo, hi = x.min(), x.max()
    return (lo, 0.0) if lo == hi else (x.mean(), x.std())


def _stats(y, s, cfg):
    w = 1.0 / np.square(s)
    out = [*_mean_std(y), y.min(), y.max(), *np.percentile(y, cfg.percentiles), *_mean_std(s)]
    if cfg.uncertainty_weighting:
        out.append(np.dot(w, y) / w.sum())
    return out


def extract_g_features(series, cfg=None):
    """One row per frame; column order is ``cfg.columns()``.

    Windows are centred on the frame and truncated at the video edges, so the
    first and last frames see fewer neighbours rather than padded values.
    """
    cfg = cfg or GConfig()
    y, s = series.y_hat, series.sigma
    n = len(y)
    if n == 0:
        raise EmptyDatasetError(f"empty series for video {series.video_id}")
    half = cfg.window_frames(series.frames_per_second) // 2
    rows = []
    video_stats = _stats(y, s, cfg) if cfg.include_video_level else []
    for t in range(n):
        lo, hi = max(0, t - half), min(n, t + half + 1)
        rows.append([y[t], s[t], *_stats(y[lo:hi], s[lo:hi], cfg), *video_stats])
    return np.asarray(rows, dtype=np.float64)


def intensity_series(video, pseudo, unc=None, sigma_floor=SIGMA_FLOOR):
    """Run the trained scorers over a video; without an uncertainty model sigma is the floor."""
    y_hat = predict_pseudo(pseudo, video)
    sigma = predict_uncertainty(unc, video) if unc is not None else np.full(len(video), sigma_floor)
    return IntensitySeries(video.video_id, y_hat, sigma, video.frames_per_second)


@dataclass
class MappingDataset:
    X: np.ndarray
    y: np.ndarray
    columns: list
    video_ids: list
    frame_index: np.ndarray
    au_index: int
    g_config: GConfig
    target_kind: str = "occurrence"

    def __len__(self):
        return len(self.y)

    def to_csv(self, path):
        """Rows as CSV plus a ``.json`` sidecar holding the GConfig snapshot."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["video_id", "frame_index", *self.columns, "label"])
            for vid, fi, row, lab in zip(self.video_ids, self.frame_index, self.X, self.y):
                w.writerow([vid, int(fi), *map(repr, map(float, row)), int(lab)])
        sidecar = {"au_index": self.au_index, "target_kind": self.target_kind,
                   "g_config": self.g_config.to_dict(), "columns": list(self.columns)}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[2:-1] != side["columns"]:
                raise ShapeError(f"{path}: columns disagree with sidecar")
            rows = list(reader)
        X = np.array([[float(x) for x in r[2:-1]] for r in rows]).reshape(len(rows), len(side["columns"]))
        return cls(X, np.array([int(r[-1]) for r in rows], dtype=np.float64), side["columns"],
                   [r[0] for r in rows], np.array([int(r[1]) for r in rows]), side["au_index"],
                   GConfig(**side["g_config"]), side["target_kind"])


def build_mapping_dataset(videos, pseudo, unc, cfg, au_index, target_kind="occurrence", sigma_floor=None):
    """Training rows {(y_hat_i, sigma_i, G(video)); y_i} for every validly labelled frame."""
    if target_kind not in TARGET_RANGES:
        raise ConfigurationError(f"unknown target_kind {target_kind!r}")
    floor = sigma_floor if sigma_floor is not None else (unc.sigma_floor if unc is not None else SIGMA_FLOOR)
    X, y, vids, fidx = [], [], [], []
    for video in videos:
        feats = extract_g_features(intensity_series(video, pseudo, unc, floor), cfg)
        labels = video.au_labels(au_index)
        keep = labels != INVALID_LABEL
        X.append(feats[keep])
        y.append(labels[keep])
        vids += [video.video_id] * int(keep.sum())
        fidx.append(video.frame_index[keep])
    if not vids:
        raise EmptyDatasetError(f"no labelled frames for AU index {au_index}")
    return MappingDataset(np.concatenate(X), np.concatenate(y).astype(np.float64), cfg.columns(), vids,
                          np.concatenate(fidx), au_index, cfg, target_kind)


def mae_loss(pred, target):
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))


def mae_grad(pred, target):
    """d MAE / d pred; zero where the prediction is exact."""
    pred = np.asarray(pred, dtype=np.float64)
    return np.sign(pred - np.asarray(target, dtype=np.float64)) / pred.size


@dataclass
class MappingModel:
    params: nn_core.NetworkParams
    au_index: int
    g_config: GConfig
    target_kind: str = "occurrence"
    decision_threshold: float = 0.5
    scaler: nn_core.Standardizer | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.params.input_dim != len(self.g_config.columns()):
            raise ShapeError("mapping network width does not match its GConfig")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ConfigurationError("decision_threshold must lie in (0, 1)")

    def raw(self, X):
        scaler = self.scaler or nn_core.Standardizer.identity(self.params.input_dim)
        return nn_core.forward(self.params, scaler(np.atleast_2d(X)))

    def labels_from_raw(self, raw, threshold=None):
        lo, hi = TARGET_RANGES[self.target_kind]
        clipped = np.clip(raw, lo, hi)
        if self.target_kind == "occurrence":
            t = self.decision_threshold if threshold is None else threshold
            return (clipped >= t).astype(np.int64)
        return np.floor(clipped + 0.5).astype(np.int64)

    def digest(self):
        return self.params.digest()

    def to_dict(self):
        return {
            "kind": "mapping",
            "au_index": self.au_index,
            "g_config": self.g_config.to_dict(),
            "target_kind": self.target_kind,
            "decision_threshold": self.decision_threshold,
            "params": self.params.to_dict(),
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "metadata": self.metadata,
            "digest": self.digest(),
        }

    @classmethod
    def from_dict(cls, doc):
        scaler = None if doc["scaler"] is None else nn_core.Standardizer.from_dict(doc["scaler"])
        return cls(nn_core.NetworkParams.from_dict(doc["params"]), doc["au_index"], GConfig(**doc["g_config"]),
                   doc["target_kind"], doc["decision_threshold"], scaler, doc.get("metadata", {}))


def train_mapping(dataset, cfg=None, decision_threshold=0.5):
    """Fit the fully connected mapping net to the labels with mean absolute error."""
    cfg = cfg or nn_core.TrainConfig(hidden=(64, 32))
    if len(dataset) == 0:
        raise EmptyDatasetError("empty mapping dataset")
    scaler = nn_core.Standardizer.fit(dataset.X)
    X = scaler(dataset.X)
    y = dataset.y
    params = nn_core.init_params([X.shape[1], *cfg.hidden, 1], cfg.seed, "identity", cfg.activation)
    state = cfg.optimizer_state()
    rng = np.random.default_rng([cfg.seed, 3])
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for batch in nn_core.minibatches(len(y), cfg.batch_size, rng):
            out, tape = nn_core.forward_recorded(params, X[batch])
            loss = mae_loss(out, y[batch])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            grads = nn_core.backward(params, tape, mae_grad(out, y[batch]))
            params, state = nn_core.optimizer_step(params, grads, state)
            total += loss * len(batch)
        curve.append({"epoch": epoch, "loss": total / len(y)})
    metadata = {"seed": cfg.seed, "epochs_run": len(curve),
                "final_loss": curve[-1]["loss"] if curve else None, "curve": curve}
    return MappingModel(params, dataset.au_index, dataset.g_config, dataset.target_kind,
                        decision_threshold, scaler, metadata)


def predict_labels(pseudo, unc, mapping, video, g_config=None, threshold=None):
    """Per-frame integer labels for one AU over the whole video."""
    if g_config is not None and g_config != mapping.g_config:
        raise ConfigurationError("supplied GConfig differs from the mapping model's snapshot")
    floor = unc.sigma_floor if unc is not None else SIGMA_FLOOR
    feats = extract_g_features(intensity_series(video, pseudo, unc, floor), mapping.g_config)
    return mapping.labels_from_raw(mapping.raw(feats), threshold)
