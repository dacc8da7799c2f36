"""Frame/video containers, CSV interchange, pair sampling and synthetic videos.

Interchange layout on disk::

    <root>/annotations.csv        video_id,frame_index,AU1,...,AUn   (-1 = invalid)
    <root>/features/<video>.csv   frame_index,f0,...,f{d-1}
    <root>/manifest.json          synthetic config + seed (generated data only)
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, EmptyDatasetError, SchemaError, ShapeError

INVALID_LABEL = -1
DEFAULT_FPS = 30.0


@dataclass(frozen=True)
class FrameRecord:
    video_id: str
    frame_index: int
    features: np.ndarray
    labels: np.ndarray | None = None
    occluded: bool | None = None


@dataclass
class VideoSequence:
    """One video as column arrays. ``labels`` is (N, n_aus) int with -1 for invalid."""

    video_id: str
    frame_index: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    au_names: tuple = ()
    occluded: np.ndarray | None = None
    frames_per_second: float = DEFAULT_FPS
    latent: np.ndarray | None = None  # synthetic ground truth, (N, n_aus)

    def __post_init__(self):
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        n = len(self.frame_index)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ShapeError(f"video {self.video_id}: features shape {self.features.shape} for {n} frames")
        if n > 1 and np.any(np.diff(self.frame_index) <= 0):
            raise SchemaError(f"video {self.video_id}: frame_index must be strictly increasing")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n, len(self.au_names)):
                raise ShapeError(f"video {self.video_id}: labels shape {self.labels.shape}")
        if self.frames_per_second <= 0:
            raise ConfigurationError("frames_per_second must be positive")
        self.au_names = tuple(self.au_names)

    def __len__(self):
        return len(self.frame_index)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def frame(self, position):
        return FrameRecord(
            self.video_id,
            int(self.frame_index[position]),
            self.features[position],
            None if self.labels is None else self.labels[position],
            None if self.occluded is None else bool(self.occluded[position]),
        )

    def __iter__(self):
        return (self.frame(p) for p in range(len(self)))

    def au_labels(self, au_index):
        if self.labels is None:
            raise SchemaError(f"video {self.video_id} has no labels")
        return self.labels[:, au_index]


@dataclass(frozen=True)
class RankedPair:
    """Positions ``i`` and ``j`` inside one video; ``r`` is +1 if y_i > y_j else -1."""

    video_id: str
    index_i: int
    index_j: int
    r: int

    def swapped(self):
        return RankedPair(self.video_id, self.index_j, self.index_i, -self.r)


@dataclass
class PairSamplerConfig:
    max_pairs_per_video: int = 200
    min_frame_gap: int = 0
    balance_by_rank_difference: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.max_pairs_per_video < 1:
            raise ConfigurationError("max_pairs_per_video must be >= 1")
        if self.min_frame_gap < 0:
            raise ConfigurationError("min_frame_gap must be non-negative")


@dataclass
class SyntheticConfig:
    num_videos: int = 20
    frames_per_video: int = 200
    feature_dim: int = 8
    num_aus: int = 3
    label_kind: str = "intensity"  # or "occurrence": label = intensity >= 1
    offset_range: tuple = (-2.0, 2.0)
    gain_range: tuple = (0.7, 1.3)
    step_scale: float = 0.15
    observation_noise: float = 0.0
    occlusion_probability: float = 0.0
    occlusion_noise: float = 3.0
    frames_per_second: float = DEFAULT_FPS
    seed: int = 0

    def __post_init__(self):
        self.offset_range = tuple(float(v) for v in self.offset_range)
        self.gain_range = tuple(float(v) for v in self.gain_range)
        for name in ("num_videos", "frames_per_video", "feature_dim", "num_aus"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.occlusion_probability <= 1.0:
            raise ConfigurationError("occlusion_probability must lie in [0, 1]")
        if self.label_kind not in ("intensity", "occurrence"):
            raise ConfigurationError(f"unknown label_kind {self.label_kind!r}")
        if self.offset_range[0] > self.offset_range[1] or self.gain_range[0] > self.gain_range[1]:
            raise ConfigurationError("ranges must be (low, high)")
        if self.gain_range[0] <= 0:
            raise ConfigurationError("gains must be positive")
        if min(self.step_scale, self.observation_noise, self.occlusion_noise) < 0:
            raise ConfigurationError("noise and step scales must be non-negative")
        if self.frames_per_second <= 0:
            raise ConfigurationError("frames_per_second must be positive")

    def au_names(self):
        return tuple(f"AU{k + 1}" for k in range(self.num_aus))


class FrameStore:
    """Stacks every frame of a corpus into one matrix addressable by (video, position)."""

    def __init__(self, videos):
        videos = list(videos)
        if not videos:
            raise EmptyDatasetError("no videos")
        dims = {v.feature_dim for v in videos}
        if len(dims) != 1:
            raise ShapeError(f"videos disagree on feature dimension: {sorted(dims)}")
        self.videos = {v.video_id: v for v in videos}
        self.offsets = {}
        start = 0
        for v in videos:
            self.offsets[v.video_id] = start
            start += len(v)
        self.features = np.concatenate([v.features for v in videos], axis=0)

    def rows(self, pairs):
        """Row indices into ``features`` for both sides of each pair."""
        try:
            i = np.fromiter((self.offsets[p.video_id] + p.index_i for p in pairs), np.int64, len(pairs))
            j = np.fromiter((self.offsets[p.video_id] + p.index_j for p in pairs), np.int64, len(pairs))
        except KeyError as exc:
            raise SchemaError(f"pair references unknown video {exc.args[0]!r}") from None
        lengths = np.fromiter((len(self.videos[p.video_id]) for p in pairs), np.int64, len(pairs))
        pos = np.fromiter((min(p.index_i, p.index_j) for p in pairs), np.int64, len(pairs))
        top = np.fromiter((max(p.index_i, p.index_j) for p in pairs), np.int64, len(pairs))
        if np.any(pos < 0) or np.any(top >= lengths):
            raise SchemaError("pair references a frame outside its video")
        return i, j


def _admissible_pairs(y, min_gap):
    n = len(y)
    ii, jj = np.triu_indices(n, k=max(1, min_gap))
    keep = (y[ii] != INVALID_LABEL) & (y[jj] != INVALID_LABEL) & (y[ii] != y[jj])
    return ii[keep], jj[keep]


def _balanced_quota(bucket_sizes, budget):
    """Split ``budget`` across buckets as evenly as their sizes allow (water filling)."""
    sizes = np.asarray(bucket_sizes)
    quota = np.zeros_like(sizes)
    remaining = min(budget, int(sizes.sum()))
    while remaining > 0:
        open_ = np.flatnonzero(quota < sizes)
        share = max(remaining // len(open_), 1)
        for b in open_:
            take = min(share, sizes[b] - quota[b], remaining)
            quota[b] += take
            remaining -= take
            if remaining == 0:
                break
    return quota


def build_pair_dataset(videos, au_index, cfg=None):
    """Within-video ranked pairs for one AU; tied and invalid labels are never paired."""
    cfg = cfg or PairSamplerConfig()
    rng = np.random.default_rng(cfg.seed)
    pairs = []
    for video in videos:
        y = video.au_labels(au_index)
        ii, jj = _admissible_pairs(y, cfg.min_frame_gap)
        if len(ii) == 0:
            continue
        if len(ii) <= cfg.max_pairs_per_video:
            chosen = np.arange(len(ii))
        elif cfg.balance_by_rank_difference:
            diff = np.abs(y[ii] - y[jj])
            buckets = [np.flatnonzero(diff == d) for d in np.unique(diff)]
            quota = _balanced_quota([len(b) for b in buckets], cfg.max_pairs_per_video)
            chosen = np.sort(np.concatenate(
                [rng.choice(b, size=q, replace=False) for b, q in zip(buckets, quota) if q]
            ))
        else:
            chosen = np.sort(rng.choice(len(ii), size=cfg.max_pairs_per_video, replace=False))
        for c in chosen:
            i, j = int(ii[c]), int(jj[c])
            pairs.append(RankedPair(video.video_id, i, j, 1 if y[i] > y[j] else -1))
    if not pairs:
        raise EmptyDatasetError(f"no admissible pairs for AU index {au_index}")
    return pairs


def _bounded_walk(rng, n, start, step, low=0.0, high=5.0):
    x = np.empty(n)
    x[0] = start
    steps = rng.normal(0.0, step, size=n - 1)
    for t in range(1, n):
        v = x[t - 1] + steps[t - 1]
        # reflect at both bounds
        if v < low:
            v = 2 * low - v
        if v > high:
            v = 2 * high - v
        x[t] = min(max(v, low), high)
    return x


def generate_synthetic(cfg):
    """Videos whose features are a person-specific affine image of latent AU intensities.

    A single appearance matrix maps intensities to features for everyone; each
    video adds its own neutral offset vector and a gain. Occluded frames have
    their features replaced by zero-mean noise of scale ``occlusion_noise``.
    """
    rng = np.random.default_rng(cfg.seed)
    d, n_aus, n = cfg.feature_dim, cfg.num_aus, cfg.frames_per_video
    appearance = rng.normal(0.0, 1.0, size=(n_aus, d)) / np.sqrt(d)
    names = cfg.au_names()
    width = len(str(cfg.num_videos - 1))
    videos = []
    for v in range(cfg.num_videos):
        offset = rng.uniform(*cfg.offset_range, size=d)
        gain = rng.uniform(*cfg.gain_range)
        latent = np.stack(
            [_bounded_walk(rng, n, rng.uniform(0.0, 5.0), cfg.step_scale) for _ in range(n_aus)], axis=1
        )
        features = offset + gain * latent @ appearance
        features = features + rng.normal(0.0, 1.0, size=features.shape) * cfg.observation_noise
        occluded = rng.random(n) < cfg.occlusion_probability
        noise = rng.normal(0.0, cfg.occlusion_noise, size=(n, d))
        features = np.where(occluded[:, None], noise, features)
        labels = np.rint(latent).astype(np.int64)
        if cfg.label_kind == "occurrence":
            labels = (labels >= 1).astype(np.int64)
        videos.append(VideoSequence(
            video_id=f"video{v:0{width}d}",
            frame_index=np.arange(n),
            features=features,
            labels=labels,
            au_names=names,
            occluded=occluded,
            frames_per_second=cfg.frames_per_second,
            latent=latent,
        ))
    return videos


def split_by_video(videos, validation_fraction=0.2, seed=0):
    videos = sorted(videos, key=lambda v: v.video_id)
    if len(videos) < 2:
        raise ConfigurationError("need at least two videos to split")
    if not 0.0 < validation_fraction < 1.0:
        raise ConfigurationError("validation_fraction must lie in (0, 1)")
    n_val = min(max(int(round(validation_fraction * len(videos))), 1), len(videos) - 1)
    order = np.random.default_rng(seed).permutation(len(videos))
    val_ids = set(order[:n_val].tolist())
    train = [v for k, v in enumerate(videos) if k not in val_ids]
    val = [v for k, v in enumerate(videos) if k in val_ids]
    return train, val


# -- CSV interchange ---------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def write_dataset(videos, root, manifest=None):
    """Write annotations.csv and one feature CSV per video; returns the root path."""
    root = Path(root)
    feat_dir = root / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    videos = list(videos)
    au_names = videos[0].au_names if videos else ()
    rows = []
    for v in videos:
        d = v.feature_dim
        lines = [["frame_index", *[f"f{k}" for k in range(d)]]]
        lines += [[str(int(fi)), *map(_fmt, row)] for fi, row in zip(v.frame_index, v.features)]
        _write_csv_atomic(feat_dir / f"{v.video_id}.csv", lines)
        if v.labels is not None:
            rows += [[v.video_id, str(int(fi)), *map(str, lab)] for fi, lab in zip(v.frame_index, v.labels)]
    _write_csv_atomic(root / "annotations.csv", [["video_id", "frame_index", *au_names], *rows])
    if manifest is not None:
        from .nn_core import write_json_atomic

        write_json_atomic(root / "manifest.json", manifest)
    return root


def _write_csv_atomic(path, rows):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    tmp.replace(path)


def read_label_csv(path):
    """Parse an annotation-schema CSV into (au_names, {video_id: [(frame_index, labels)]})."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["video_id", "frame_index"]:
            raise SchemaError(f"{path}: header must start with video_id,frame_index")
        au_names = tuple(header[2:])
        per_video = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                labels = [int(x) for x in row[2:]]
                fi = int(row[1])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: labels must be integers") from None
            per_video.setdefault(row[0], []).append((fi, labels))
    return au_names, per_video


def _validate_label_range(labels, where):
    bad = (labels != INVALID_LABEL) & ((labels < 0) | (labels > 5))
    if np.any(bad):
        raise SchemaError(f"{where}: label {labels[bad][0]} outside 0..5 and not the invalid marker")


def load_annotations(annotation_path, features_path, frames_per_second=DEFAULT_FPS):
    """Join the annotation CSV with per-video feature CSVs under ``features_path``."""
    au_names, per_video = read_label_csv(annotation_path)
    features_path = Path(features_path)
    if not features_path.is_dir():
        raise FileNotFoundError(features_path)
    videos = []
    dim = None
    for vid in sorted(per_video):
        rows = sorted(per_video[vid])
        fpath = features_path / f"{vid}.csv"
        if not fpath.is_file():
            raise FileNotFoundError(fpath)
        feats = {}
        with open(fpath, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "frame_index":
                raise SchemaError(f"{fpath}: header must start with frame_index")
            d = len(header) - 1
            if dim is None:
                dim = d
            elif d != dim:
                raise SchemaError(f"{fpath}: {d} feature columns, expected {dim}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) - 1 != dim:
                    raise SchemaError(f"{fpath}:{lineno}: row has {len(row) - 1} features, expected {dim}")
                feats[int(row[0])] = [float(x) for x in row[1:]]
        missing = [fi for fi, _ in rows if fi not in feats]
        if missing:
            raise SchemaError(f"{vid}: no feature row for frame {missing[0]}")
        labels = np.array([lab for _, lab in rows], dtype=np.int64).reshape(len(rows), len(au_names))
        _validate_label_range(labels, str(annotation_path))
        videos.append(VideoSequence(
            video_id=vid,
            frame_index=[fi for fi, _ in rows],
            features=np.array([feats[fi] for fi, _ in rows], dtype=np.float64).reshape(len(rows), dim),
            labels=labels,
            au_names=au_names,
            frames_per_second=frames_per_second,
        ))
    return videos


def load_dataset(root):
    """Load a dataset directory; fps comes from the manifest when present."""
    root = Path(root)
    fps = DEFAULT_FPS
    manifest = read_manifest(root)
    if manifest is not None:
        fps = float(manifest.get("config", {}).get("frames_per_second", DEFAULT_FPS))
    videos = load_annotations(root / "annotations.csv", root / "features", frames_per_second=fps)
    flags_path = root / "occlusion.csv"
    if flags_path.is_file():
        flags = {}
        with open(flags_path, newline="") as fh:
            for row in csv.DictReader(fh):
                flags[(row["video_id"], int(row["frame_index"]))] = row["occluded"] == "1"
        for v in videos:
            v.occluded = np.array([flags.get((v.video_id, int(fi)), False) for fi in v.frame_index])
    return videos


def write_occlusion_flags(videos, root):
    """Ground-truth occlusion flags (synthetic data only) as occlusion.csv."""
    rows = [["video_id", "frame_index", "occluded"]]
    for v in videos:
        if v.occluded is None:
            continue
        rows += [[v.video_id, str(int(fi)), str(int(o))] for fi, o in zip(v.frame_index, v.occluded)]
    _write_csv_atomic(Path(root) / "occlusion.csv", rows)


def read_manifest(root):
    path = Path(root) / "manifest.json"
    if not path.is_file():
        return None
    return json.loads(path.read_text())


def synthetic_manifest(cfg):
    return {"kind": "synthetic", "seed": cfg.seed, "config": asdict(cfg)}


def dataset_hash(root):
    """sha256 over annotations and feature files, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    files = [root / "annotations.csv", *sorted((root / "features").glob("*.csv"))]
    for f in files:
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()
