"""Run configuration and the staged train / predict / trials / ablate workflows.

Model directory layout (one sub-directory per AU)::

    <model_dir>/<AU>/pseudo.json        pseudo_curve.csv
    <model_dir>/<AU>/uncertainty.json   uncertainty_curve.csv   (absent when the AU skips it)
    <model_dir>/<AU>/mapping.json       mapping_curve.csv

A stage is reused when its file exists, its stage-config hash matches and no
upstream stage was retrained in the same run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .data import PairSamplerConfig, SyntheticConfig
from .errors import ConfigurationError, DependencyError
from .evaluation import LabelTable, occlusion_auroc, score_occurrence
from .mapping import GConfig, MappingModel, build_mapping_dataset, predict_labels, train_mapping
from .nn_core import TrainConfig, write_json_atomic
from .pseudo_intensity import PseudoIntensityModel, train_pseudo
from .uncertainty import LOSS_FORMS, UncertaintyModel, predict_uncertainty, train_uncertainty

log = logging.getLogger(__name__)

STAGES = ("pseudo", "uncertainty", "mapping")
PATH_ENV = {"data_dir": "AUPAIR_DATA_DIR", "model_dir": "AUPAIR_MODEL_DIR", "report_dir": "AUPAIR_REPORT_DIR"}


@dataclass
class RunConfig:
    data_dir: str = "data"
    model_dir: str = "models"
    report_dir: str = "reports"
    aus: list | None = None  # None: every AU column in the annotation header
    mode: str = "p1"
    use_uncertainty: dict = field(default_factory=dict)  # consulted in p2 mode; missing AUs default to True
    loss_form: str = "corrected"
    target_kind: str = "occurrence"
    margin: float = 1.0
    sigma_floor: float = 1e-3
    decision_threshold: float = 0.5
    validation_fraction: float = 0.2
    early_stop_fraction: float = 0.2
    split_seed: int = 0
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    pairs: PairSamplerConfig = field(default_factory=PairSamplerConfig)
    pseudo_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=60, hidden=(32,), patience=5))
    uncertainty_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30, hidden=(32,)))
    mapping_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=40, hidden=(64, 32)))
    g_config: GConfig = field(default_factory=GConfig)
    synthetic: SyntheticConfig = field(
        default_factory=lambda: SyntheticConfig(num_videos=40, label_kind="occurrence", occlusion_probability=0.2))

    def __post_init__(self):
        if self.mode not in ("p1", "p2"):
            raise ConfigurationError(f"mode must be p1 or p2, got {self.mode!r}")
        if self.loss_form not in LOSS_FORMS:
            raise ConfigurationError(f"loss_form must be one of {LOSS_FORMS}")
        if not self.seeds:
            raise ConfigurationError("seed list must be non-empty")
        self.seeds = [int(s) for s in self.seeds]

    @classmethod
    def from_dict(cls, doc):
        nested = {"pairs": PairSamplerConfig, "pseudo_train": TrainConfig, "uncertainty_train": TrainConfig,
                  "mapping_train": TrainConfig, "g_config": GConfig, "synthetic": SyntheticConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            if key in nested and isinstance(value, dict):
                try:
                    value = nested[key](**value)
                except TypeError as exc:
                    raise ConfigurationError(f"{key}: {exc}") from None
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path=None, env=None):
        """Read a JSON config (or defaults) and apply path overrides from the environment."""
        doc = {}
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except FileNotFoundError:
                raise ConfigurationError(f"config file not found: {path}") from None
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        env = os.environ if env is None else env
        for key, var in PATH_ENV.items():
            if env.get(var):
                doc[key] = env[var]
        return cls.from_dict(doc)

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    def config_hash(self):
        """Hash of everything except filesystem paths."""
        doc = {k: v for k, v in self.to_dict().items() if k not in PATH_ENV}
        return _hash_doc(doc)

    def adopts_uncertainty(self, au):
        return self.mode == "p1" or bool(self.use_uncertainty.get(au, True))


def _hash_doc(doc):
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def stage_seed(seed, au_index, stage):
    return int(np.random.SeedSequence([int(seed), int(au_index), STAGES.index(stage)]).generate_state(1)[0])


def _write_curve(path, curve):
    if not curve:
        return
    cols = list(curve[0])
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        w.writerows([[row[c] for c in cols] for row in curve])
    tmp.replace(path)


def _load_json(path):
    return json.loads(Path(path).read_text())


def load_corpus(cfg):
    root = Path(cfg.data_dir)
    if not (root / "annotations.csv").is_file():
        raise DependencyError(f"no dataset at {root} (run `generate` first or point data_dir at one)")
    videos = data_mod.load_dataset(root)
    return videos


def split_corpus(cfg, videos):
    """(fit, early-stop, validation) video lists; the first two together form the training split."""
    train, val = data_mod.split_by_video(videos, cfg.validation_fraction, cfg.split_seed)
    if len(train) >= 2:
        fit, es = data_mod.split_by_video(train, cfg.early_stop_fraction, cfg.split_seed + 1)
    else:
        fit, es = train, []
    return fit, es, val


def resolve_aus(cfg, videos):
    header = videos[0].au_names
    aus = list(cfg.aus) if cfg.aus else list(header)
    missing = [a for a in aus if a not in header]
    if missing:
        raise ConfigurationError(f"AUs not in annotation header: {missing}")
    return aus


def _stage_hashes(cfg, seed, au, au_index, dataset_hash):
    base = {"seed": seed, "au": au, "au_index": au_index, "dataset": dataset_hash,
            "split": [cfg.validation_fraction, cfg.early_stop_fraction, cfg.split_seed]}
    pseudo = _hash_doc({**base, "pairs": asdict(cfg.pairs), "train": asdict(cfg.pseudo_train), "margin": cfg.margin})
    unc = _hash_doc({"up": pseudo, "train": asdict(cfg.uncertainty_train), "loss_form": cfg.loss_form,
                     "sigma_floor": cfg.sigma_floor})
    use_unc = cfg.adopts_uncertainty(au)
    mapping = _hash_doc({"up": pseudo, "unc": unc if use_unc else None, "train": asdict(cfg.mapping_train),
                         "g": cfg.g_config.to_dict(), "target": cfg.target_kind,
                         "threshold": cfg.decision_threshold})
    return {"pseudo": pseudo, "uncertainty": unc, "mapping": mapping}


def _fresh(path, stage_hash):
    return path.is_file() and _load_json(path).get("stage_hash") == stage_hash


def train_au(cfg, au, au_index, fit, es, seed, out_dir, dataset_hash=""):
    """Train (or reuse) the three stages for one AU; returns the stages actually trained."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = _stage_hashes(cfg, seed, au, au_index, dataset_hash)
    trained = []
    pairs_cfg = replace(cfg.pairs, seed=stage_seed(seed, au_index, "pseudo"))

    p_path = out_dir / "pseudo.json"
    if _fresh(p_path, hashes["pseudo"]):
        pseudo = PseudoIntensityModel.from_dict(_load_json(p_path))
    else:
        pairs = data_mod.build_pair_dataset(fit, au_index, pairs_cfg)
        val_pairs = None
        if es:
            try:
                val_pairs = data_mod.build_pair_dataset(es, au_index, replace(pairs_cfg, seed=pairs_cfg.seed + 1))
            except data_mod.EmptyDatasetError:
                val_pairs = None
        tcfg = replace(cfg.pseudo_train, seed=stage_seed(seed, au_index, "pseudo"))
        pseudo = train_pseudo(pairs, fit, tcfg, cfg.margin, au_index, val_pairs=val_pairs, val_frames=es or None)
        pseudo.metadata["label_kind"] = cfg.target_kind
        _write_curve(out_dir / "pseudo_curve.csv", pseudo.metadata.pop("curve"))
        write_json_atomic(p_path, {**pseudo.to_dict(), "au": au, "stage_hash": hashes["pseudo"],
                                   "dataset_hash": dataset_hash})
        trained.append("pseudo")

    u_path = out_dir / "uncertainty.json"
    unc = None
    if cfg.adopts_uncertainty(au):
        if not trained and _fresh(u_path, hashes["uncertainty"]):
            unc = UncertaintyModel.from_dict(_load_json(u_path))
            if unc.frozen_model_ref != pseudo.digest():
                raise DependencyError(f"{u_path} was trained against a different pseudo-intensity model")
        else:
            pairs = data_mod.build_pair_dataset(fit, au_index, pairs_cfg)
            tcfg = replace(cfg.uncertainty_train, seed=stage_seed(seed, au_index, "uncertainty"))
            unc = train_uncertainty(pairs, fit, pseudo, tcfg, cfg.margin, cfg.sigma_floor, cfg.loss_form)
            _write_curve(out_dir / "uncertainty_curve.csv", unc.metadata.pop("curve"))
            write_json_atomic(u_path, {**unc.to_dict(), "au": au, "stage_hash": hashes["uncertainty"]})
            trained.append("uncertainty")
    elif u_path.exists():
        u_path.unlink()

    m_path = out_dir / "mapping.json"
    if not trained and _fresh(m_path, hashes["mapping"]):
        pass
    else:
        ds = build_mapping_dataset(fit + list(es), pseudo, unc, cfg.g_config, au_index, cfg.target_kind,
                                   cfg.sigma_floor)
        tcfg = replace(cfg.mapping_train, seed=stage_seed(seed, au_index, "mapping"))
        mapping = train_mapping(ds, tcfg, cfg.decision_threshold)
        _write_curve(out_dir / "mapping_curve.csv", mapping.metadata.pop("curve"))
        write_json_atomic(m_path, {**mapping.to_dict(), "au": au, "stage_hash": hashes["mapping"],
                                   "pseudo_ref": pseudo.digest(),
                                   "uncertainty_ref": None if unc is None else unc.digest()})
        trained.append("mapping")
    return trained


def _train_au_job(args):
    return train_au(*args)


def train_pipeline(cfg, seed=None, model_dir=None, jobs=1, videos=None, dataset_hash=None):
    """Train every AU; returns {au: [stages trained this call]}."""
    seed = cfg.seeds[0] if seed is None else seed
    model_dir = Path(model_dir or cfg.model_dir)
    videos = load_corpus(cfg) if videos is None else videos
    if dataset_hash is None:
        dataset_hash = data_mod.dataset_hash(cfg.data_dir) if Path(cfg.data_dir, "annotations.csv").is_file() else ""
    fit, es, _ = split_corpus(cfg, videos)
    aus = resolve_aus(cfg, videos)
    header = videos[0].au_names
    jobs_args = [(cfg, au, header.index(au), fit, es, seed, model_dir / au, dataset_hash) for au in aus]
    if jobs > 1 and len(aus) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_au_job, jobs_args))
    else:
        results = [_train_au_job(a) for a in jobs_args]
    write_json_atomic(model_dir / "pipeline.json", {
        "aus": aus, "au_names": list(header), "seed": seed, "mode": cfg.mode,
        "config_hash": cfg.config_hash(), "dataset_hash": dataset_hash,
        "use_uncertainty": {au: cfg.adopts_uncertainty(au) for au in aus},
    })
    return dict(zip(aus, results))


@dataclass
class Pipeline:
    aus: list
    au_names: tuple
    models: dict  # au -> (pseudo, uncertainty or None, mapping)

    @classmethod
    def load(cls, model_dir):
        model_dir = Path(model_dir)
        meta_path = model_dir / "pipeline.json"
        if not meta_path.is_file():
            raise DependencyError(f"no trained pipeline in {model_dir}")
        meta = _load_json(meta_path)
        models = {}
        for au in meta["aus"]:
            d = model_dir / au
            for stage in ("pseudo", "mapping"):
                if not (d / f"{stage}.json").is_file():
                    raise DependencyError(f"missing {stage} model for {au} in {d}")
            pseudo = PseudoIntensityModel.from_dict(_load_json(d / "pseudo.json"))
            mdoc = _load_json(d / "mapping.json")
            mapping = MappingModel.from_dict(mdoc)
            unc = None
            if mdoc.get("uncertainty_ref"):
                if not (d / "uncertainty.json").is_file():
                    raise DependencyError(f"mapping for {au} expects an uncertainty model")
                unc = UncertaintyModel.from_dict(_load_json(d / "uncertainty.json"))
                if unc.frozen_model_ref != pseudo.digest():
                    raise DependencyError(f"uncertainty model for {au} was trained on another pseudo model")
            if mdoc.get("pseudo_ref") != pseudo.digest():
                raise DependencyError(f"mapping model for {au} was trained on another pseudo model")
            models[au] = (pseudo, unc, mapping)
        return cls(meta["aus"], tuple(meta["au_names"]), models)

    def predict_video(self, video, g_config=None):
        out = np.zeros((len(video), len(self.aus)), dtype=np.int64)
        for k, au in enumerate(self.aus):
            pseudo, unc, mapping = self.models[au]
            out[:, k] = predict_labels(pseudo, unc, mapping, video, g_config)
        return out

    def predict(self, videos, g_config=None):
        preds = {v.video_id: self.predict_video(v, g_config) for v in videos}
        table = LabelTable.from_videos(videos, preds) if videos else LabelTable([], np.zeros((0, len(self.aus)),
                                                                                            dtype=np.int64), ())
        table.au_names = tuple(self.aus)
        return table

    def sigma(self, au, video):
        _, unc, _ = self.models[au]
        return None if unc is None else predict_uncertainty(unc, video)


def select_videos(cfg, videos, split):
    if split == "all":
        return videos
    fit, es, val = split_corpus(cfg, videos)
    if split == "validation":
        return val
    if split == "train":
        return fit + es
    raise ConfigurationError(f"unknown split {split!r}")


def ground_truth_table(videos, aus):
    table = LabelTable.from_videos(videos)
    idx = [table.au_names.index(a) for a in aus] if videos else []
    return LabelTable(table.keys, table.labels[:, idx] if videos else table.labels, tuple(aus))


def occlusion_scores(pipeline, videos):
    """Occlusion AUROC of sigma per AU, where both flags and an uncertainty model exist."""
    if not videos or any(v.occluded is None for v in videos):
        return {}
    flags = np.concatenate([v.occluded for v in videos])
    out = {}
    for au in pipeline.aus:
        if pipeline.models[au][1] is None or flags.all() or not flags.any():
            continue
        sig = np.concatenate([pipeline.sigma(au, v) for v in videos])
        out[au] = occlusion_auroc(sig, flags)
    return out


def evaluate_pipeline(cfg, model_dir, videos):
    pipeline = Pipeline.load(model_dir)
    val = select_videos(cfg, videos, "validation")
    report = score_occurrence(pipeline.predict(val), ground_truth_table(val, pipeline.aus), pipeline.aus)
    report.extra["occlusion_auroc"] = occlusion_scores(pipeline, val)
    return report


def _report_meta(cfg, dataset_hash):
    return {"config_hash": cfg.config_hash(), "dataset_hash": dataset_hash}


def run_trials(cfg, jobs=1, videos=None):
    """Full training per seed, scored on the validation split; best = highest metric, ties to lower seed."""
    videos = load_corpus(cfg) if videos is None else videos
    dhash = data_mod.dataset_hash(cfg.data_dir) if Path(cfg.data_dir, "annotations.csv").is_file() else ""
    rows = []
    for seed in cfg.seeds:
        mdir = Path(cfg.model_dir) / f"trial_seed{seed}"
        train_pipeline(cfg, seed=seed, model_dir=mdir, jobs=jobs, videos=videos, dataset_hash=dhash)
        rep = evaluate_pipeline(cfg, mdir, videos)
        rows.append({"seed": seed, "model_dir": str(mdir), "average_f1": rep.average_f1,
                     "total_accuracy": rep.total_accuracy, "competition_metric": rep.competition_metric,
                     "artifact_hash": artifact_hash(mdir)})
    best = min(rows, key=lambda r: (-r["competition_metric"], r["seed"]))
    for r in rows:
        r["best"] = r is best
    report = {**_report_meta(cfg, dhash), "trials": rows, "best_seed": best["seed"],
              "best_model_dir": best["model_dir"]}
    rdir = Path(cfg.report_dir)
    write_json_atomic(rdir / "trials.json", report)
    with open(rdir / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "average_f1", "total_accuracy", "competition_metric", "best"])
        for r in rows:
            w.writerow([r["seed"], f"{r['average_f1']:.3f}", f"{r['total_accuracy']:.3f}",
                        f"{r['competition_metric']:.3f}", int(r["best"])])
    return report


def run_ablation(cfg, seed=None, jobs=1, videos=None):
    """Train and score P1 (uncertainty for every AU) and P2 (per-AU flags) on the same corpus.

    If the config disables uncertainty for no AU, P2 drops it for every AU.
    """
    videos = load_corpus(cfg) if videos is None else videos
    dhash = data_mod.dataset_hash(cfg.data_dir) if Path(cfg.data_dir, "annotations.csv").is_file() else ""
    seed = cfg.seeds[0] if seed is None else seed
    aus = resolve_aus(cfg, videos)
    flags = dict(cfg.use_uncertainty)
    if all(flags.get(a, True) for a in aus):
        flags = {a: False for a in aus}
    variants = {"P1": replace(cfg, mode="p1"), "P2": replace(cfg, mode="p2", use_uncertainty=flags)}
    rows = {}
    for name, vcfg in variants.items():
        mdir = Path(cfg.model_dir) / f"ablation_{name.lower()}"
        train_pipeline(vcfg, seed=seed, model_dir=mdir, jobs=jobs, videos=videos, dataset_hash=dhash)
        rep = evaluate_pipeline(vcfg, mdir, videos)
        rows[name] = {"use_uncertainty": {a: vcfg.adopts_uncertainty(a) for a in aus},
                      "average_f1": rep.average_f1, "total_accuracy": rep.total_accuracy,
                      "competition_metric": rep.competition_metric, "f1": rep.f1,
                      "occlusion_auroc": rep.extra.get("occlusion_auroc", {})}
    report = {**_report_meta(cfg, dhash), "seed": seed, "variants": rows}
    rdir = Path(cfg.report_dir)
    write_json_atomic(rdir / "ablation.json", report)
    lines = ["| Variant | Average F1 | Total Accuracy | Competition Metric |", "|---|---|---|---|"]
    for name, r in rows.items():
        lines.append(f"| {name} | {r['average_f1']:.3f} | {r['total_accuracy']:.3f} | {r['competition_metric']:.3f} |")
    (rdir / "ablation.md").write_text("\n".join(lines) + "\n")
    return report


def artifact_hash(model_dir):
    """sha256 over every model and curve file below ``model_dir``."""
    h = hashlib.sha256()
    root = Path(model_dir)
    for f in sorted(p for p in root.rglob("*") if p.is_file() and p.suffix in (".json", ".csv")):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()
