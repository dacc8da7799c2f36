"""Command-line entry point: ``aupair <subcommand> [--config run.json] ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import data as data_mod
from . import pipeline as pl
from .errors import AupairError
from .evaluation import LabelTable, score_occurrence

log = logging.getLogger("aupair")


def cmd_generate(cfg):
    videos = data_mod.generate_synthetic(cfg.synthetic)
    root = data_mod.write_dataset(videos, cfg.data_dir, manifest=data_mod.synthetic_manifest(cfg.synthetic))
    data_mod.write_occlusion_flags(videos, root)
    log.info("wrote %d videos to %s", len(videos), root)
    return root


def cmd_train(cfg, seed=None, jobs=1):
    trained = pl.train_pipeline(cfg, seed=seed, jobs=jobs)
    for au, stages in trained.items():
        log.info("%s: trained %s", au, ", ".join(stages) or "nothing (up to date)")
    return trained


def cmd_trials(cfg, jobs=1):
    report = pl.run_trials(cfg, jobs=jobs)
    for row in report["trials"]:
        log.info("seed %d: metric %.3f%s", row["seed"], row["competition_metric"], "  <- best" if row["best"] else "")
    return report


def cmd_predict(cfg, split="validation", out=None, model_dir=None):
    pipeline = pl.Pipeline.load(model_dir or cfg.model_dir)
    videos = pl.select_videos(cfg, pl.load_corpus(cfg), split)
    table = pipeline.predict(videos, cfg.g_config)
    out = Path(out or Path(cfg.report_dir) / f"predictions_{split}.csv")
    table.to_csv(out)
    if videos:
        # same frames and AU columns as the predictions, for `evaluate`
        pl.ground_truth_table(videos, pipeline.aus).to_csv(out.with_name(f"ground_truth_{split}.csv"))
    log.info("wrote %d frame predictions to %s", len(table.keys), out)
    return out


def _file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_evaluate(predictions, ground_truth, out_stem, config_hash=None):
    pred = LabelTable.from_csv(predictions)
    truth = LabelTable.from_csv(ground_truth)
    report = score_occurrence(pred, truth, list(pred.au_names))
    report.extra.update(config_hash=config_hash, predictions_sha256=_file_sha256(predictions),
                        ground_truth_sha256=_file_sha256(ground_truth))
    report.write(out_stem)
    print(report.table())
    return report


def cmd_ablate(cfg, seed=None, jobs=1):
    report = pl.run_ablation(cfg, seed=seed, jobs=jobs)
    print((Path(cfg.report_dir) / "ablation.md").read_text(), end="")
    return report


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="training seed (default: first entry of seeds)")
    common.add_argument("--jobs", type=int, default=1, help="parallel per-AU training jobs")
    common.add_argument("--mode", choices=["p1", "p2"])
    common.add_argument("--loss-form", choices=["corrected", "literal"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="aupair", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train pseudo -> uncertainty -> mapping for every AU")
    sub.add_parser("trials", parents=[common], help="train once per configured seed and keep the best")
    p = sub.add_parser("predict", parents=[common], help="write per-frame predictions")
    p.add_argument("--split", choices=["validation", "train", "all"], default="validation")
    p.add_argument("--model-dir")
    p.add_argument("--out")
    e = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    e.add_argument("--predictions", required=True)
    e.add_argument("--ground-truth", required=True)
    e.add_argument("--out", help="report path stem (.json and .txt are written)")
    sub.add_parser("ablate", parents=[common], help="P1 vs P2 comparison on the same corpus")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = pl.RunConfig.load(args.config)
        overrides = {}
        if args.mode:
            overrides["mode"] = args.mode
        if args.loss_form:
            overrides["loss_form"] = args.loss_form
        if overrides:
            cfg = replace(cfg, **overrides)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.seed, args.jobs)
        elif args.command == "trials":
            report = cmd_trials(cfg, args.jobs)
            print(json.dumps({"best_seed": report["best_seed"], "best_model_dir": report["best_model_dir"]}))
        elif args.command == "predict":
            print(cmd_predict(cfg, args.split, args.out, args.model_dir))
        elif args.command == "evaluate":
            cmd_evaluate(args.predictions, args.ground_truth, args.out or Path(cfg.report_dir) / "metrics",
                         cfg.config_hash())
        elif args.command == "ablate":
            cmd_ablate(cfg, args.seed, args.jobs)
    except AupairError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
