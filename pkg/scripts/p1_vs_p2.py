"""Full pipeline on a synthetic occurrence corpus: P1 (sigma for every AU) against P2 (no sigma)."""

import argparse
import json
import tempfile
from dataclasses import replace

from aupair.data import SyntheticConfig
from aupair.experiments import end_to_end
from aupair.pipeline import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="RunConfig JSON (its synthetic block defines the corpus)")
    ap.add_argument("--videos", type=int, help="override synthetic.num_videos")
    ap.add_argument("--occlusion", type=float, help="override synthetic.occlusion_probability")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0], help="corpus and training seed")
    ap.add_argument("--workdir", help="keep data/models/reports here instead of a temp dir")
    args = ap.parse_args()

    base = RunConfig.load(args.config)
    syn = base.synthetic
    if args.videos is not None:
        syn = replace(syn, num_videos=args.videos)
    if args.occlusion is not None:
        syn = replace(syn, occlusion_probability=args.occlusion)

    summary = []
    for seed in args.seeds:
        cfg = replace(base, synthetic=SyntheticConfig(**{**syn.__dict__, "seed": seed}))
        workdir = f"{args.workdir}/seed{seed}" if args.workdir else tempfile.mkdtemp(prefix="aupair-ablation-")
        res = end_to_end(cfg, seed=seed, workdir=workdir)
        for name, row in (("P1", res.p1), ("P2", res.p2)):
            auroc = ", ".join(f"{au} {v:.2f}" for au, v in row["occlusion_auroc"].items()) or "-"
            print(f"seed {seed} {name}: metric {row['competition_metric']:.3f}  F1 {row['average_f1']:.3f}"
                  f"  acc {row['total_accuracy']:.3f}  sigma AUROC [{auroc}]")
        summary.append({"seed": seed, "P1": res.p1, "P2": res.p2, "workdir": workdir})
    if args.workdir:
        with open(f"{args.workdir}/summary.json", "w") as fh:
            json.dump(summary, fh, indent=1)


if __name__ == "__main__":
    main()
