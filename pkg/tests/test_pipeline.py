from dataclasses import replace

import pytest

from aupair import pipeline as pl
from aupair.data import SyntheticConfig
from aupair.experiments import end_to_end


@pytest.fixture(scope="module")
def clean_run(tmp_path_factory):
    syn = SyntheticConfig(num_videos=20, frames_per_video=150, num_aus=2, label_kind="occurrence",
                          occlusion_probability=0.0, seed=5)
    cfg = replace(pl.RunConfig(), synthetic=syn, seeds=[0])
    return end_to_end(cfg, seed=0, workdir=str(tmp_path_factory.mktemp("clean")))


def test_noise_free_occurrence_scores_high(clean_run):
    for row in (clean_run.p1, clean_run.p2):
        assert row["competition_metric"] >= 0.9


def test_ablation_variants_differ_only_in_sigma(clean_run):
    assert all(clean_run.p1["use_uncertainty"].values())
    assert not any(clean_run.p2["use_uncertainty"].values())
    assert clean_run.p2["occlusion_auroc"] == {}
