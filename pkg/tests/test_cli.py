import json
import shutil

import numpy as np
import pytest

from aupair import cli
from aupair import pipeline as pl
from aupair.evaluation import LabelTable, MetricReport

SMALL = {
    "synthetic": {"num_videos": 8, "frames_per_video": 40, "feature_dim": 4, "num_aus": 2,
                  "label_kind": "occurrence", "occlusion_probability": 0.2, "seed": 1},
    "pseudo_train": {"epochs": 3, "hidden": [8]},
    "uncertainty_train": {"epochs": 2, "hidden": [8]},
    "mapping_train": {"epochs": 3, "hidden": [8]},
    "pairs": {"max_pairs_per_video": 50},
    "seeds": [0, 1],
}


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    cfg = dict(SMALL, data_dir=str(tmp_path / "data"), model_dir=str(tmp_path / "models"),
               report_dir=str(tmp_path / "reports"))
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    for var in pl.PATH_ENV.values():
        monkeypatch.delenv(var, raising=False)
    return tmp_path, str(path)


def run(config, *args):
    return cli.main([*args, "--config", config])


def _hashes(model_dir):
    return {p.relative_to(model_dir).as_posix(): p.read_bytes() for p in sorted(model_dir.rglob("*.json"))}


def test_generate_is_reproducible(workspace):
    root, config = workspace
    assert run(config, "generate") == 0
    data = root / "data"
    files = sorted(p.name for p in (data / "features").iterdir())
    assert len(files) == 8
    snapshot = {p: p.read_bytes() for p in data.rglob("*.csv")}
    assert run(config, "generate") == 0
    assert {p: p.read_bytes() for p in data.rglob("*.csv")} == snapshot
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["config"]["occlusion_probability"] == 0.2


def test_train_stages_and_resume(workspace):
    root, config = workspace
    run(config, "generate")
    assert run(config, "train") == 0
    models = root / "models"
    for au in ("AU1", "AU2"):
        for name in ("pseudo.json", "uncertainty.json", "mapping.json", "pseudo_curve.csv", "mapping_curve.csv"):
            assert (models / au / name).is_file()
    first = _hashes(models)

    cfg = pl.RunConfig.load(config)
    assert set(pl.train_pipeline(cfg)["AU1"]) == set()

    (models / "AU1" / "mapping.json").unlink()
    assert pl.train_pipeline(cfg) == {"AU1": ["mapping"], "AU2": []}
    (models / "AU2" / "uncertainty.json").unlink()
    assert pl.train_pipeline(cfg) == {"AU1": [], "AU2": ["uncertainty", "mapping"]}
    assert _hashes(models) == first


def test_p2_skips_uncertainty(workspace):
    root, config = workspace
    doc = json.loads(open(config).read())
    doc["use_uncertainty"] = {"AU1": False}
    open(config, "w").write(json.dumps(doc))
    run(config, "generate")
    assert run(config, "train", "--mode", "p2") == 0
    assert not (root / "models" / "AU1" / "uncertainty.json").exists()
    assert (root / "models" / "AU2" / "uncertainty.json").exists()
    assert pl.Pipeline.load(root / "models").models["AU1"][1] is None


def test_predict_evaluate_roundtrip(workspace, capsys):
    root, config = workspace
    run(config, "generate")
    run(config, "train")
    assert run(config, "predict") == 0
    preds = root / "reports" / "predictions_validation.csv"
    truth = root / "reports" / "ground_truth_validation.csv"
    assert preds.read_text().splitlines()[0] == "video_id,frame_index,AU1,AU2"
    assert run(config, "evaluate", "--predictions", str(preds), "--ground-truth", str(truth)) == 0
    report = json.loads((root / "reports" / "metrics.json").read_text())
    assert 0.0 <= report["competition_metric"] <= 1.0
    assert report["extra"]["config_hash"] == pl.RunConfig.load(config).config_hash()
    assert "Competition metric" in capsys.readouterr().out
    # scoring against the whole corpus is a misalignment
    assert run(config, "evaluate", "--predictions", str(preds),
               "--ground-truth", str(root / "data" / "annotations.csv")) == 3


def test_predict_empty_video_list(workspace):
    root, config = workspace
    run(config, "generate")
    run(config, "train")
    table = pl.Pipeline.load(root / "models").predict([])
    table.to_csv(root / "empty.csv")
    assert (root / "empty.csv").read_text() == "video_id,frame_index,AU1,AU2\n"


def _write_labels(path, keys, labels, aus):
    LabelTable(keys, np.asarray(labels).reshape(len(keys), len(aus)), tuple(aus)).to_csv(path)


def test_evaluate_fixtures(tmp_path, capsys):
    # AU1 is valid on 33 frames (22 hit, 11 missed), AU2 on the other 67 (all missed)
    keys = [("clip", k) for k in range(100)]
    truth = np.array([[1, -1]] * 33 + [[-1, 1]] * 67)
    pred = np.array([[1, 0]] * 22 + [[0, 0]] * 78)
    _write_labels(tmp_path / "gt.csv", keys, truth, ["AU1", "AU2"])
    _write_labels(tmp_path / "base.csv", keys, pred, ["AU1", "AU2"])
    argv = ["evaluate", "--ground-truth", str(tmp_path / "gt.csv")]
    assert cli.main([*argv, "--predictions", str(tmp_path / "base.csv"), "--out", str(tmp_path / "base")]) == 0
    rep = json.loads((tmp_path / "base.json").read_text())
    assert (rep["average_f1"], rep["total_accuracy"]) == pytest.approx((0.40, 0.22))
    assert f"{rep['competition_metric']:.2f}" == "0.31"

    _write_labels(tmp_path / "perfect.csv", keys, np.where(truth == -1, 0, truth), ["AU1", "AU2"])
    assert cli.main([*argv, "--predictions", str(tmp_path / "perfect.csv"), "--out", str(tmp_path / "p")]) == 0
    assert json.loads((tmp_path / "p.json").read_text())["competition_metric"] == 1.0

    _write_labels(tmp_path / "shifted.csv", [("clip", k + 1) for k in range(100)], pred, ["AU1", "AU2"])
    assert cli.main([*argv, "--predictions", str(tmp_path / "shifted.csv"), "--out", str(tmp_path / "s")]) == 3
    assert "first misaligned frame" in capsys.readouterr().err


def test_trials_report(workspace):
    root, config = workspace
    run(config, "generate")
    assert run(config, "trials") == 0
    report = json.loads((root / "reports" / "trials.json").read_text())
    assert [r["seed"] for r in report["trials"]] == [0, 1]
    assert sum(r["best"] for r in report["trials"]) == 1
    best = max(report["trials"], key=lambda r: (r["competition_metric"], -r["seed"]))
    assert report["best_seed"] == best["seed"]
    assert report["config_hash"] and report["dataset_hash"]


def test_trials_tie_goes_to_lower_seed(workspace, monkeypatch):
    root, config = workspace
    run(config, "generate")
    cfg = pl.RunConfig.load(config)
    cfg.seeds = [4, 1, 3]
    monkeypatch.setattr(pl, "train_pipeline", lambda *a, **k: None)
    monkeypatch.setattr(pl, "artifact_hash", lambda d: "x")
    flat = MetricReport([], {}, {}, {}, [], 0.5, 0.5, 0.5, 1, 0)
    monkeypatch.setattr(pl, "evaluate_pipeline", lambda *a, **k: flat)
    assert pl.run_trials(cfg)["best_seed"] == 1
    cfg.seeds = [7]
    assert pl.run_trials(cfg)["best_seed"] == 7


def test_ablate_reports_both_modes(workspace, capsys):
    root, config = workspace
    run(config, "generate")
    assert run(config, "ablate") == 0
    report = json.loads((root / "reports" / "ablation.json").read_text())
    assert set(report["variants"]) == {"P1", "P2"}
    assert all(report["variants"]["P1"]["use_uncertainty"].values())
    assert "| P2 |" in capsys.readouterr().out


def test_exit_codes(workspace, tmp_path):
    root, config = workspace
    assert run(config, "train") == 2  # no dataset yet: missing prerequisite
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"mode": "p3"}))
    assert cli.main(["train", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert cli.main(["train", "--config", str(bad)]) == 2
    run(config, "generate")
    assert run(config, "predict") == 2  # no trained models


def test_env_overrides_paths(tmp_path, monkeypatch):
    monkeypatch.setenv("AUPAIR_DATA_DIR", str(tmp_path / "elsewhere"))
    cfg = pl.RunConfig.load(None)
    assert cfg.data_dir == str(tmp_path / "elsewhere")
    assert cfg.config_hash() == pl.RunConfig().config_hash()


def test_missing_pseudo_model_is_dependency_error(workspace):
    root, config = workspace
    run(config, "generate")
    run(config, "train")
    shutil.rmtree(root / "models" / "AU2")
    assert run(config, "predict") == 2
