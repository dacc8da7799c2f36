import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aupair.data import build_pair_dataset
from aupair.errors import ConfigurationError, EmptyDatasetError, ShapeError
from aupair.mapping import (
    GConfig,
    IntensitySeries,
    MappingDataset,
    MappingModel,
    build_mapping_dataset,
    extract_g_features,
    mae_grad,
    mae_loss,
    predict_labels,
    train_mapping,
)
from aupair.nn_core import TrainConfig, init_params
from aupair.pseudo_intensity import train_pseudo
from aupair.uncertainty import SIGMA_FLOOR, train_uncertainty
from conftest import central_difference, make_video, rel_error

WIN_ONLY = GConfig(include_video_level=False)


def _col(cfg, name):
    return cfg.columns().index(name)


def test_column_layout():
    cfg = GConfig()
    cols = cfg.columns()
    assert cols[:2] == ["y_hat", "sigma"]
    assert len(cols) == len(set(cols)) == 2 + 2 * (4 + 5 + 2 + 1)
    assert len(WIN_ONLY.columns()) == 2 + 12
    assert len(GConfig(uncertainty_weighting=False, include_video_level=False).columns()) == 13


@pytest.mark.parametrize("kwargs", [{"window_seconds": 0}, {"percentiles": (50, 5)}, {"percentiles": (5, 5)},
                                    {"percentiles": (101,)}])
def test_gconfig_validation(kwargs):
    with pytest.raises(ConfigurationError):
        GConfig(**kwargs)


def test_constant_series():
    feats = extract_g_features(IntensitySeries("v", np.full(40, 2.5), np.full(40, 0.3)))
    cfg = GConfig()
    for name in ("win_mean", "win_min", "win_max", "win_p5", "win_p50", "win_p95", "vid_mean", "win_wmean"):
        assert np.allclose(feats[:, _col(cfg, name)], 2.5)
    assert np.allclose(feats[:, _col(cfg, "win_std")], 0.0)


def test_single_frame_video():
    (row,) = extract_g_features(IntensitySeries("v", [1.7], [0.2]))
    cfg = GConfig()
    for prefix in ("win", "vid"):
        assert row[_col(cfg, f"{prefix}_mean")] == 1.7
        assert row[_col(cfg, f"{prefix}_std")] == 0.0
        assert row[_col(cfg, f"{prefix}_p25")] == 1.7
        assert row[_col(cfg, f"{prefix}_sigma_mean")] == 0.2


def test_three_frame_window_centre():
    # window_seconds * fps = 3 frames
    cfg = GConfig(window_seconds=1.0)
    feats = extract_g_features(IntensitySeries("v", [0, 1, 2, 3, 4], np.ones(5), frames_per_second=3), cfg)
    centre = feats[2]
    assert centre[_col(cfg, "win_mean")] == 2.0
    assert centre[_col(cfg, "win_std")] == pytest.approx(math.sqrt(2 / 3), abs=1e-12)
    assert abs(centre[_col(cfg, "win_std")] - 0.8165) < 1e-4
    # frame 0 sees only itself and frame 1
    assert feats[0][_col(cfg, "win_mean")] == 0.5
    assert feats[0][_col(cfg, "win_max")] == 1.0


def test_weighted_mean_uses_inverse_variance():
    cfg = GConfig(window_seconds=1.0, include_video_level=False)
    y, s = np.array([0.0, 1.0, 4.0]), np.array([1.0, 0.5, 2.0])
    feats = extract_g_features(IntensitySeries("v", y, s, frames_per_second=3), cfg)
    w = 1 / s**2
    assert feats[1][_col(cfg, "win_wmean")] == pytest.approx(np.dot(w, y) / w.sum(), abs=1e-14)


series_values = st.lists(st.floats(-10, 10), min_size=1, max_size=60)


@settings(max_examples=100, deadline=None)
@given(series_values, st.floats(-50, 50), st.floats(0.1, 5), st.sampled_from([1.0, 10.0, 30.0]))
def test_shift_invariance(values, c, window, fps):
    cfg = GConfig(window_seconds=window)
    y = np.array(values)
    s = np.linspace(0.1, 1.0, len(y))
    base = extract_g_features(IntensitySeries("v", y, s, fps), cfg)
    shifted = extract_g_features(IntensitySeries("v", y + c, s, fps), cfg)
    assert base.shape == (len(y), len(cfg.columns()))
    assert np.all(np.isfinite(base))
    for k, name in enumerate(cfg.columns()):
        if "sigma" in name:
            assert np.array_equal(base[:, k], shifted[:, k])
        elif name.endswith("_std"):
            assert np.allclose(base[:, k], shifted[:, k], atol=1e-9)
        else:
            assert np.allclose(base[:, k] + c, shifted[:, k], atol=1e-9)


def test_series_validation():
    with pytest.raises(EmptyDatasetError):
        extract_g_features(IntensitySeries("v", [], []))
    with pytest.raises(ShapeError):
        IntensitySeries("v", [1.0, 2.0], [1.0])


@pytest.fixture(scope="module")
def trained(small_corpus):
    pairs = build_pair_dataset(small_corpus, 0)
    pseudo = train_pseudo(pairs, small_corpus, TrainConfig(epochs=3, hidden=(8,)))
    unc = train_uncertainty(pairs, small_corpus, pseudo, TrainConfig(epochs=2, hidden=(8,)))
    return pseudo, unc


def test_mapping_dataset_rows(trained, small_corpus):
    pseudo, unc = trained
    ds = build_mapping_dataset(small_corpus, pseudo, unc, GConfig(), 0)
    assert len(ds) == sum(len(v) for v in small_corpus)
    assert ds.X.shape[1] == len(GConfig().columns())

    labels = np.array([[2], [1], [-1], [0]])
    video = make_video("w", labels, small_corpus[0].features[:4])
    assert len(build_mapping_dataset([video], pseudo, unc, GConfig(), 0)) == 3


def test_p2_sigma_columns_constant(trained, small_corpus):
    pseudo, _ = trained
    cfg = GConfig()
    ds = build_mapping_dataset(small_corpus, pseudo, None, cfg, 0)
    assert ds.X.shape[1] == len(cfg.columns())
    for name in ("sigma", "win_sigma_mean", "vid_sigma_mean"):
        assert np.all(ds.X[:, _col(cfg, name)] == SIGMA_FLOOR)
    assert np.all(ds.X[:, _col(cfg, "win_sigma_std")] == 0.0)


def test_mapping_dataset_csv_roundtrip(trained, small_corpus, tmp_path):
    pseudo, unc = trained
    ds = build_mapping_dataset(small_corpus[:2], pseudo, unc, GConfig(window_seconds=1.5), 0)
    ds.to_csv(tmp_path / "dt.csv")
    back = MappingDataset.from_csv(tmp_path / "dt.csv")
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
    assert back.g_config == ds.g_config and back.video_ids == ds.video_ids


def test_mae_and_gradient():
    rng = np.random.default_rng(0)
    pred, target = rng.normal(size=20), rng.normal(size=20)
    assert mae_loss(pred, target) == pytest.approx(np.mean(np.abs(pred - target)))
    num = central_difference(lambda p: mae_loss(p, target), pred)
    assert rel_error(mae_grad(pred, target), num) <= 1e-4


def _solvable_dataset(n=400, seed=0):
    rng = np.random.default_rng(seed)
    cfg = GConfig(include_video_level=False)
    X = rng.normal(size=(n, len(cfg.columns())))
    y = 0.5 + 0.3 * X[:, 0] - 0.2 * X[:, 3]
    return MappingDataset(X, y, cfg.columns(), ["v"] * n, np.arange(n), 0, cfg, "intensity")


def test_train_mapping_solvable():
    ds = _solvable_dataset()
    model = train_mapping(ds, TrainConfig(epochs=150, hidden=(16,), learning_rate=3e-3))
    assert mae_loss(model.raw(ds.X), ds.y) <= 0.05


def test_train_mapping_constant_labels():
    ds = _solvable_dataset()
    ds.y = np.full(len(ds.y), 1.0)
    model = train_mapping(ds, TrainConfig(epochs=100, hidden=(8,), learning_rate=3e-3))
    assert mae_loss(model.raw(ds.X), ds.y) <= 0.05


def test_train_mapping_deterministic_and_errors():
    ds = _solvable_dataset(100)
    cfg = TrainConfig(epochs=3, hidden=(4,))
    assert train_mapping(ds, cfg).digest() == train_mapping(ds, cfg).digest()
    ds.y = ds.y[:0]
    with pytest.raises(EmptyDatasetError):
        train_mapping(ds, cfg)


def _model(target_kind="occurrence", threshold=0.5):
    cfg = GConfig(include_video_level=False)
    return MappingModel(init_params([len(cfg.columns()), 1], 0), 0, cfg, target_kind, threshold)


def test_label_rules():
    occ = _model()
    assert occ.labels_from_raw(np.array([0.2, 0.7])).tolist() == [0, 1]
    assert occ.labels_from_raw(np.array([-3.0, 0.5, 9.0])).tolist() == [0, 1, 1]
    inten = _model("intensity")
    assert inten.labels_from_raw(np.array([5.7, -1.0, 2.49, 2.5])).tolist() == [5, 0, 2, 3]


def test_model_validation():
    with pytest.raises(ConfigurationError):
        _model(threshold=1.0)
    with pytest.raises(ShapeError):
        MappingModel(init_params([3, 1], 0), 0, GConfig(), "occurrence")


def test_predict_labels(trained, small_corpus):
    pseudo, unc = trained
    ds = build_mapping_dataset(small_corpus, pseudo, unc, GConfig(), 0)
    model = train_mapping(ds, TrainConfig(epochs=2, hidden=(8,)))
    labels = predict_labels(pseudo, unc, model, small_corpus[0])
    assert labels.shape == (len(small_corpus[0]),)
    assert set(np.unique(labels)) <= {0, 1}
    with pytest.raises(ConfigurationError):
        predict_labels(pseudo, unc, model, small_corpus[0], GConfig(window_seconds=3.0))
    back = MappingModel.from_dict(model.to_dict())
    assert np.array_equal(predict_labels(pseudo, unc, back, small_corpus[0]), labels)
