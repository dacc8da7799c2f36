import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from aupair.data import PairSamplerConfig, build_pair_dataset
from aupair.errors import EmptyDatasetError, InvalidInputError, ShapeError
from aupair.evaluation import kendall_tau
from aupair.nn_core import TrainConfig
from aupair.pseudo_intensity import (
    PseudoIntensityModel,
    pair_order_accuracy,
    predict_pseudo,
    ranking_loss,
    ranking_loss_grad,
    train_pseudo,
)
from conftest import make_video


def test_loss_examples():
    assert ranking_loss(2.0, 1, 1.0) == 0.0
    assert ranking_loss(0.0, 1, 1.0) == 1.0
    assert ranking_loss(0.5, -1, 1.0) == 1.5
    with pytest.raises(InvalidInputError):
        ranking_loss(0.0, 0)


finite = st.floats(-50, 50, allow_nan=False)
rank = st.sampled_from([-1, 1])
margin = st.floats(0.01, 5)


@settings(max_examples=300, deadline=None)
@given(finite, rank, margin)
def test_loss_zero_iff_margin_met(delta, r, m):
    loss = ranking_loss(delta, r, m)
    assert loss >= 0
    assert (loss == 0) == (r * delta >= m)


@settings(max_examples=300, deadline=None)
@given(finite, rank, margin)
def test_siamese_symmetry(delta, r, m):
    assert ranking_loss(delta, r, m) == ranking_loss(-delta, -r, m)


@settings(max_examples=300, deadline=None)
@given(finite, rank, margin)
def test_grad_is_minus_r_or_zero(delta, r, m):
    assume(abs(r * delta - m) > 1e-4)
    h = 1e-6
    num = (ranking_loss(delta + h, r, m) - ranking_loss(delta - h, r, m)) / (2 * h)
    g = float(ranking_loss_grad(delta, r, m))
    assert g == (-r if r * delta < m else 0.0)
    assert num == pytest.approx(g, abs=1e-6)


def test_grad_at_kink_takes_zero_branch():
    assert float(ranking_loss_grad(1.0, 1, 1.0)) == 0.0


def _toy_videos(n_videos=3, n=30):
    # one feature equal to the label: perfectly separable
    rng = np.random.default_rng(0)
    return [make_video(f"v{k}", y, y[:, None].astype(float)) for k, y in
            ((k, rng.integers(0, 6, size=n)) for k in range(n_videos))]


def test_train_separable_toy():
    videos = _toy_videos()
    pairs = build_pair_dataset(videos, 0)
    model = train_pseudo(pairs, videos, TrainConfig(epochs=60, learning_rate=1e-2, hidden=(8,)))
    i = np.array([videos[int(p.video_id[1:])].features[p.index_i, 0] for p in pairs])
    j = np.array([videos[int(p.video_id[1:])].features[p.index_j, 0] for p in pairs])
    r = np.array([p.r for p in pairs])
    assert pair_order_accuracy(model.score(i[:, None]), model.score(j[:, None]), r) == 1.0
    curve = [row["loss"] for row in model.metadata["curve"]]
    assert curve[-1] < curve[0]

    held_out = make_video("h", np.arange(6), np.arange(6, dtype=float)[:, None])
    assert kendall_tau(predict_pseudo(model, held_out), np.arange(6)) == pytest.approx(1.0, abs=1e-12)


def test_zero_epochs_is_initialisation():
    videos = _toy_videos()
    pairs = build_pair_dataset(videos, 0)
    from aupair.nn_core import init_params

    model = train_pseudo(pairs, videos, TrainConfig(epochs=0, seed=3, hidden=(4,)))
    assert model.params.digest() == init_params([1, 4, 1], 3).digest()


def test_training_deterministic():
    videos = _toy_videos()
    pairs = build_pair_dataset(videos, 0, PairSamplerConfig(seed=1))
    cfg = TrainConfig(epochs=5, seed=2, hidden=(6,))
    assert train_pseudo(pairs, videos, cfg).digest() == train_pseudo(pairs, videos, cfg).digest()


def test_training_errors():
    with pytest.raises(EmptyDatasetError):
        train_pseudo([], _toy_videos())


def test_early_stopping_keeps_best():
    videos = _toy_videos(4)
    pairs = build_pair_dataset(videos[:3], 0)
    val_pairs = build_pair_dataset(videos[3:], 0)
    model = train_pseudo(pairs, videos[:3], TrainConfig(epochs=30, patience=2, hidden=(4,)),
                         val_pairs=val_pairs, val_frames=videos[3:])
    curve = model.metadata["curve"]
    best = max(row["val_pair_accuracy"] for row in curve)
    assert curve[model.metadata["best_epoch"] - 1]["val_pair_accuracy"] == best


def test_predict_properties(small_corpus):
    video = small_corpus[0]
    pairs = build_pair_dataset(small_corpus, 0)
    model = train_pseudo(pairs, small_corpus, TrainConfig(epochs=2, hidden=(8,)))
    y = predict_pseudo(model, video)
    assert y.shape == (len(video),) and np.all(np.isfinite(y))

    perm = np.random.default_rng(0).permutation(len(video))
    assert np.allclose(model.score(video.features[perm]), y[perm], rtol=0, atol=1e-12)

    dup = make_video("d", [0, 0], np.stack([video.features[3], video.features[3]]))
    a, b = predict_pseudo(model, dup)
    assert a == b
    assert np.argmax(3.0 * y + 7.0) == np.argmax(y)

    with pytest.raises(ShapeError):
        model.score(np.zeros((2, video.feature_dim + 1)))


def test_serialisation_roundtrip(small_corpus):
    pairs = build_pair_dataset(small_corpus, 1)
    model = train_pseudo(pairs, small_corpus, TrainConfig(epochs=1, hidden=(4,)), au_index=1)
    back = PseudoIntensityModel.from_dict(model.to_dict())
    assert back.digest() == model.digest() and back.au_index == 1
    assert np.array_equal(back.score(small_corpus[0].features), model.score(small_corpus[0].features))
