"""Siamese pseudo-intensity scorer trained with a margin ranking hinge."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn_core
from .data import FrameStore
from .errors import DivergenceError, EmptyDatasetError, InvalidInputError, ShapeError

DEFAULT_MARGIN = 1.0


def _check_rank(r):
    r = np.asarray(r)
    if not np.all((r == 1) | (r == -1)):
        raise InvalidInputError("rank labels must be +1 or -1")
    return r


def ranking_loss(delta, r, m=DEFAULT_MARGIN):
    """max(0, m - r * delta) with delta = f(x_i) - f(x_j)."""
    if not m > 0:
        raise InvalidInputError("margin must be positive")
    r = _check_rank(r)
    out = np.maximum(0.0, m - r * np.asarray(delta, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def ranking_loss_grad(delta, r, m=DEFAULT_MARGIN):
    """d loss / d delta; the kink r*delta == m takes the zero branch."""
    r = _check_rank(r)
    violated = r * np.asarray(delta, dtype=np.float64) < m
    return np.where(violated, -r, 0.0).astype(np.float64)


def pair_order_accuracy(scores_i, scores_j, r):
    return float(np.mean(np.sign(scores_i - scores_j) == r))


@dataclass
class PseudoIntensityModel:
    params: nn_core.NetworkParams
    au_index: int
    margin: float = DEFAULT_MARGIN
    scaler: nn_core.Standardizer | None = None
    metadata: dict = field(default_factory=dict)

    def score(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.params.input_dim:
            raise ShapeError(f"model expects {self.params.input_dim} features, got {X.shape[-1]}")
        scaler = self.scaler or nn_core.Standardizer.identity(self.params.input_dim)
        return nn_core.forward(self.params, scaler(np.atleast_2d(X)))

    def digest(self):
        return self.params.digest()

    def to_dict(self):
        return {
            "kind": "pseudo_intensity",
            "au_index": self.au_index,
            "margin": self.margin,
            "params": self.params.to_dict(),
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "metadata": self.metadata,
            "digest": self.digest(),
        }

    @classmethod
    def from_dict(cls, doc):
        scaler = None if doc["scaler"] is None else nn_core.Standardizer.from_dict(doc["scaler"])
        return cls(nn_core.NetworkParams.from_dict(doc["params"]), doc["au_index"], doc["margin"],
                   scaler, doc.get("metadata", {}))


def _siamese_step(params, Xi, Xj, r, m):
    out_i, tape_i = nn_core.forward_recorded(params, Xi)
    out_j, tape_j = nn_core.forward_recorded(params, Xj)
    delta = out_i - out_j
    loss = float(np.mean(ranking_loss(delta, r, m)))
    g = ranking_loss_grad(delta, r, m) / len(r)
    # both arms read the same params, so their gradients add
    grads = nn_core.backward(params, tape_i, g) + nn_core.backward(params, tape_j, -g)
    return loss, grads


def train_pseudo(pairs, frames, cfg=None, m=DEFAULT_MARGIN, au_index=0, val_pairs=None, val_frames=None):
    """Fit f(.) so that sign(f(x_i) - f(x_j)) matches each pair's rank label.

    With ``val_pairs`` the parameters from the epoch with the best validation
    pair-order accuracy are kept and training stops after ``cfg.patience``
    epochs without improvement (patience 0 disables stopping).
    """
    cfg = cfg or nn_core.TrainConfig()
    if not pairs:
        raise EmptyDatasetError("no training pairs")
    if not m > 0:
        raise InvalidInputError("margin must be positive")
    if not isinstance(frames, FrameStore):
        frames = FrameStore(frames)
    ri, rj = frames.rows(pairs)
    r = np.array([p.r for p in pairs], dtype=np.float64)
    used = np.unique(np.concatenate([ri, rj]))
    scaler = nn_core.Standardizer.fit(frames.features[used])
    X = scaler(frames.features)

    d = X.shape[1]
    params = nn_core.init_params([d, *cfg.hidden, 1], cfg.seed, "identity", cfg.activation)
    state = cfg.optimizer_state()
    rng = np.random.default_rng([cfg.seed, 1])

    val = None
    if val_pairs:
        vstore = frames if val_frames is None else val_frames
        if not isinstance(vstore, FrameStore):
            vstore = FrameStore(vstore)
        vi, vj = vstore.rows(val_pairs)
        Xv = scaler(vstore.features)
        val = (Xv[vi], Xv[vj], np.array([p.r for p in val_pairs], dtype=np.float64))

    curve = []
    best = (-np.inf, params, 0)
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for batch in nn_core.minibatches(len(r), cfg.batch_size, rng):
            loss, grads = _siamese_step(params, X[ri[batch]], X[rj[batch]], r[batch], m)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            params, state = nn_core.optimizer_step(params, grads, state)
            total += loss * len(batch)
        row = {"epoch": epoch, "loss": total / len(r)}
        if val is not None:
            acc = pair_order_accuracy(nn_core.forward(params, val[0]), nn_core.forward(params, val[1]), val[2])
            row["val_pair_accuracy"] = acc
            if acc > best[0]:
                best, stale = (acc, params, epoch), 0
            else:
                stale += 1
        curve.append(row)
        if val is not None and cfg.patience and stale >= cfg.patience:
            break
    if val is not None and curve:
        params = best[1]
    metadata = {
        "seed": cfg.seed,
        "epochs_run": len(curve),
        "best_epoch": best[2] if val is not None else len(curve),
        "final_loss": curve[-1]["loss"] if curve else None,
        "curve": curve,
    }
    return PseudoIntensityModel(params, au_index, m, scaler, metadata)


def predict_pseudo(model, video):
    """Pseudo-intensity for every frame of ``video``."""
    return np.asarray(model.score(video.features), dtype=np.float64).reshape(len(video))
