"""Per-frame uncertainty sigma trained against a frozen pseudo-intensity model.

Pseudo-intensities are modelled as Gaussian, ``N(f(x), h(x)^2)``. For a pair
with rank label r and margin m, the probability that the sampled difference
violates the margin is

    Phi((m - r * (y_i - y_j)) / sqrt(sigma_i^2 + sigma_j^2))

which is what the ``corrected`` loss minimises. The ``literal`` form is one
minus that probability and is kept only for auditing: it pushes sigma the
wrong way (see ``expanded_ranking_loss_grad``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import nn_core
from .data import FrameStore
from .errors import ConfigurationError, DivergenceError, EmptyDatasetError, InvalidInputError, ShapeError
from .pseudo_intensity import _check_rank

SIGMA_FLOOR = 1e-3
LOSS_FORMS = ("corrected", "literal")
_ONE_MINUS_ULP = np.nextafter(1.0, 0.0)
_TINY = np.finfo(np.float64).tiny


def normal_cdf(z):
    return 0.5 * special.erfc(-np.asarray(z, dtype=np.float64) / np.sqrt(2.0))


def normal_pdf(z):
    return np.exp(-0.5 * np.square(z)) / np.sqrt(2.0 * np.pi)


def _check_loss_inputs(y_hat_i, y_hat_j, sigma_i, sigma_j, r, m, sigma_floor, loss_form):
    if loss_form not in LOSS_FORMS:
        raise ConfigurationError(f"loss_form must be one of {LOSS_FORMS}")
    if not m > 0:
        raise InvalidInputError("margin must be positive")
    arrays = [np.asarray(a, dtype=np.float64) for a in (y_hat_i, y_hat_j, sigma_i, sigma_j)]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise InvalidInputError("non-finite loss input")
    if np.any(arrays[2] < sigma_floor) or np.any(arrays[3] < sigma_floor):
        raise InvalidInputError(f"sigma below floor {sigma_floor}")
    return (*arrays, _check_rank(r))


def _standardized_gap(yi, yj, si, sj, r, m):
    scale = np.sqrt(si * si + sj * sj)
    return (m - r * (yi - yj)) / scale, scale


def expanded_ranking_loss(y_hat_i, y_hat_j, sigma_i, sigma_j, r, m=1.0,
                          sigma_floor=SIGMA_FLOOR, loss_form="corrected"):
    """Probability that the margin is violated under Gaussian pseudo-intensities."""
    yi, yj, si, sj, r = _check_loss_inputs(y_hat_i, y_hat_j, sigma_i, sigma_j, r, m, sigma_floor, loss_form)
    z, _ = _standardized_gap(yi, yj, si, sj, r, m)
    p = normal_cdf(z) if loss_form == "corrected" else normal_cdf(-z)
    # rounding pins |z| > ~8 to exactly 0 or 1; the value itself is open-interval
    p = np.clip(p, _TINY, _ONE_MINUS_ULP)
    return float(p) if p.ndim == 0 else p


def expanded_ranking_loss_grad(y_hat_i, y_hat_j, sigma_i, sigma_j, r, m=1.0,
                               sigma_floor=SIGMA_FLOOR, loss_form="corrected"):
    """Partials (dL/dsigma_i, dL/dsigma_j, dL/ddelta), delta = y_hat_i - y_hat_j.

    For the corrected form dL/dsigma is positive when r*delta > m and negative
    when r*delta < m; the literal form flips both signs.
    """
    yi, yj, si, sj, r = _check_loss_inputs(y_hat_i, y_hat_j, sigma_i, sigma_j, r, m, sigma_floor, loss_form)
    z, scale = _standardized_gap(yi, yj, si, sj, r, m)
    dens = normal_pdf(z)
    if loss_form == "literal":
        dens = -dens
    s2 = scale * scale
    return -dens * z * si / s2, -dens * z * sj / s2, -dens * r / scale


@dataclass
class UncertaintyModel:
    params: nn_core.NetworkParams
    au_index: int
    margin: float = 1.0
    sigma_floor: float = SIGMA_FLOOR
    frozen_model_ref: str = ""
    loss_form: str = "corrected"
    scaler: nn_core.Standardizer | None = None
    metadata: dict = field(default_factory=dict)
    sigma_scale: float = 1.0

    def sigma(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.params.input_dim:
            raise ShapeError(f"model expects {self.params.input_dim} features, got {X.shape[-1]}")
        scaler = self.scaler or nn_core.Standardizer.identity(self.params.input_dim)
        return self.sigma_floor + self.sigma_scale * nn_core.forward(self.params, scaler(np.atleast_2d(X)))

    def digest(self):
        return self.params.digest()

    def to_dict(self):
        return {
            "kind": "uncertainty",
            "au_index": self.au_index,
            "margin": self.margin,
            "sigma_floor": self.sigma_floor,
            "frozen_model_ref": self.frozen_model_ref,
            "loss_form": self.loss_form,
            "sigma_scale": self.sigma_scale,
            "params": self.params.to_dict(),
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "metadata": self.metadata,
            "digest": self.digest(),
        }

    @classmethod
    def from_dict(cls, doc):
        scaler = None if doc["scaler"] is None else nn_core.Standardizer.from_dict(doc["scaler"])
        return cls(nn_core.NetworkParams.from_dict(doc["params"]), doc["au_index"], doc["margin"],
                   doc["sigma_floor"], doc["frozen_model_ref"], doc["loss_form"], scaler,
                   doc.get("metadata", {}), doc.get("sigma_scale", 1.0))


def train_uncertainty(pairs, frames, frozen, cfg=None, m=None, sigma_floor=SIGMA_FLOOR,
                      loss_form="corrected", sigma_scale=None):
    """Fit h(.) with the pseudo-intensity model held fixed.

    Pseudo-intensities are computed once up front; only the uncertainty
    network receives gradients. The frozen model's digest is checked after
    training.
    """
    cfg = cfg or nn_core.TrainConfig()
    if loss_form not in LOSS_FORMS:
        raise ConfigurationError(f"loss_form must be one of {LOSS_FORMS}")
    if not pairs:
        raise EmptyDatasetError("no training pairs")
    m = frozen.margin if m is None else m
    if not isinstance(frames, FrameStore):
        frames = FrameStore(frames)
    frozen_ref = frozen.digest()

    ri, rj = frames.rows(pairs)
    r = np.array([p.r for p in pairs], dtype=np.float64)
    y_hat = frozen.score(frames.features)
    used = np.unique(np.concatenate([ri, rj]))
    scaler = nn_core.Standardizer.fit(frames.features[used])
    X = scaler(frames.features)
    if sigma_scale is None:
        sigma_scale = float(np.std(y_hat[used])) or 1.0

    params = nn_core.init_params([X.shape[1], *cfg.hidden, 1], cfg.seed, "softplus", cfg.activation)
    state = cfg.optimizer_state()
    rng = np.random.default_rng([cfg.seed, 2])
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for batch in nn_core.minibatches(len(r), cfg.batch_size, rng):
            bi, bj, br = ri[batch], rj[batch], r[batch]
            out_i, tape_i = nn_core.forward_recorded(params, X[bi])
            out_j, tape_j = nn_core.forward_recorded(params, X[bj])
            si, sj = sigma_floor + sigma_scale * out_i, sigma_floor + sigma_scale * out_j
            loss = float(np.mean(expanded_ranking_loss(y_hat[bi], y_hat[bj], si, sj, br, m, sigma_floor, loss_form)))
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            gi, gj, _ = expanded_ranking_loss_grad(y_hat[bi], y_hat[bj], si, sj, br, m, sigma_floor, loss_form)
            k = sigma_scale / len(batch)
            grads = nn_core.backward(params, tape_i, gi * k) + nn_core.backward(params, tape_j, gj * k)
            params, state = nn_core.optimizer_step(params, grads, state)
            total += loss * len(batch)
        curve.append({"epoch": epoch, "loss": total / len(r)})

    if frozen.digest() != frozen_ref:
        raise RuntimeError("pseudo-intensity model changed while training uncertainty")
    metadata = {
        "seed": cfg.seed,
        "epochs_run": len(curve),
        "final_loss": curve[-1]["loss"] if curve else None,
        "curve": curve,
    }
    return UncertaintyModel(params, frozen.au_index, m, sigma_floor, frozen_ref, loss_form, scaler, metadata,
                            sigma_scale)


def predict_uncertainty(model, video):
    return np.asarray(model.sigma(video.features), dtype=np.float64).reshape(len(video))
