"""Per-class diagonal-Gaussian maximum-likelihood classifier (baseline)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VAR_FLOOR = 1e-6


@dataclass
class MLEModel:
    classes: np.ndarray  # sorted ConfigIndex values seen in training
    means: np.ndarray  # (n_classes, n_features)
    variances: np.ndarray
    log_priors: np.ndarray
    var_floor: float = VAR_FLOOR
    feature_names: tuple[str, ...] = ()
    normalization: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.means.shape[1]

    def log_posterior(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        # (n, 1, d) - (1, c, d)
        diff = x[:, None, :] - self.means[None, :, :]
        ll = -0.5 * np.sum(diff**2 / self.variances + np.log(2 * np.pi * self.variances), axis=2)
        return ll + self.log_priors

    def predict(self, x) -> np.ndarray:
        # argmax returns the first maximum, i.e. the lowest ConfigIndex on ties
        return self.classes[np.argmax(self.log_posterior(x), axis=1)]


def train_mle(dataset, var_floor: float = VAR_FLOOR) -> MLEModel:
    x = dataset.inputs()
    y = np.asarray(dataset.labels, dtype=int)
    if len(y) == 0:
        raise ValueError("empty training set")
    classes = np.unique(y)
    means = np.empty((len(classes), x.shape[1]))
    variances = np.empty_like(means)
    priors = np.empty(len(classes))
    for k, c in enumerate(classes):
        xc = x[y == c]
        means[k] = xc.mean(axis=0)
        variances[k] = np.maximum(xc.var(axis=0), var_floor)
        priors[k] = len(xc) / len(y)
    norm = getattr(dataset, "normalization", None)
    return MLEModel(
        classes,
        means,
        variances,
        np.log(priors),
        var_floor,
        feature_names=tuple(getattr(dataset, "feature_names", ())),
        normalization=None if norm is None else np.array(norm, dtype=float),
    )


def infer_mle(model: MLEModel, x) -> np.ndarray | int:
    x = np.asarray(x, dtype=float)
    out = model.predict(x)
    return int(out[0]) if x.ndim == 1 else out


def mle_accuracy(model: MLEModel, dataset) -> float:
    if len(dataset) == 0:
        return float("nan")
    return float(np.mean(model.predict(dataset.inputs()) == dataset.labels))
