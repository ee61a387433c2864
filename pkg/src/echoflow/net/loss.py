"""Weighted binary cross-entropy and class-balance weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInputError, ShapeError

CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class LossBatch:
    """One batch of (label, prediction, weight) triples.

    Predictions are clamped to [eps, 1-eps] on construction so the log
    terms stay finite.
    """

    labels: np.ndarray
    preds: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.labels, dtype=np.float64)
        p = np.asarray(self.preds, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if not (y.shape == p.shape == w.shape) or y.ndim != 1 or y.size == 0:
            raise ShapeError(
                f"labels/preds/weights must be equal-length 1-d; got "
                f"{y.shape}/{p.shape}/{w.shape}"
            )
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("labels must be 0/1")
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "preds", np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS))
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.labels.size


def weighted_bce(batch: LossBatch) -> tuple[float, np.ndarray]:
    """Mean weighted binary cross-entropy and its exact gradient in the
    predictions:

        loss = -(1/N) sum_i w_i [y_i log p_i + (1-y_i) log(1-p_i)]
    """
    y, p, w = batch.labels, batch.preds, batch.weights
    n = batch.n
    loss = -(w * (y * np.log(p) + (1.0 - y) * np.log1p(-p))).sum() / n
    grad = -(w / n) * (y / p - (1.0 - y) / (1.0 - p))
    return float(loss), grad


def bce_logit_grad(labels, probs, weights) -> np.ndarray:
    """Gradient of the mean weighted BCE in the pre-sigmoid logits:
    w * (p - y) / N.  Used by the training loop (the sigmoid and the
    log terms cancel analytically, which is also numerically stable)."""
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    return w * (p - y) / y.size


def class_weights(labels) -> dict[int, float]:
    """Balanced weights w_c = N / (2 * N_c) so both classes carry equal
    total mass."""
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError(
            f"both classes required for class weights; got {n_pos} pos / {n_neg} neg"
        )
    n = n_pos + n_neg
    return {0: n / (2.0 * n_neg), 1: n / (2.0 * n_pos)}
