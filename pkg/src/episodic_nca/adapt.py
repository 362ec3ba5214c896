"""Test-time adaptation on the support set of an episode.

Two procedures: fine-tuning the whole embedding network on the support-set NCA
loss with Adam, and learning a Mahalanobis metric on frozen embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import MlpParams, backward, forward
from .losses import nca_loss


class AdaptationError(ValueError):
    pass


@dataclass(frozen=True)
class AdaptConfig:
    epochs: int = 5
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


def _require_positives(labels) -> None:
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    if counts.size == 0 or counts.min() < 2:
        raise AdaptationError("insufficient positives for support adaptation")


def support_nca(params: MlpParams, X, labels) -> float:
    """NCA loss of the support set under ``params`` (projection head ignored)."""
    return nca_loss(forward(params.without_projection(), X)[0], labels).value


def finetune_on_support(params: MlpParams, support_X, support_labels, cfg: AdaptConfig = AdaptConfig()) -> MlpParams:
    """Return a copy of ``params`` after ``cfg.epochs`` full-support Adam steps on NCA.

    Each epoch is a single step since the whole support set fits in one batch.
    """
    _require_positives(support_labels)
    adapted = params.without_projection().copy()
    ps = adapted.arrays()
    m = [np.zeros_like(p) for p in ps]
    v = [np.zeros_like(p) for p in ps]
    for t in range(1, cfg.epochs + 1):
        Z, cache = forward(adapted, support_X)
        grads = backward(adapted, cache, nca_loss(Z, support_labels).grad).arrays()
        for p, g, mk, vk in zip(ps, grads, m, v):
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p
            mk *= cfg.beta1
            mk += (1 - cfg.beta1) * g
            vk *= cfg.beta2
            vk += (1 - cfg.beta2) * g * g
            m_hat = mk / (1 - cfg.beta1 ** t)
            v_hat = vk / (1 - cfg.beta2 ** t)
            p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return adapted


@dataclass
class MahalanobisMetric:
    """Metric ``A = L^T L``; distances are squared Euclidean after ``z -> L z``."""

    factor: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.factor.T @ self.factor

    def transform(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) @ self.factor.T


def learn_mahalanobis(support_emb, support_labels, steps: int = 200, lr: float = 0.01) -> MahalanobisMetric:
    """Gradient descent on the NCA loss of ``L``-transformed supports, starting from identity."""
    _require_positives(support_labels)
    if steps < 0:
        raise ValueError("steps must be non-negative")
    Z = np.asarray(support_emb, dtype=np.float64)
    Lf = np.eye(Z.shape[1])
    for _ in range(steps):
        res = nca_loss(Z @ Lf.T, support_labels)
        Lf -= lr * (res.grad.T @ Z)
    return MahalanobisMetric(Lf)
