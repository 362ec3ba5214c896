"""Prototypical, NCA, ablation, Matching Networks and supervised-contrastive losses.

Every loss returns its value together with the analytic gradient with respect
to the input embeddings. All of them are softmaxes over negative squared
Euclidean distances, so they share one engine: for each anchor row, a
log-ratio between the positive neighbours and all allowed neighbours, plus the
coefficient of every anchor/neighbour distance in the gradient.

Episode losses take an :class:`EpisodeEmbeddings` and report gradients for the
stacked ``[support; query]`` rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_generator, masked_log_sum_exp, masked_softmax, pairwise_sq_dists


class NoPairsError(ValueError):
    """A batch does not contain the positive or negative pairs a loss needs."""


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    # per-anchor -log p terms, NaN where an anchor was skipped
    terms: np.ndarray | None = None


@dataclass
class EpisodeEmbeddings:
    support_emb: np.ndarray
    support_labels: np.ndarray
    query_emb: np.ndarray
    query_labels: np.ndarray

    def __post_init__(self):
        self.support_emb = np.asarray(self.support_emb, dtype=np.float64)
        self.query_emb = np.asarray(self.query_emb, dtype=np.float64)
        self.support_labels = np.asarray(self.support_labels).ravel()
        self.query_labels = np.asarray(self.query_labels).ravel()
        if self.support_emb.ndim != 2 or self.query_emb.ndim != 2:
            raise ValueError("embeddings must be 2-D")
        if self.support_emb.shape[1] != self.query_emb.shape[1]:
            raise ValueError(
                f"support dim {self.support_emb.shape[1]} != query dim {self.query_emb.shape[1]}"
            )
        if len(self.support_labels) != len(self.support_emb):
            raise ValueError("support labels do not match support rows")
        if len(self.query_labels) != len(self.query_emb):
            raise ValueError("query labels do not match query rows")
        if len(self.support_labels) == 0 or len(self.query_labels) == 0:
            raise ValueError("support and query sets must be non-empty")
        _, counts = np.unique(self.support_labels, return_counts=True)
        if np.any(counts != counts[0]):
            raise ValueError("every class needs the same number of support rows")
        missing = np.setdiff1d(self.query_labels, self.support_labels)
        if missing.size:
            raise ValueError(f"query classes {missing.tolist()} have no support rows")

    @property
    def n_support(self) -> int:
        return len(self.support_labels)

    @property
    def n_query(self) -> int:
        return len(self.query_labels)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Support rows followed by query rows, with their labels."""
        return (
            np.concatenate([self.support_emb, self.query_emb]),
            np.concatenate([self.support_labels, self.query_labels]),
        )

    @classmethod
    def from_batch(cls, emb, labels, support_idx, query_idx) -> "EpisodeEmbeddings":
        emb = np.asarray(emb, dtype=np.float64)
        labels = np.asarray(labels)
        return cls(emb[support_idx], labels[support_idx], emb[query_idx], labels[query_idx])


@dataclass(frozen=True)
class PairSubsampleConfig:
    keep_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")


# ---------------------------------------------------------------------------
# shared machinery
# ---------------------------------------------------------------------------

def _softmax_terms(anchors, cands, allowed, positive, scale=1.0):
    """Per-anchor ``-log(sum_pos e^{-d} / sum_allowed e^{-d})`` and d(term)/d(dist)."""
    logits = -scale * pairwise_sq_dists(anchors, cands)
    pos = allowed & positive
    with np.errstate(invalid="ignore"):
        # anchors without a positive give -inf - -inf; callers mask them out
        terms = masked_log_sum_exp(logits, allowed) - masked_log_sum_exp(logits, pos)
    coef = scale * (masked_softmax(logits, pos) - masked_softmax(logits, allowed))
    return terms, coef


def _dist_grad(coef, A, B):
    """Gradients of ``sum_ij coef_ij |a_i - b_j|^2`` with respect to ``A`` and ``B``."""
    gA = 2.0 * (coef.sum(axis=1)[:, None] * A - coef @ B)
    gB = 2.0 * (coef.sum(axis=0)[:, None] * B - coef.T @ A)
    return gA, gB


def _finite(value: float, grad: np.ndarray) -> None:
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("numerical overflow")


def compute_prototypes(support_emb, support_labels) -> tuple[np.ndarray, np.ndarray]:
    """Mean support embedding per class, rows ordered by ascending class id."""
    support_emb = np.asarray(support_emb, dtype=np.float64)
    support_labels = np.asarray(support_labels).ravel()
    if len(support_labels) == 0:
        raise ValueError("empty mean")
    classes, inverse, counts = np.unique(support_labels, return_inverse=True, return_counts=True)
    protos = np.zeros((classes.size, support_emb.shape[1]))
    np.add.at(protos, inverse, support_emb)
    protos /= counts[:, None]
    return protos, classes


def _proto_backprop(grad_protos, support_labels):
    """Push prototype gradients back onto the support rows that were averaged."""
    classes, inverse, counts = np.unique(support_labels, return_inverse=True, return_counts=True)
    return grad_protos[inverse] / counts[inverse, None]


def masked_nca_loss(emb, labels, allowed) -> LossResult:
    """NCA restricted to the ordered pairs where ``allowed[i, j]`` is true.

    Anchors without an allowed positive are skipped; the value is the mean
    over the remaining anchors.
    """
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    b = emb.shape[0]
    if b < 2:
        raise ValueError("NCA needs at least two rows")
    allowed = np.asarray(allowed, dtype=bool) & ~np.eye(b, dtype=bool)
    positive = labels[:, None] == labels[None, :]
    active = np.any(allowed & positive, axis=1)
    n_active = int(active.sum())
    if n_active == 0:
        raise NoPairsError("no positive pairs in batch")
    terms, coef = _softmax_terms(emb, emb, allowed, positive)
    coef[~active] = 0.0
    coef /= n_active
    value = float(terms[active].sum() / n_active)
    gA, gB = _dist_grad(coef, emb, emb)
    grad = gA + gB
    _finite(value, grad)
    return LossResult(value, grad, np.where(active, terms, np.nan))


# ---------------------------------------------------------------------------
# public losses
# ---------------------------------------------------------------------------

def nca_loss(emb, labels) -> LossResult:
    b = np.asarray(emb).shape[0]
    return masked_nca_loss(emb, labels, np.ones((b, b), dtype=bool))


def proto_loss(ep: EpisodeEmbeddings) -> LossResult:
    """Prototypical Networks loss; gradients flow through the prototypes to the supports."""
    protos, classes = compute_prototypes(ep.support_emb, ep.support_labels)
    positive = ep.query_labels[:, None] == classes[None, :]
    allowed = np.ones_like(positive)
    terms, coef = _softmax_terms(ep.query_emb, protos, allowed, positive)
    nq = ep.n_query
    value = float(terms.sum() / nq)
    gQ, gC = _dist_grad(coef / nq, ep.query_emb, protos)
    grad = np.concatenate([_proto_backprop(gC, ep.support_labels), gQ])
    _finite(value, grad)
    return LossResult(value, grad, terms)


def proto_no_prototypes_loss(ep: EpisodeEmbeddings) -> LossResult:
    """Query-to-individual-support softmax (the "no prototypes" ablation).

    This is also the Matching Networks training loss with squared Euclidean
    distance. The sum over queries is scaled by ``1 / (|Q| + |S|)``.
    """
    positive = ep.query_labels[:, None] == ep.support_labels[None, :]
    allowed = np.ones_like(positive)
    terms, coef = _softmax_terms(ep.query_emb, ep.support_emb, allowed, positive)
    norm = ep.n_query + ep.n_support
    value = float(terms.sum() / norm)
    gQ, gS = _dist_grad(coef / norm, ep.query_emb, ep.support_emb)
    grad = np.concatenate([gS, gQ])
    _finite(value, grad)
    return LossResult(value, grad, terms)


matching_loss = proto_no_prototypes_loss


def proto_allpairs_loss(ep: EpisodeEmbeddings) -> LossResult:
    """NCA over queries and prototypes together (the "no S/Q split" ablation).

    The anchor sum runs over ``|Q| + w`` rows and is scaled by ``1 / (|Q| + |S|)``.
    Anchors without a positive are skipped.
    """
    protos, classes = compute_prototypes(ep.support_emb, ep.support_labels)
    Z = np.concatenate([ep.query_emb, protos])
    labels = np.concatenate([ep.query_labels, classes])
    b = Z.shape[0]
    allowed = ~np.eye(b, dtype=bool)
    positive = labels[:, None] == labels[None, :]
    active = np.any(allowed & positive, axis=1)
    if not active.any():
        raise NoPairsError("no positive pairs in batch")
    terms, coef = _softmax_terms(Z, Z, allowed, positive)
    norm = ep.n_query + ep.n_support
    coef[~active] = 0.0
    coef /= norm
    value = float(terms[active].sum() / norm)
    gA, gB = _dist_grad(coef, Z, Z)
    gZ = gA + gB
    nq = ep.n_query
    grad = np.concatenate([_proto_backprop(gZ[nq:], ep.support_labels), gZ[:nq]])
    _finite(value, grad)
    return LossResult(value, grad, np.where(active, terms, np.nan))


def allpairs_no_proto_loss(ep: EpisodeEmbeddings) -> LossResult:
    """Both ablations at once: plain NCA on the stacked support and query rows."""
    emb, labels = ep.stacked()
    return nca_loss(emb, labels)


def sample_pair_mask(b: int, keep_fraction: float, rng) -> np.ndarray:
    """Symmetric keep-mask: each unordered pair is kept independently with prob ``keep_fraction``."""
    PairSubsampleConfig(keep_fraction)
    upper = np.triu(as_generator(rng).random((b, b)) < keep_fraction, k=1)
    return upper | upper.T


def subsampled_nca_loss(emb, labels, cfg: PairSubsampleConfig, rng) -> LossResult:
    b = np.asarray(emb).shape[0]
    return masked_nca_loss(emb, labels, sample_pair_mask(b, cfg.keep_fraction, rng))


def sup_contrastive_loss(emb, labels, temperature: float = 1.0) -> LossResult:
    """Supervised contrastive loss on negative squared distances scaled by ``1/temperature``.

    Positives sit outside the log and the denominator holds negatives only.
    Anchors lacking a positive or a negative are skipped.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    b = emb.shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs at least two rows")
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(b, dtype=bool)
    neg = ~same
    n_pos = pos.sum(axis=1)
    has_pos = n_pos > 0
    if not has_pos.any():
        raise NoPairsError("no positive pairs in batch")
    active = has_pos & neg.any(axis=1)
    if not active.any():
        raise NoPairsError("no negative pairs in batch")
    n_active = int(active.sum())

    logits = -pairwise_sq_dists(emb, emb) / temperature
    lse_neg = masked_log_sum_exp(logits, neg)
    inv_p = np.where(has_pos, 1.0 / np.maximum(n_pos, 1), 0.0)
    pos_mean = np.where(pos, -logits, 0.0).sum(axis=1) * inv_p
    terms = pos_mean + lse_neg

    coef = (pos * inv_p[:, None] - masked_softmax(logits, neg)) / temperature
    coef[~active] = 0.0
    coef /= n_active
    value = float(terms[active].sum() / n_active)
    gA, gB = _dist_grad(coef, emb, emb)
    grad = gA + gB
    _finite(value, grad)
    return LossResult(value, grad, np.where(active, terms, np.nan))


EPISODE_LOSSES = {
    "proto": proto_loss,
    "no_proto": proto_no_prototypes_loss,
    "matching": proto_no_prototypes_loss,
    "allpairs": proto_allpairs_loss,
    "allpairs_no_proto": allpairs_no_proto_loss,
}
BATCH_LOSSES = ("nca", "subsampled_nca", "supcon")
LOSS_NAMES = tuple(EPISODE_LOSSES) + BATCH_LOSSES
