"""Counting the distance pairs that episodic and non-episodic batches exploit.

All counts are of unordered pairs. A loss that iterates over ordered
anchor/neighbour terms touches each unordered pair twice.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .sampler import BatchShapeConfig, shape_to_episode


@dataclass(frozen=True)
class PairCounts:
    positives: int
    negatives: int

    def __post_init__(self):
        if self.positives < 0 or self.negatives < 0:
            raise ValueError("pair counts must be non-negative")

    @property
    def total(self) -> int:
        return self.positives + self.negatives


def _check(w: int, n: int, m: int) -> None:
    for name, v in (("w", w), ("n", n), ("m", m)):
        if not isinstance(v, (int, np.integer)):
            raise TypeError(f"{name} must be an integer, got {v!r}")
    if w < 2 or n < 1 or m < 1:
        raise ValueError(f"need w >= 2, n >= 1, m >= 1; got w={w}, n={n}, m={m}")


def pn_pair_counts(w: int, n: int, m: int) -> PairCounts:
    """Query-to-support pairs of a Prototypical Networks episode."""
    _check(w, n, m)
    return PairCounts(w * m * n, w * (w - 1) * m * n)


def nca_pair_counts(w: int, n: int, m: int) -> PairCounts:
    """All pairs inside the same ``w * (n + m)`` batch."""
    _check(w, n, m)
    a = m + n
    return PairCounts(comb(a, 2) * w, comb(w, 2) * a * a)


def extra_pairs(w: int, n: int, m: int) -> int:
    _check(w, n, m)
    twice = w * (w * (m * m + n * n) - m - n)
    assert twice % 2 == 0
    return twice // 2


def brute_force_pair_counts(support_labels, query_labels, scheme: str) -> PairCounts:
    """Enumerate pairs of an explicit episode label layout.

    ``"NCA"`` counts every unordered pair of the support/query union;
    ``"PN"`` counts query-to-support pairs.
    """
    s = np.asarray(support_labels).ravel()
    q = np.asarray(query_labels).ravel()
    if s.size == 0 or q.size == 0:
        raise ValueError("support and query label lists must be non-empty")
    if np.setdiff1d(q, s).size or np.setdiff1d(s, q).size:
        raise ValueError("support and query must cover the same classes")
    scheme = scheme.upper()
    if scheme == "NCA":
        allz = np.concatenate([s, q])
        pos = neg = 0
        for i in range(allz.size):
            for j in range(i + 1, allz.size):
                if allz[i] == allz[j]:
                    pos += 1
                else:
                    neg += 1
        return PairCounts(pos, neg)
    if scheme == "PN":
        pos = neg = 0
        for yq in q:
            for ys in s:
                if yq == ys:
                    pos += 1
                else:
                    neg += 1
        return PairCounts(pos, neg)
    raise ValueError(f"unknown scheme {scheme!r}; expected 'PN' or 'NCA'")


def episode_layout(w: int, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Support and query label lists of a canonical ``(w, n, m)`` episode."""
    classes = np.arange(w)
    return np.repeat(classes, n), np.repeat(classes, m)


@dataclass
class InequalityReport:
    w: int
    n: int
    m: int
    pn: PairCounts
    nca: PairCounts
    positives_equal: bool
    positives_ok: bool
    negatives_strict: bool

    @property
    def ok(self) -> bool:
        return self.positives_ok and self.negatives_strict


def check_inequalities(w: int, n: int, m: int) -> InequalityReport:
    pn, nca = pn_pair_counts(w, n, m), nca_pair_counts(w, n, m)
    return InequalityReport(
        w, n, m, pn, nca,
        positives_equal=nca.positives == pn.positives,
        positives_ok=nca.positives >= pn.positives,
        negatives_strict=nca.negatives > pn.negatives,
    )


# rows of the batch-size-512 comparison, in rank order
BATCH_TABLE_ROWS = (
    ("NCA", None),
    ("5-shot a=16", BatchShapeConfig(5, 16, 512)),
    ("5-shot a=8", BatchShapeConfig(5, 8, 512)),
    ("5-shot a=32", BatchShapeConfig(5, 32, 512)),
    ("1-shot a=8", BatchShapeConfig(1, 8, 512)),
)


def batch_size_table(batch_size: int = 512, nca_images_per_class: int = 8) -> list[tuple[str, PairCounts]]:
    """Positive/negative counts of NCA and the episodic PN variants at one batch size.

    The NCA row treats the batch as ``batch_size / nca_images_per_class``
    classes of ``nca_images_per_class`` images with no support/query roles.
    """
    rows = []
    for name, shape in BATCH_TABLE_ROWS:
        if shape is None:
            w = batch_size // nca_images_per_class
            rows.append((name, nca_pair_counts(w, 1, nca_images_per_class - 1)))
        else:
            ep = shape_to_episode(BatchShapeConfig(shape.shots, shape.images_per_class, batch_size))
            rows.append((name, pn_pair_counts(ep.ways, ep.shots, ep.queries)))
    return rows


def exploited_fraction(w: int, n: int, m: int) -> float:
    """Share of the batch's pairs that a PN episode of the same size uses."""
    return pn_pair_counts(w, n, m).total / nca_pair_counts(w, n, m).total
