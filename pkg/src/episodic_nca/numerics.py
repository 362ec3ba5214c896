"""Dense float64 helpers and seeded random streams used across the package.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64; ``as_matrix``
is the single validation point.
"""
from __future__ import annotations

import hashlib

import numpy as np


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a finite, C-contiguous float64 2-D array."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def pairwise_sq_dists(A, B) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``A`` (n x d) and ``B`` (m x d).

    Computed from explicit differences rather than the ``|a|^2 + |b|^2 - 2ab``
    expansion so that the result is exactly non-negative and the diagonal of
    ``pairwise_sq_dists(A, A)`` is exactly zero.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: A{A.shape} vs B{B.shape}")
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def log_sum_exp(v) -> float:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty reduction")
    vmax = v.max()
    if not np.isfinite(vmax):
        return float(vmax)
    return float(vmax + np.log(np.sum(np.exp(v - vmax))))


def masked_log_sum_exp(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp over the entries where ``mask`` is true.

    Rows with no selected entry yield ``-inf``.
    """
    masked = np.where(mask, logits, -np.inf)
    row_max = masked.max(axis=1)
    safe_max = np.where(np.isfinite(row_max), row_max, 0.0)
    total = np.exp(masked - safe_max[:, None]).sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(total > 0, safe_max + np.log(total), -np.inf)


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax restricted to ``mask``; rows with an empty mask are all zero."""
    lse = masked_log_sum_exp(logits, mask)
    ok = np.isfinite(lse)
    out = np.zeros_like(logits)
    out[ok] = np.exp(np.where(mask[ok], logits[ok] - lse[ok, None], -np.inf))
    return out


def mean_rows(A, row_indices) -> np.ndarray:
    idx = np.asarray(row_indices, dtype=np.intp).ravel()
    if idx.size == 0:
        raise ValueError("empty mean")
    A = np.asarray(A, dtype=np.float64)
    if idx.min() < 0 or idx.max() >= A.shape[0]:
        raise IndexError(f"row index out of range for matrix with {A.shape[0]} rows")
    return A[idx].mean(axis=0)


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if label < 0:
            raise ValueError(f"stream labels must be non-negative, got {label}")
        return int(label)
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Counter-based (Philox) random stream addressed by ``(seed, path)``.

    ``child(*labels)`` derives an independent stream whose draws depend only on
    the seed and the full label path, never on how many draws other streams
    have made. This is what makes per-episode and per-batch randomness
    independent of iteration order and worker count.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        self.path = tuple(path)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *labels) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(_label_to_int(x) for x in labels))

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"


def as_generator(rng) -> np.random.Generator:
    """Accept an ``RngStream``, a ``Generator`` or an int seed."""
    if isinstance(rng, RngStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).gen
    raise TypeError(f"cannot build a random generator from {type(rng).__name__}")


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError(f"expected RngStream or int seed, got {type(rng).__name__}")
