"""Few-shot evaluation: centring/normalisation, three classifiers, episode accuracy with CIs."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adapt import AdaptationError, AdaptConfig, finetune_on_support, learn_mahalanobis
from .embed import MlpParams, embed
from .losses import compute_prototypes
from .numerics import as_stream, masked_softmax, pairwise_sq_dists
from .sampler import EpisodeConfig, LabeledDataset, sample_episode

CLASSIFIERS = ("centroid", "knn", "soft")
ADAPT_MODES = ("none", "support-finetune", "mahalanobis")


@dataclass
class NormalizationStats:
    train_mean: np.ndarray

    @classmethod
    def from_embeddings(cls, Z) -> "NormalizationStats":
        return cls(np.asarray(Z, dtype=np.float64).mean(axis=0))


def center_and_normalize(X, stats: NormalizationStats) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != stats.train_mean.shape[0]:
        raise ValueError(f"features {X.shape} do not match stats dim {stats.train_mean.shape[0]}")
    centred = X - stats.train_mean
    norms = np.linalg.norm(centred, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"row {zero[0]} has zero norm after centering")
    return centred / norms[:, None]


def knn_classify(support_emb, support_labels, query_emb, k: int | None = None) -> np.ndarray:
    """Majority vote among the ``k`` nearest supports (default: shots per class).

    Ties go to the tied class with the smallest summed distance over its
    neighbours among the ``k``, then to the lowest class id. Equal distances at
    the ``k`` boundary resolve to the earlier support row.
    """
    support_labels = np.asarray(support_labels)
    classes, inverse = np.unique(support_labels, return_inverse=True)
    if k is None:
        k = int(np.bincount(inverse).min())
    if not 1 <= k <= len(support_labels):
        raise ValueError(f"k={k} outside [1, {len(support_labels)}]")
    d = pairwise_sq_dists(query_emb, support_emb)
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    onehot = np.zeros((d.shape[0], k, classes.size))
    np.put_along_axis(onehot, inverse[nearest][:, :, None], 1.0, axis=2)
    votes = onehot.sum(axis=1)
    dist_sum = np.einsum("qk,qkc->qc", np.take_along_axis(d, nearest, axis=1), onehot)
    tied = votes == votes.max(axis=1, keepdims=True)
    return classes[np.argmin(np.where(tied, dist_sum, np.inf), axis=1)]


def centroid_classify(support_emb, support_labels, query_emb) -> np.ndarray:
    protos, classes = compute_prototypes(support_emb, support_labels)
    return classes[np.argmin(pairwise_sq_dists(query_emb, protos), axis=1)]


def soft_assign_classify(support_emb, support_labels, query_emb) -> tuple[np.ndarray, np.ndarray]:
    """Predictions and per-class likelihoods (columns in ascending class order)."""
    classes, inverse = np.unique(np.asarray(support_labels), return_inverse=True)
    logits = -pairwise_sq_dists(query_emb, support_emb)
    p = masked_softmax(logits, np.ones_like(logits, dtype=bool))
    scores = p @ np.eye(classes.size)[inverse]
    return classes[np.argmax(scores, axis=1)], scores


def classify(name: str, support_emb, support_labels, query_emb) -> np.ndarray:
    if name == "centroid":
        return centroid_classify(support_emb, support_labels, query_emb)
    if name == "knn":
        return knn_classify(support_emb, support_labels, query_emb)
    if name == "soft":
        return soft_assign_classify(support_emb, support_labels, query_emb)[0]
    raise ValueError(f"unknown classifier {name!r}; choose from {CLASSIFIERS}")


def ci95(acc) -> float:
    acc = np.asarray(acc, dtype=np.float64)
    # a constant sample has zero spread; np.std would leave mean-rounding residue
    if acc.size < 2 or np.all(acc == acc[0]):
        return 0.0
    return float(1.96 * acc.std(ddof=1) / np.sqrt(acc.size))


@dataclass
class EvalReport:
    classifier: str
    episode: EpisodeConfig
    mean_accuracy: float
    ci95_halfwidth: float
    n_episodes: int
    seed: int | str
    accuracies: np.ndarray = field(repr=False, compare=False, default=None)

    CSV_FIELDS = ("classifier", "w", "n", "m", "n_episodes", "mean_acc", "ci95", "seed")

    @classmethod
    def from_accuracies(cls, classifier, episode, accuracies, seed) -> "EvalReport":
        acc = np.asarray(accuracies, dtype=np.float64)
        if acc.size < 1:
            raise ValueError("need at least one episode")
        return cls(classifier, episode, float(acc.mean()), ci95(acc), int(acc.size), seed, acc)

    def csv_row(self) -> dict:
        return {
            "classifier": self.classifier,
            "w": self.episode.ways,
            "n": self.episode.shots,
            "m": self.episode.queries,
            "n_episodes": self.n_episodes,
            "mean_acc": repr(self.mean_accuracy),
            "ci95": repr(self.ci95_halfwidth),
            "seed": self.seed,
        }


def pool_reports(reports: list[EvalReport], seed_label: str = "all") -> EvalReport:
    """Aggregate several runs by pooling their per-episode accuracies."""
    first = reports[0]
    acc = np.concatenate([r.accuracies for r in reports])
    return EvalReport.from_accuracies(first.classifier, first.episode, acc, seed_label)


def _episode_accuracy(i, ctx):
    ds, cfg, stream, classifiers = ctx["ds"], ctx["cfg"], ctx["stream"], ctx["classifiers"]
    ep = sample_episode(ds, cfg, stream.child("episode", i))
    s_idx, q_idx = ep.support_idx, ep.query_idx
    s_lab, q_lab = ep.support_labels, ep.query_labels
    adapt = ctx["adapt"]
    if adapt == "support-finetune":
        tuned = finetune_on_support(ctx["params"], ds.features[s_idx], s_lab, ctx["adapt_cfg"])
        S = center_and_normalize(embed(tuned, ds.features[s_idx]), ctx["stats"])
        Q = center_and_normalize(embed(tuned, ds.features[q_idx]), ctx["stats"])
    else:
        S, Q = ctx["Z"][s_idx], ctx["Z"][q_idx]
        if adapt == "mahalanobis":
            metric = learn_mahalanobis(S, s_lab, **ctx["mahalanobis"])
            S, Q = metric.transform(S), metric.transform(Q)
    return [float(np.mean(classify(c, S, s_lab, Q) == q_lab)) for c in classifiers]


def evaluate_many(params: MlpParams, ds: LabeledDataset, episode_cfg: EpisodeConfig,
                  classifiers, n_episodes: int, seed, stats: NormalizationStats,
                  workers: int = 1, adapt: str = "none", adapt_cfg: AdaptConfig | None = None,
                  mahalanobis: dict | None = None) -> list[EvalReport]:
    """Evaluate several classifiers on the same episodes.

    Episode ``i`` is drawn from its own child stream, so the result does not
    depend on ``workers``.
    """
    if ds.split_name == "train":
        raise ValueError("evaluation must use a split disjoint from the training classes")
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if adapt not in ADAPT_MODES:
        raise ValueError(f"unknown adaptation {adapt!r}; choose from {ADAPT_MODES}")
    classifiers = list(classifiers)
    for c in classifiers:
        if c not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {c!r}; choose from {CLASSIFIERS}")
    stream = as_stream(seed)
    params = params.without_projection()
    ctx = {
        "ds": ds, "cfg": episode_cfg, "stream": stream, "classifiers": classifiers,
        "adapt": adapt, "adapt_cfg": adapt_cfg or AdaptConfig(), "params": params,
        "stats": stats, "mahalanobis": mahalanobis or {},
    }
    if adapt == "support-finetune" and episode_cfg.shots < 2:
        raise AdaptationError("insufficient positives for support adaptation")
    if adapt != "support-finetune":
        ctx["Z"] = center_and_normalize(embed(params, ds.features), stats)
    # sample once up front so infeasible configs fail before any work is farmed out
    sample_episode(ds, episode_cfg, stream.child("episode", 0))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda i: _episode_accuracy(i, ctx), range(n_episodes)))
    else:
        rows = [_episode_accuracy(i, ctx) for i in range(n_episodes)]
    acc = np.array(rows)
    return [
        EvalReport.from_accuracies(c, episode_cfg, acc[:, j], stream.seed)
        for j, c in enumerate(classifiers)
    ]


def evaluate(params: MlpParams, ds: LabeledDataset, episode_cfg: EpisodeConfig,
             classifier: str, n_episodes: int, seed, stats: NormalizationStats,
             workers: int = 1, **kwargs) -> EvalReport:
    return evaluate_many(params, ds, episode_cfg, [classifier], n_episodes, seed, stats,
                         workers=workers, **kwargs)[0]


def train_stats(params: MlpParams, train_ds: LabeledDataset) -> NormalizationStats:
    """Mean embedding of the training split."""
    return NormalizationStats.from_embeddings(embed(params.without_projection(), train_ds.features))
