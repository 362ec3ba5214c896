"""Training/evaluation grids: batch-size sweep, ablations, pair-fraction sweep."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig
from .data import DatasetFile
from .embed import Batching, LossConfig, MlpParams, TrainLog, train
from .evaluation import EvalReport, evaluate_many, train_stats
from .numerics import RngStream
from .pairs import exploited_fraction
from .sampler import BatchShapeConfig, EpisodeConfig, shape_to_episode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Method:
    name: str
    loss: LossConfig
    batching: Batching
    classifier: str = "centroid"


def eval_stream(seed: int) -> RngStream:
    return RngStream(seed).child("eval")


def evaluate_model(params: MlpParams, data: DatasetFile, cfg: ExperimentConfig, seed: int,
                   classifiers=None, shots=None, n_episodes=None) -> dict[tuple[str, int], EvalReport]:
    """Evaluate one trained model for every (classifier, shots) pair of the config."""
    ev = cfg.eval
    stats = train_stats(params, data.split("train"))
    target = data.split(ev.split)
    out = {}
    for n in shots or ev.shots:
        episode = EpisodeConfig(ev.ways, n, ev.queries)
        reports = evaluate_many(
            params, target, episode, classifiers or ev.classifiers, n_episodes or ev.n_episodes,
            eval_stream(seed).child("shots", n), stats, workers=ev.workers,
            adapt=ev.adapt,
        )
        for r in reports:
            r.seed = seed
            out[(r.classifier, n)] = r
    return out


def run_method(method: Method, data: DatasetFile, cfg: ExperimentConfig, seed: int,
               shots=None, n_episodes=None) -> tuple[dict[tuple[str, int], EvalReport], TrainLog]:
    params, tlog = train(data.split("train"), method.loss, method.batching, cfg.model, cfg.optimizer, seed)
    reports = evaluate_model(params, data, cfg, seed, [method.classifier], shots, n_episodes)
    log.info("%s seed=%d: %s", method.name, seed,
             {k[1]: round(r.mean_accuracy, 4) for k, r in reports.items()})
    return reports, tlog


def _acc_columns(reports, shots) -> dict:
    row = {}
    for n in shots:
        (r,) = [v for (c, s), v in reports.items() if s == n]
        row[f"acc_{n}shot"] = repr(r.mean_accuracy)
        row[f"ci95_{n}shot"] = repr(r.ci95_halfwidth)
    return row


def pn_method(shots: int, images_per_class: int, batch_size: int, loss: str = "proto",
              classifier: str = "centroid") -> Method:
    label = {"proto": "PN", "matching": "MN", "no_proto": "PN no proto", "allpairs": "PN no S/Q"}[loss]
    return Method(
        f"{label} {shots}-shot a={images_per_class}",
        LossConfig(loss),
        Batching("episodic", batch_size, shots, images_per_class),
        classifier,
    )


def batch_methods(batch_size: int, images_per_class=(8, 16, 32)) -> list[Method]:
    methods = [Method("NCA", LossConfig("nca"), Batching("plain", batch_size))]
    methods.append(pn_method(1, 8, batch_size))
    for a in images_per_class:
        if batch_size % a == 0 and batch_size // a >= 2:
            methods.append(pn_method(5, a, batch_size))
    return methods


def ablation_methods(batch_size: int, family: str = "proto", a: int = 8) -> list[Method]:
    """Rows of the ablation grid at one batch size.

    Only one 1-shot row exists: prototypes of single supports are the supports
    themselves, so a 1-shot "no proto" run would duplicate it.
    """
    if family == "matching":
        return [
            Method("NCA", LossConfig("nca"), Batching("plain", batch_size), "soft"),
            Method("NCA fixed batch composition", LossConfig("nca"), Batching("fixed", batch_size, 1, a), "soft"),
            pn_method(1, a, batch_size, "matching", "soft"),
            pn_method(5, a, batch_size, "matching", "soft"),
        ]
    return [
        Method("NCA", LossConfig("nca"), Batching("plain", batch_size)),
        Method("NCA replacement", LossConfig("nca"), Batching("replacement", batch_size)),
        Method("NCA fixed batch composition", LossConfig("nca"), Batching("fixed", batch_size, 1, a)),
        pn_method(1, a, batch_size),
        pn_method(5, a, batch_size),
        pn_method(5, a, batch_size, "no_proto"),
        pn_method(5, a, batch_size, "allpairs"),
    ]


def _grid(methods_for, cfg: ExperimentConfig, data: DatasetFile, batch_sizes) -> list[dict]:
    shots = cfg.eval.shots
    rows = []
    for b in batch_sizes:
        for m in methods_for(b):
            for seed in cfg.seeds:
                reports, _ = run_method(m, data, cfg, seed, n_episodes=cfg.sweep.n_episodes)
                rows.append({
                    "method": m.name, "loss": m.loss.name, "batching": m.batching.kind,
                    "batch_size": b, "shots": m.batching.shots if m.batching.kind == "episodic" else "",
                    "images_per_class": m.batching.images_per_class if m.batching.kind in ("episodic", "fixed") else "",
                    "classifier": m.classifier, "seed": seed,
                    "n_episodes": cfg.sweep.n_episodes, **_acc_columns(reports, shots),
                })
    return rows


def sweep_batch(cfg: ExperimentConfig, data: DatasetFile | None = None, batch_sizes=None) -> list[dict]:
    data = data or cfg.load_data()
    return _grid(lambda b: batch_methods(b), cfg, data, batch_sizes or cfg.sweep.batch_sizes)


def ablate(cfg: ExperimentConfig, data: DatasetFile | None = None, batch_sizes=None) -> list[dict]:
    data = data or cfg.load_data()
    a = cfg.sweep.images_per_class
    return _grid(lambda b: ablation_methods(b, cfg.sweep.family, a), cfg, data,
                 batch_sizes or cfg.sweep.batch_sizes)


def pn_reference_configs(batch_size: int) -> list[BatchShapeConfig]:
    shapes = [BatchShapeConfig(1, 8, batch_size)]
    for a in (8, 16, 32):
        if batch_size % a == 0 and batch_size // a >= 2:
            shapes.append(BatchShapeConfig(5, a, batch_size))
    return shapes


def sweep_fraction(cfg: ExperimentConfig, fractions=None, data: DatasetFile | None = None,
                   pn_shapes=None) -> list[dict]:
    """Subsampled-NCA accuracy per kept fraction, plus PN points at their exploited-pair fraction."""
    data = data or cfg.load_data()
    b = cfg.sweep.fraction_batch_size
    fractions = sorted(fractions or cfg.sweep.fractions)
    shots = cfg.eval.shots
    rows = []
    for f in fractions:
        m = Method(f"NCA f={f:g}", LossConfig("subsampled_nca", keep_fraction=f), Batching("plain", b))
        for seed in cfg.seeds:
            reports, _ = run_method(m, data, cfg, seed, n_episodes=cfg.sweep.n_episodes)
            rows.append({"kind": "nca_subsampled", "method": m.name, "pair_fraction": repr(float(f)),
                         "shots": "", "images_per_class": "", "batch_size": b, "seed": seed,
                         **_acc_columns(reports, shots)})
    for shape in pn_shapes if pn_shapes is not None else pn_reference_configs(b):
        ep = shape_to_episode(shape)
        x = exploited_fraction(ep.ways, ep.shots, ep.queries)
        m = pn_method(shape.shots, shape.images_per_class, shape.batch_size)
        for seed in cfg.seeds:
            reports, _ = run_method(m, data, cfg, seed, n_episodes=cfg.sweep.n_episodes)
            rows.append({"kind": "pn", "method": m.name, "pair_fraction": repr(x),
                         "shots": shape.shots, "images_per_class": shape.images_per_class,
                         "batch_size": shape.batch_size, "seed": seed, **_acc_columns(reports, shots)})
    sub = [r for r in rows if r["kind"] == "nca_subsampled"]
    for n in shots:
        key = f"acc_{n}shot"
        lo = np.mean([float(r[key]) for r in sub if float(r["pair_fraction"]) == fractions[0]])
        hi = np.mean([float(r[key]) for r in sub if float(r["pair_fraction"]) == fractions[-1]])
        for r in rows:
            r[f"trend_{n}shot"] = repr(float(hi - lo))
    return rows


def mean_by(rows: list[dict], key: str, value: str) -> dict:
    """Average ``value`` over rows grouped by ``key``."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[key], []).append(float(r[value]))
    return {k: float(np.mean(v)) for k, v in groups.items()}


def with_eval(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, eval=replace(cfg.eval, **changes))
