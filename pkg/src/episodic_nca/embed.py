"""Fully-connected embedding network with hand-written backprop and SGD training."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from .numerics import RngStream, as_generator, as_matrix, as_stream
from .sampler import (
    BatchShapeConfig,
    LabeledDataset,
    epoch_batches,
    sample_episode,
    sample_fixed_composition_batch,
    sample_replacement_batch,
    shape_to_episode,
)

CHECKPOINT_FORMAT = "episodic-nca-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Layer weights (in x out) and biases; ReLU between layers, identity on the output.

    ``projection`` is an optional training-only linear head (out x P).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    projection: np.ndarray | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {k}: weight {W.shape} / bias {b.shape} mismatch")
            if k and W.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k} input dim does not chain to layer {k - 1}")
        if self.projection is not None and self.projection.shape[0] != self.out_dim:
            raise ValueError("projection head input dim must match the embedding dim")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = list(self.weights) + list(self.biases)
        if self.projection is not None:
            out.append(self.projection)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            None if self.projection is None else self.projection.copy(),
        )

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            [np.zeros_like(W) for W in self.weights],
            [np.zeros_like(b) for b in self.biases],
            None if self.projection is None else np.zeros_like(self.projection),
        )

    def without_projection(self) -> "MlpParams":
        return MlpParams(self.weights, self.biases, None)


@dataclass
class ModelConfig:
    hidden: tuple[int, ...] = (64, 64)
    out_dim: int = 16
    projection_dim: int | None = None


def init_mlp(in_dim: int, cfg: ModelConfig, rng) -> MlpParams:
    """He-style uniform init scaled by fan-in; zero biases."""
    gen = as_generator(rng)
    dims = [in_dim, *cfg.hidden, cfg.out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(gen.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    proj = None
    if cfg.projection_dim:
        bound = math.sqrt(6.0 / cfg.out_dim)
        proj = gen.uniform(-bound, bound, size=(cfg.out_dim, cfg.projection_dim))
    return MlpParams(weights, biases, proj)


def forward(params: MlpParams, X) -> tuple[np.ndarray, list[np.ndarray]]:
    """Embed rows of ``X``; the cache holds each layer's input and pre-activation."""
    h = np.asarray(X, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.dims[0]:
        raise ValueError(f"input shape {h.shape} does not match first layer dim {params.dims[0]}")
    cache = []
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        pre = h @ W + b
        cache.append((h, pre))
        h = pre if k == last else np.maximum(pre, 0.0)
    return h, cache


def backward(params: MlpParams, cache, grad_out) -> MlpParams:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != cache[-1][1].shape:
        raise ValueError(f"upstream grad {grad_out.shape} does not match output {cache[-1][1].shape}")
    grads = params.zeros_like()
    grads.projection = None
    g = grad_out
    for k in range(len(params.weights) - 1, -1, -1):
        h, pre = cache[k]
        if k != len(params.weights) - 1:
            g = g * (pre > 0)
        grads.weights[k] = h.T @ g
        grads.biases[k] = g.sum(axis=0)
        if k:
            g = g @ params.weights[k].T
    return grads


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 5e-4
    epochs: int = 20
    lr_decay_factor: float = 0.1
    lr_decay_at: float = 0.7
    # rescale the global gradient norm down to this value; None disables
    grad_clip: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")

    def lr_at(self, epoch: int) -> float:
        milestone = math.ceil(self.lr_decay_at * self.epochs - 1e-9)
        return self.learning_rate * (self.lr_decay_factor if epoch >= milestone else 1.0)


def sgd_step(params: MlpParams, grads: MlpParams, velocity: list[np.ndarray] | None,
             cfg: OptimizerConfig, epoch: int) -> list[np.ndarray]:
    """In-place SGD update with L2 weight decay and (Nesterov) momentum.

    Returns the momentum buffers, to be passed back on the next call.
    """
    lr = cfg.lr_at(epoch)
    ps, gs = params.arrays(), grads.arrays()
    if len(ps) != len(gs):
        raise ValueError("parameter / gradient structure mismatch")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in ps]
    if cfg.grad_clip is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in gs))
        if norm > cfg.grad_clip:
            gs = [g * (cfg.grad_clip / norm) for g in gs]
    for p, g, v in zip(ps, gs, velocity):
        g = g + cfg.weight_decay * p if cfg.weight_decay else g
        if cfg.momentum:
            v *= cfg.momentum
            v += g
            step = g + cfg.momentum * v if cfg.nesterov else v
        else:
            step = g
        p -= lr * step
    return velocity


@dataclass(frozen=True)
class Batching:
    """How training batches are drawn.

    ``plain``: shuffled epoch without replacement. ``replacement``: independent
    uniform batches. ``fixed``: ``batch_size / images_per_class`` classes with
    ``images_per_class`` images each. ``episodic``: support/query episodes.
    """

    kind: str = "plain"
    batch_size: int = 128
    shots: int = 5
    images_per_class: int = 8

    KINDS = ("plain", "replacement", "fixed", "episodic")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown batching {self.kind!r}; choose from {self.KINDS}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.kind == "episodic":
            BatchShapeConfig(self.shots, self.images_per_class, self.batch_size)
        if self.kind == "fixed" and self.batch_size % self.images_per_class:
            raise ValueError("fixed-composition batch_size must be a multiple of images_per_class")

    @property
    def episode(self):
        return shape_to_episode(BatchShapeConfig(self.shots, self.images_per_class, self.batch_size))


@dataclass(frozen=True)
class LossConfig:
    name: str = "nca"
    keep_fraction: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.name not in L.LOSS_NAMES:
            raise ValueError(f"unknown loss {self.name!r}; choose from {L.LOSS_NAMES}")
        L.PairSubsampleConfig(self.keep_fraction)
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def batch_loss(loss: LossConfig, emb, labels, n_support: int | None = None, rng=None) -> L.LossResult:
    """Evaluate ``loss`` on a batch; episode losses need the leading ``n_support`` rows as support."""
    if loss.name in L.EPISODE_LOSSES:
        if n_support is None:
            raise ValueError(f"loss {loss.name!r} requires episodic batches")
        ep = L.EpisodeEmbeddings(emb[:n_support], labels[:n_support], emb[n_support:], labels[n_support:])
        return L.EPISODE_LOSSES[loss.name](ep)
    if loss.name == "nca":
        return L.nca_loss(emb, labels)
    if loss.name == "subsampled_nca":
        return L.subsampled_nca_loss(emb, labels, L.PairSubsampleConfig(loss.keep_fraction), rng)
    return L.sup_contrastive_loss(emb, labels, loss.temperature)


@dataclass
class TrainLog:
    seed: int
    epoch_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    skipped_steps: list[int] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list, compare=False)

    def rows(self):
        for e, (loss, lr) in enumerate(zip(self.epoch_loss, self.lr)):
            yield {"epoch": e, "loss": loss, "lr": lr,
                   "skipped_steps": self.skipped_steps[e], "seed": self.seed}


class TrainingError(RuntimeError):
    pass


def _draw_batches(ds: LabeledDataset, batching: Batching, epoch_stream: RngStream):
    """Yield ``(indices, n_support)`` for one epoch; ``n_support`` is None off-episode."""
    n_steps = math.ceil(len(ds) / batching.batch_size)
    if batching.kind == "plain":
        for idx in epoch_batches(ds, batching.batch_size, epoch_stream.child("perm")):
            yield idx, None
        return
    for t in range(n_steps):
        s = epoch_stream.child("step", t)
        if batching.kind == "replacement":
            yield sample_replacement_batch(ds, batching.batch_size, s), None
        elif batching.kind == "fixed":
            a = batching.images_per_class
            yield sample_fixed_composition_batch(ds, batching.batch_size // a, a, s), None
        else:
            ep = sample_episode(ds, batching.episode, s)
            yield np.concatenate([ep.support_idx, ep.query_idx]), len(ep.support)


def train(ds: LabeledDataset, loss: LossConfig, batching: Batching,
          model_cfg: ModelConfig, opt_cfg: OptimizerConfig, seed,
          callback=None) -> tuple[MlpParams, TrainLog]:
    """Train an embedding network; fully determined by ``seed``.

    A subsampled-NCA step whose mask keeps no positive pair carries no signal
    and is skipped (counted in the log); any other loss failure aborts.
    ``callback(epoch, params)`` runs after every epoch when given.
    """
    if loss.name in L.EPISODE_LOSSES and batching.kind != "episodic":
        raise ValueError(f"loss {loss.name!r} needs episodic batching, got {batching.kind!r}")
    stream = as_stream(seed)
    params = init_mlp(ds.dim, model_cfg, stream.child("init"))
    log = TrainLog(seed=stream.seed)
    velocity = None
    for epoch in range(opt_cfg.epochs):
        t0 = time.perf_counter()
        epoch_stream = stream.child("epoch", epoch)
        total, count, skipped = 0.0, 0, 0
        for step, (idx, n_support) in enumerate(_draw_batches(ds, batching, epoch_stream)):
            X, y = ds.features[idx], ds.labels[idx]
            Z, cache = forward(params, X)
            P = Z if params.projection is None else Z @ params.projection
            try:
                res = batch_loss(loss, P, y, n_support, epoch_stream.child("mask", step))
            except L.NoPairsError as exc:
                if loss.name == "subsampled_nca" and np.unique(y).size < len(y):
                    skipped += 1
                    continue
                raise TrainingError(
                    f"epoch {epoch} step {step}: {exc} "
                    f"(batch of {len(idx)}, {np.unique(y).size} classes)"
                ) from exc
            except FloatingPointError as exc:
                raise TrainingError(
                    f"epoch {epoch} step {step}: {exc} "
                    f"(batch of {len(idx)}, {np.unique(y).size} classes)"
                ) from exc
            if params.projection is None:
                grads = backward(params, cache, res.grad)
            else:
                grads = backward(params, cache, res.grad @ params.projection.T)
                grads.projection = Z.T @ res.grad
            velocity = sgd_step(params, grads, velocity, opt_cfg, epoch)
            total += res.value
            count += 1
        if count == 0:
            raise TrainingError(f"epoch {epoch}: every step was skipped")
        log.epoch_loss.append(total / count)
        log.skipped_steps.append(skipped)
        log.lr.append(opt_cfg.lr_at(epoch))
        log.wall_time.append(time.perf_counter() - t0)
        if callback is not None:
            callback(epoch, params)
    return params, log


def embed(params: MlpParams, X) -> np.ndarray:
    """Evaluation-time embedding: the projection head is never applied."""
    return forward(params, X)[0]


def save_checkpoint(path, params: MlpParams, config: dict | None = None, seed: int | None = None) -> None:
    """JSON dump; Python float repr round-trips float64 exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": params.dims,
        "weights": [W.ravel().tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "projection": None if params.projection is None else {
            "shape": list(params.projection.shape),
            "data": params.projection.ravel().tolist(),
        },
        "config": config or {},
        "seed": seed,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    dims = doc["dims"]
    weights = [
        np.array(w, dtype=np.float64).reshape(i, o)
        for w, i, o in zip(doc["weights"], dims[:-1], dims[1:])
    ]
    biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    proj = None
    if doc["projection"] is not None:
        proj = np.array(doc["projection"]["data"], dtype=np.float64).reshape(doc["projection"]["shape"])
    for a in weights + biases:
        as_matrix(np.atleast_2d(a), "checkpoint parameters")
    return MlpParams(weights, biases, proj), {"config": doc["config"], "seed": doc["seed"]}


def config_dict(loss: LossConfig, batching: Batching, model_cfg: ModelConfig, opt_cfg: OptimizerConfig) -> dict:
    return {
        "loss": asdict(loss),
        "batching": {k: getattr(batching, k) for k in ("kind", "batch_size", "shots", "images_per_class")},
        "model": {**asdict(model_cfg), "hidden": list(model_cfg.hidden)},
        "optimizer": asdict(opt_cfg),
    }
