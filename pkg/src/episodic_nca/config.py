"""Experiment configuration: sectioned key/value files with a closed schema.

Example::

    [data]
    path = data/synthetic.bin

    [loss]
    name = nca

    [batching]
    kind = plain
    batch_size = 128

    [run]
    seeds = 0, 1, 2

Every key has a default; unknown sections or keys are rejected before any
computation starts.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import DatasetFile, SyntheticSpec, generate_synthetic, read_dataset
from .embed import Batching, LossConfig, ModelConfig, OptimizerConfig
from .evaluation import ADAPT_MODES, CLASSIFIERS


class ConfigError(ValueError):
    pass


# desk-scale optimiser defaults; see README for why they differ from OptimizerConfig()
DESK_OPTIMIZER = OptimizerConfig(learning_rate=0.03, epochs=20, grad_clip=1.0)


@dataclass(frozen=True)
class EvalSettings:
    split: str = "test"
    classifiers: tuple[str, ...] = ("centroid",)
    shots: tuple[int, ...] = (1, 5)
    ways: int = 5
    queries: int = 15
    n_episodes: int = 10000
    workers: int = 1
    adapt: str = "none"

    def __post_init__(self):
        if self.split not in ("val", "test"):
            raise ConfigError(f"eval split must be val or test, got {self.split!r}")
        for c in self.classifiers:
            if c not in CLASSIFIERS:
                raise ConfigError(f"unknown classifier {c!r}; choose from {CLASSIFIERS}")
        if self.adapt not in ADAPT_MODES:
            raise ConfigError(f"unknown adapt mode {self.adapt!r}; choose from {ADAPT_MODES}")
        if self.n_episodes < 1 or self.workers < 1:
            raise ConfigError("n_episodes and workers must be >= 1")
        if not self.shots or min(self.shots) < 1:
            raise ConfigError("shots must be a non-empty list of positive integers")


@dataclass(frozen=True)
class SweepSettings:
    batch_sizes: tuple[int, ...] = (128, 256, 512)
    fractions: tuple[float, ...] = (0.05, 0.1, 0.25, 0.5, 1.0)
    fraction_batch_size: int = 256
    images_per_class: int = 8
    family: str = "proto"
    n_episodes: int = 2000

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ConfigError("sweep n_episodes must be >= 1")
        if any(not 0 < f <= 1 for f in self.fractions):
            raise ConfigError("fractions must lie in (0, 1]")
        if self.family not in ("proto", "matching"):
            raise ConfigError("family must be 'proto' or 'matching'")


@dataclass(frozen=True)
class ExperimentConfig:
    data_path: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    loss: LossConfig = field(default_factory=LossConfig)
    batching: Batching = field(default_factory=Batching)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = DESK_OPTIMIZER
    eval: EvalSettings = field(default_factory=EvalSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    seeds: tuple[int, ...] = (0, 1, 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["batching"] = {k: getattr(self.batching, k) for k in ("kind", "batch_size", "shots", "images_per_class")}
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def load_data(self) -> DatasetFile:
        if self.data_path:
            return read_dataset(self.data_path)
        return generate_synthetic(self.synthetic)

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))


def _parse_list(text: str, cast) -> tuple:
    parts = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]
    return tuple(cast(p) for p in parts)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(cast):
    def parse(text: str):
        return None if text.strip().lower() in ("", "none") else cast(text)
    return parse


def _cast_for(cls, name: str):
    typ = {f.name: f.type for f in fields(cls)}[name]
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    if "tuple[int" in typ:
        return lambda t: _parse_list(t, int)
    if "tuple[float" in typ:
        return lambda t: _parse_list(t, float)
    if "tuple[str" in typ:
        return lambda t: _parse_list(t, str)
    if typ.startswith("int | None"):
        return _optional(int)
    if typ.startswith("float | None"):
        return _optional(float)
    if typ.startswith("bool"):
        return _parse_bool
    if typ.startswith("int"):
        return int
    if typ.startswith("float"):
        return float
    return str


def _build(cls, section: dict, base=None, where: str = ""):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, text in section.items():
        try:
            kwargs[key] = _cast_for(cls, key)(text)
        except ValueError as exc:
            raise ConfigError(f"[{where}] {key}: {exc}") from exc
    try:
        return replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


SECTIONS = ("data", "loss", "batching", "model", "optimizer", "eval", "sweep", "run")


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    sec = {name: dict(parser[name]) if parser.has_section(name) else {} for name in SECTIONS}

    data = dict(sec["data"])
    path = data.pop("path", None)
    if path and data:
        raise ConfigError("[data] give either path or synthetic keys, not both")
    synthetic = _build(SyntheticSpec, data, where="data")
    run = sec["run"]
    if set(run) - {"seeds"}:
        raise ConfigError(f"[run] unknown keys: {', '.join(sorted(set(run) - {'seeds'}))}")
    seeds = _parse_list(run["seeds"], int) if "seeds" in run else (0, 1, 2)
    if not seeds:
        raise ConfigError("[run] seeds must not be empty")

    model_sec = dict(sec["model"])
    return ExperimentConfig(
        data_path=path,
        synthetic=synthetic,
        loss=_build(LossConfig, sec["loss"], where="loss"),
        batching=_build(Batching, sec["batching"], where="batching"),
        model=_build(ModelConfig, model_sec, where="model"),
        optimizer=_build(OptimizerConfig, sec["optimizer"], DESK_OPTIMIZER, where="optimizer"),
        eval=_build(EvalSettings, sec["eval"], where="eval"),
        sweep=_build(SweepSettings, sec["sweep"], where="sweep"),
        seeds=seeds,
    )


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
