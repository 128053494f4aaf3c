"""Experiment configuration: TOML sections plus ``section.key=value`` overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

KINDS = (
    "train",
    "gradient-alignment",
    "noise",
    "theory.drift",
    "theory.hitting",
    "theory.theorem2",
    "theory.prop1",
    "theory.prop2",
)


class ConfigError(ValueError):
    pass


@dataclass
class EstimatorSection:
    sigma: float = 0.001
    # Directions per update: ES draws this many, the guided scheme uses
    # k_history surrogates plus (directions - k_history) random ones.
    directions: int = 128
    k_history: int = 1
    noise_permute_prob: float = 0.0
    fitness_shaping: bool = False
    # "update" stores the optimizer's applied step in the history, "estimate" the raw estimate.
    store: str = "update"


@dataclass
class OptimizerSection:
    kind: str = "adam"
    learning_rate: float = 0.001
    # Per-method rates; 0 falls back to learning_rate. The guided estimate is a
    # projection without the 1/P factor, so plain SGD needs a larger rate for it.
    es_learning_rate: float = 0.0
    ours_learning_rate: float = 0.0
    lr_grid: list[float] = field(default_factory=list)


@dataclass
class ModelSection:
    hidden: list[int] = field(default_factory=lambda: [64, 64])


@dataclass
class DataSection:
    source: str = "blobs"
    num_classes: int = 10
    samples_per_class: int = 100
    feature_dim: int = 32
    spread: float = 0.15
    batch_size: int = 128
    mnist_images: str = ""
    mnist_labels: str = ""
    limit: int = 1000


@dataclass
class RunSection:
    steps: int = 500
    methods: list[str] = field(default_factory=lambda: ["es", "ours"])
    # Loss threshold for steps-to-threshold; <= 0 means half the initial loss.
    threshold: float = 0.0
    noise_k: list[int] = field(default_factory=lambda: [1, 4])
    noise_prob: float = 0.2
    record_wall_time: bool = False
    # Seeds seed, seed+1, ... for multi-seed summaries.
    repeats: int = 1
    figures: bool = True


@dataclass
class TheorySection:
    dim: int = 101
    p_random: int = 10
    alpha: float = 0.95
    delta: float = 0.1
    trials: int = 500
    steps: int = 400
    burn_in: int = 200
    samples: int = 20000
    instances: int = 200
    span_trials: int = 10000


@dataclass
class ExperimentConfig:
    kind: str = "train"
    seed: int = 0
    threads: int = 1
    out: str = ""
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    run: RunSection = field(default_factory=RunSection)
    theory: TheorySection = field(default_factory=TheorySection)

    def validate(self) -> "ExperimentConfig":
        e, o, d = self.estimator, self.optimizer, self.data
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if not e.sigma > 0:
            raise ConfigError("estimator.sigma must be > 0")
        if not 0.0 <= e.noise_permute_prob <= 1.0 or not 0.0 <= self.run.noise_prob <= 1.0:
            raise ConfigError("permutation probabilities must lie in [0, 1]")
        if e.directions < 1 or not 0 <= e.k_history < e.directions:
            raise ConfigError("need 0 <= estimator.k_history < estimator.directions")
        if e.store not in ("update", "estimate"):
            raise ConfigError("estimator.store must be 'update' or 'estimate'")
        if o.kind not in ("sgd", "adam"):
            raise ConfigError("optimizer.kind must be 'sgd' or 'adam'")
        if not o.learning_rate > 0 or any(not lr > 0 for lr in o.lr_grid):
            raise ConfigError("learning rates must be > 0")
        if o.es_learning_rate < 0 or o.ours_learning_rate < 0:
            raise ConfigError("per-method learning rates must be >= 0")
        if self.run.steps < 1 or self.run.repeats < 1:
            raise ConfigError("run.steps and run.repeats must be >= 1")
        if e.k_history < 1 and "ours" in self.run.methods and self.kind == "train":
            raise ConfigError("the guided method needs estimator.k_history >= 1")
        if d.source not in ("blobs", "mnist"):
            raise ConfigError("data.source must be 'blobs' or 'mnist'")
        if d.source == "mnist":
            if not d.mnist_images or not d.mnist_labels:
                raise ConfigError("data.source='mnist' needs both mnist_images and mnist_labels")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if set(self.run.methods) - {"es", "ours"}:
            raise ConfigError("run.methods may contain only 'es' and 'ours'")
        return self

    def method_lr(self, method: str) -> float:
        o = self.optimizer
        specific = o.es_learning_rate if method == "es" else o.ours_learning_rate
        return specific if specific > 0 else o.learning_rate

    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.run.repeats)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _apply(cfg: ExperimentConfig, data: dict, where: str = "") -> None:
    for key, value in data.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown config key {where}{key}")
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key} must be a table")
            _apply(current, value, f"{where}{key}.")
        else:
            setattr(cfg, key, _coerce(current, value, f"{where}{key}"))


def _coerce(current, value, name):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    if isinstance(current, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(current, int) and isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(current, str) and isinstance(value, str):
        return value
    if isinstance(current, list) and isinstance(value, list):
        return list(value)
    raise ConfigError(f"{name}: cannot use {value!r} for a {type(current).__name__} setting")


def parse_override(text: str) -> dict:
    """``a.b=1`` to ``{"a": {"b": 1}}``; values use TOML syntax, bare words are strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def load_config(path=None, overrides=(), kind: str | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            _apply(cfg, tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if kind is not None:
        cfg.kind = kind
    for o in overrides:
        _apply(cfg, parse_override(o))
    return cfg.validate()
