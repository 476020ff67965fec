"""Pipeline configuration: sectioned ``key = value`` files plus CLI overrides.

Example::

    [run]
    seed = 7
    output = out/

    [features]
    freq_t = 3
    heuristic1_threshold = 0.2

    [model]
    kind = both
    arch = paper-reduced
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .explain import LimeConfig
from .features import FeatureConfig
from .ingest import FORMATS
from .models import ARCH_PRESETS, TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


def _csv_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.replace("\n", ",").split(",") if v.strip())


@dataclass(frozen=True)
class InputConfig:
    paths: tuple[str, ...] = ()
    format: str = "flowlines"
    rules: str | None = None
    labels: str | None = None


@dataclass(frozen=True)
class FeatureSection:
    freq_t: int = 3
    tfidf_t: float | None = None
    tfidf_percentile: float = 75.0
    heuristic1_threshold: float = 0.2
    stop_words: str | None = None
    adjacency_window: int = 1


@dataclass(frozen=True)
class ModelSection:
    kind: str = "both"
    arch: str = "paper-reduced"
    alpha: float = 1e-3
    gamma: float = 0.9
    epsilon: float = 1e-8
    epochs: int = 50
    batch_size: int = 64
    max_depth: int | None = None
    min_samples_leaf: int = 1
    prune: bool = True

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.alpha, self.gamma, self.epsilon, self.epochs, self.batch_size, seed)


@dataclass(frozen=True)
class LimeSection:
    n_perturbations: int = 5000
    kernel_width: float | None = None
    ridge_lambda: float = 1e-3
    n_val: int = 200
    heuristic: str = "h3"
    percentile: float = 75.0
    top_frac: float = 0.2
    support: float = 0.75
    model: str = "nn"
    report_label: str | None = None

    def lime_config(self, seed: int) -> LimeConfig:
        return LimeConfig(self.n_perturbations, self.kernel_width, self.ridge_lambda, seed)


@dataclass(frozen=True)
class SplitSection:
    train_domains: tuple[str, ...] = ()
    test_domains: tuple[str, ...] = ()
    test_fraction: float = 0.2
    val_fraction: float = 0.1


@dataclass(frozen=True)
class PipelineConfig:
    input: InputConfig = field(default_factory=InputConfig)
    features: FeatureSection = field(default_factory=FeatureSection)
    model: ModelSection = field(default_factory=ModelSection)
    lime: LimeSection = field(default_factory=LimeSection)
    split: SplitSection = field(default_factory=SplitSection)
    seed: int = 0
    output: str = "out"
    threads: int = 1

    def validate(self, check_paths: bool = True) -> "PipelineConfig":
        if self.input.format not in FORMATS:
            raise ConfigError(f"unknown format {self.input.format!r}; expected one of {FORMATS}")
        if self.model.kind not in ("dt", "nn", "both"):
            raise ConfigError(f"model kind must be dt, nn or both, not {self.model.kind!r}")
        if self.model.arch not in ARCH_PRESETS:
            raise ConfigError(f"unknown architecture {self.model.arch!r}")
        if self.lime.heuristic not in ("h2", "h3"):
            raise ConfigError("heuristic must be h2 or h3")
        if self.lime.model not in ("dt", "nn"):
            raise ConfigError("lime model must be dt or nn")
        overlap = set(self.split.train_domains) & set(self.split.test_domains)
        if overlap:
            raise ConfigError(f"train and test domain lists overlap: {sorted(overlap)}")
        if not 0 < self.split.test_fraction < 1 or not 0 <= self.split.val_fraction < 1:
            raise ConfigError("split fractions must lie in (0, 1)")
        if self.split.test_fraction + self.split.val_fraction >= 1:
            raise ConfigError("test and validation fractions leave no training data")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        f = self.features
        if not 0 <= f.tfidf_percentile <= 100 or not 0 <= f.heuristic1_threshold <= 1:
            raise ConfigError("tfidf_percentile must lie in [0, 100] and heuristic1_threshold in [0, 1]")
        try:
            FeatureConfig(freq_t=f.freq_t, tfidf_t=f.tfidf_t, adjacency_window=f.adjacency_window)
            self.model.train_config(self.seed)
            self.lime.lime_config(self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if check_paths:
            for p in self.input.paths + tuple(x for x in (self.input.rules, self.input.labels,
                                                          self.features.stop_words) if x):
                if not Path(p).exists():
                    raise ConfigError(f"path does not exist: {p}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_SECTIONS = {"input": InputConfig, "features": FeatureSection, "model": ModelSection,
             "lime": LimeSection, "split": SplitSection}
_RUN_KEYS = {"seed": int, "output": str, "threads": int}


def _coerce(value: str, default: Any, annotation: str) -> Any:
    value = value.strip()
    if "tuple" in annotation:
        return _csv_list(value)
    if value.lower() in ("", "none") and "None" in annotation:
        return None
    if "bool" in annotation:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        if "int" in annotation and "float" not in annotation:
            return int(value)
        if "float" in annotation:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad number {value!r}") from None
    return value


def _section_from(cls, items: dict[str, str], name: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        kwargs[key] = _coerce(raw, known[key].default, str(known[key].type))
    return cls(**kwargs)


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    kwargs: dict[str, Any] = {}
    for name in parser.sections():
        items = dict(parser.items(name))
        if name == "run":
            for key, raw in items.items():
                if key not in _RUN_KEYS:
                    raise ConfigError(f"unknown key {key!r} in [run]")
                try:
                    kwargs[key] = _RUN_KEYS[key](raw.strip())
                except ValueError:
                    raise ConfigError(f"bad value for {key}: {raw!r}") from None
        elif name in _SECTIONS:
            kwargs[name] = _section_from(_SECTIONS[name], items, name)
        else:
            raise ConfigError(f"unknown section [{name}]")
    if "seed" not in kwargs:
        raise ConfigError("config must set [run] seed explicitly")
    return PipelineConfig(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def with_overrides(cfg: PipelineConfig, overrides: dict[str, Any]) -> PipelineConfig:
    """Apply ``{"section.key": value}`` or ``{"seed": value}`` overrides; None values are skipped."""
    sections = {name: getattr(cfg, name) for name in _SECTIONS}
    top = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        if "." in dotted:
            name, key = dotted.split(".", 1)
            sections[name] = replace(sections[name], **{key: value})
        else:
            top[dotted] = value
    return replace(cfg, **sections, **top)


def dump_config(cfg: PipelineConfig) -> str:
    """Inverse of parse_config."""
    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, tuple):
            return ", ".join(v)
        return str(v)

    lines = ["[run]", f"seed = {cfg.seed}", f"output = {cfg.output}", f"threads = {cfg.threads}"]
    for name in _SECTIONS:
        lines += ["", f"[{name}]"]
        section = getattr(cfg, name)
        lines += [f"{f.name} = {fmt(getattr(section, f.name))}" for f in fields(section)]
    return "\n".join(lines) + "\n"
