"""Flat ``key = value`` run configuration with dotted section keys."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    graph: str = ""
    out: str = ""


@dataclass(frozen=True)
class WalkConfig:
    metapaths: tuple[str, ...] = ("G-D-G", "G-M-G", "G-M-G-D")
    length: int = 40
    num_walks: int = 10
    window: int = 4


@dataclass(frozen=True)
class EmbedConfig:
    dim: int = 16
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    slope: float = 0.01
    batch_size: int = 1024


@dataclass(frozen=True)
class ProjectionConfig:
    k: int = 32
    s: str = "sqrt"


@dataclass(frozen=True)
class TaskConfig:
    h1: int = 0
    h2: int = 0


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 0.005
    beta: float = 0.005
    gamma: float = 0.005
    batch: int = 32
    epochs: int = 20
    inner_steps: int = 1
    attention_sign: str = "negative"
    omega_fusion: str = "attention"
    optimizer: str = "adam"


@dataclass(frozen=True)
class EpisodeConfig:
    ratio: float = 0.8
    query_labels: int = 5
    repeats: int = 10


@dataclass(frozen=True)
class MetricsConfig:
    k: str = "auto"


@dataclass(frozen=True)
class SynthSection:
    n_bags: int = 60
    aux_types: tuple[str, ...] = ("D", "M")
    aux_counts: tuple[int, ...] = (40, 40)
    q: int = 12
    communities: int = 3
    d: int = 16
    instances: tuple[int, ...] = (4, 10)
    sigma_f: float = 0.5
    eps: float = 0.05
    degree: int = 4
    label_flip: float = 0.02
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    paths: PathsConfig = field(default_factory=PathsConfig)
    walk: WalkConfig = field(default_factory=WalkConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    episodes: EpisodeConfig = field(default_factory=EpisodeConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    synth: SynthSection = field(default_factory=SynthSection)

    def validate(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            if getattr(self.meta, name) < 0:
                raise ConfigError(f"meta.{name} must be non-negative")
        if self.meta.batch < 1 or self.meta.epochs < 0 or self.meta.inner_steps < 0:
            raise ConfigError("meta.batch must be >= 1; epochs and inner_steps >= 0")
        if self.meta.attention_sign not in ("negative", "literal"):
            raise ConfigError("meta.attention_sign must be 'negative' or 'literal'")
        if self.meta.omega_fusion not in ("attention", "product"):
            raise ConfigError("meta.omega_fusion must be 'attention' or 'product'")
        if self.meta.optimizer not in ("sgd", "adam"):
            raise ConfigError("meta.optimizer must be 'sgd' or 'adam'")
        if not 0 < self.episodes.ratio < 1:
            raise ConfigError("episodes.ratio must lie in (0, 1)")
        if self.episodes.query_labels < 1 or self.episodes.repeats < 1:
            raise ConfigError("episodes.query_labels and episodes.repeats must be >= 1")
        if self.walk.length < 1 or self.walk.num_walks < 1 or self.walk.window < 1:
            raise ConfigError("walk parameters must be >= 1")
        if self.embed.dim < 1 or self.embed.lr <= 0 or not 0 < self.embed.slope < 1:
            raise ConfigError("embed.dim >= 1, embed.lr > 0 and embed.slope in (0, 1) are required")
        if self.projection.k < 1:
            raise ConfigError("projection.k must be >= 1")
        if self.projection.s not in ("sqrt", "log"):
            try:
                if float(self.projection.s) < 1:
                    raise ConfigError("projection.s must be >= 1")
            except ValueError:
                raise ConfigError("projection.s must be 'sqrt', 'log' or a number") from None
        if self.metrics.k != "auto":
            try:
                if int(self.metrics.k) < 1:
                    raise ValueError
            except ValueError:
                raise ConfigError("metrics.k must be 'auto' or a positive integer") from None
        if not self.walk.metapaths:
            raise ConfigError("walk.metapaths must list at least one meta-path")

    def to_text(self) -> str:
        lines = [f"seed = {self.seed}"]
        for f in fields(self):
            if f.name == "seed":
                continue
            section = getattr(self, f.name)
            for sf in fields(section):
                lines.append(f"{f.name}.{sf.name} = {_render(getattr(section, sf.name))}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of the configuration excluding file locations."""
        text = "\n".join(l for l in self.to_text().splitlines() if not l.startswith("paths."))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        cfg = self
        for key, raw in overrides.items():
            cfg = _set(cfg, key, raw)
        cfg.validate()
        return cfg


def _render(v: Any) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(raw: str, current: Any, key: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if current and isinstance(current[0], int):
                return tuple(int(x) for x in items)
            return tuple(items)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw


def _set(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    if key == "seed":
        return replace(cfg, seed=_coerce(raw, cfg.seed, key))
    section, _, name = key.partition(".")
    names = {f.name for f in fields(cfg)}
    if not name or section not in names or section == "seed":
        raise ConfigError(f"unknown config key {key!r}")
    sec = getattr(cfg, section)
    if name not in {f.name for f in fields(sec)}:
        raise ConfigError(f"unknown config key {key!r}")
    value = _coerce(raw, getattr(sec, name), key)
    return replace(cfg, **{section: replace(sec, **{name: value})})


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {no}: expected 'key = value'")
        key, _, value = s.partition("=")
        cfg = _set(cfg, key.strip(), value)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def stage_seed(master: int, stage: str) -> int:
    """Per-stage seed: first 8 bytes of sha256("<master>:<stage>")."""
    digest = hashlib.sha256(f"{master}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
