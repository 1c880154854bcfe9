"""Run configuration: one YAML document, one section per module.

Every section is optional; missing keys take the built-in defaults so an
empty file (or no file at all) runs the full pipeline.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .graph_search import GraphConfig
from .layers import LayersConfig, Phase2Config, SegmentConfig
from .metrics import MetricsConfig
from .phantom import PhantomSpec, PhantomSpecError
from .preprocess import PreprocessConfig

ENV_VAR = "OCTSEG_CONFIG"
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    pass


@dataclass
class IOConfig:
    out_dir: str = "octseg_out"
    formats: list = field(default_factory=lambda: list(FORMATS))
    overlay: bool = False
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.formats, str):
            self.formats = [f.strip() for f in self.formats.split(",") if f.strip()]
        bad = [f for f in self.formats if f not in FORMATS]
        if bad or not self.formats:
            raise ValueError(f"io.formats must be a non-empty subset of {FORMATS}, got {self.formats}")
        if not isinstance(self.jobs, int) or self.jobs < 1:
            raise ValueError("io.jobs must be an integer >= 1")


@dataclass
class RunConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    layers: LayersConfig = field(default_factory=LayersConfig)
    phase2: Phase2Config = field(default_factory=Phase2Config)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    io: IOConfig = field(default_factory=IOConfig)

    def segment_config(self) -> SegmentConfig:
        return SegmentConfig(self.preprocess, self.graph, self.layers, self.phase2, self.metrics)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "RunConfig":
        data = dict(data or {})
        sections = {f.name for f in fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        builders = {
            "preprocess": PreprocessConfig,
            "graph": GraphConfig,
            "layers": LayersConfig,
            "phase2": Phase2Config,
            "metrics": MetricsConfig,
            "io": IOConfig,
        }
        kwargs = {}
        for name, value in data.items():
            if value is None:
                continue
            if not isinstance(value, Mapping):
                raise ConfigError(f"config section {name!r} must be a mapping")
            if name == "phantom":
                try:
                    kwargs[name] = PhantomSpec.from_dict(value)
                except PhantomSpecError as exc:
                    raise ConfigError(f"phantom: {exc}") from exc
                continue
            kwargs[name] = _build(builders[name], name, value)
        return cls(**kwargs)


def _build(klass, section: str, values: Mapping[str, Any]):
    known = {f.name for f in fields(klass)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return klass(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def load_config(path=None) -> RunConfig:
    """Read a YAML config; falls back to $OCTSEG_CONFIG, then to defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, Mapping):
        raise ConfigError(f"{p}: top level must be a mapping")
    return RunConfig.from_dict(data)
