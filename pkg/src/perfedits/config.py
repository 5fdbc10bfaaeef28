"""Toolkit configuration file (JSON, versioned).

Example::

    {
      "version": 1,
      "paths": {"workdir": "work", "cache": "cache"},
      "compile": {"compiler_command": "g++ {flags} {src} -o {out}",
                  "flags": ["-std=c++17", "-O3"], "timeout_s": 60},
      "limits": {"wall_timeout_s": 120},
      "backend": {"kind": "manifest", "manifest": "runtimes.json"},
      "metrics": {"dataset_min_improvement": 0.10, "opt_threshold": 0.10, "k": 8},
      "retrieval": {"k": 2},
      "seeds": {"split": 0, "noise": 0}
    }

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .backends import ManifestBackend, NoiseModel, PerfBackend, SimulatorBackend, SimulatorConfig, WallClockBackend
from .core import Limits, Unit
from .harness import CompileConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    corpus: str | None = None
    tests: str | None = None
    workdir: str | None = None
    cache: str | None = None


@dataclass
class CompileSection:
    compiler_command: str = "g++ {flags} {src} -o {out}"
    flags: list[str] = field(default_factory=lambda: ["-std=c++17", "-O3"])
    timeout_s: float = 60.0
    source_suffix: str = ".cpp"


@dataclass
class LimitsSection:
    wall_timeout_s: float = 120.0
    memory_bytes: int | None = None
    stdout_cap_bytes: int = 64 * 1024 * 1024
    isolate_network: bool = True


@dataclass
class NoiseSection:
    sigma: float = 0.0
    seed: int = 0


@dataclass
class BackendSection:
    kind: str = "manifest"
    manifest: str | None = None
    unit: str | None = None  # defaults: CostUnits for manifest, SimSeconds for simulator
    simulator: dict | None = None
    noise: NoiseSection | None = None


@dataclass
class MetricsSection:
    dataset_min_improvement: float = 0.10
    opt_threshold: float = 0.10
    k: int = 8


@dataclass
class RetrievalSection:
    k: int = 2


@dataclass
class SeedsSection:
    split: int = 0
    noise: int = 0


@dataclass
class GenerationSection:
    endpoint: str | None = None
    token_env: str = "PERFEDITS_GEN_TOKEN"
    in_flight: int = 4
    temperature: float = 0.7
    top_p: float = 1.0
    max_tokens: int = 1024
    max_retries: int = 3


@dataclass
class ToolkitConfig:
    version: int = CONFIG_VERSION
    paths: Paths = field(default_factory=Paths)
    compile: CompileSection = field(default_factory=CompileSection)
    limits: LimitsSection = field(default_factory=LimitsSection)
    backend: BackendSection = field(default_factory=BackendSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    retrieval: RetrievalSection = field(default_factory=RetrievalSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    generation: GenerationSection = field(default_factory=GenerationSection)
    jobs: int = 1
    base_dir: Path = field(default_factory=Path.cwd, repr=False, compare=False)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def compile_config(self) -> CompileConfig:
        c = self.compile
        return CompileConfig(c.compiler_command, tuple(c.flags), c.timeout_s, c.source_suffix)

    def harness_limits(self) -> Limits:
        lim = self.limits
        return Limits(lim.wall_timeout_s, lim.memory_bytes, lim.stdout_cap_bytes, lim.isolate_network)

    def make_backend(self) -> PerfBackend:
        b = self.backend
        if b.kind == "manifest":
            if b.manifest is None:
                raise ConfigError("backend.manifest is required for the manifest backend")
            return ManifestBackend.from_file(self.resolve(b.manifest), Unit(b.unit or Unit.COST_UNITS))
        if b.kind == "simulator":
            if b.simulator is None:
                raise ConfigError("backend.simulator block is required for the simulator backend")
            try:
                return SimulatorBackend(SimulatorConfig.from_json(b.simulator), Unit(b.unit or Unit.SIM_SECONDS))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"backend.simulator: {exc}") from None
        if b.kind == "wallclock":
            noise = NoiseModel(b.noise.sigma, b.noise.seed) if b.noise is not None else None
            return WallClockBackend(noise)
        raise ConfigError(f"unknown backend kind {b.kind!r}")


def _build(cls, data: Any, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name != "base_dir"}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {where + '.' if where else ''}{key}")
        ftype = fields[key].type
        nested = _SECTIONS.get(ftype) if isinstance(ftype, str) else None
        if nested is not None and value is not None:
            value = _build(nested, value, f"{where}.{key}" if where else key)
        kwargs[key] = value
    return cls(**kwargs)


_SECTIONS = {
    "Paths": Paths,
    "CompileSection": CompileSection,
    "LimitsSection": LimitsSection,
    "BackendSection": BackendSection,
    "NoiseSection | None": NoiseSection,
    "MetricsSection": MetricsSection,
    "RetrievalSection": RetrievalSection,
    "SeedsSection": SeedsSection,
    "GenerationSection": GenerationSection,
}


def config_from_dict(data: Mapping, base_dir: str | os.PathLike | None = None) -> ToolkitConfig:
    """Validate and build a config; unknown keys are rejected by name."""
    version = data.get("version", CONFIG_VERSION) if isinstance(data, Mapping) else None
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    cfg = _build(ToolkitConfig, data, "")
    cfg.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if cfg.retrieval.k < 1 or cfg.metrics.k < 1:
        raise ConfigError("k values must be >= 1")
    try:
        cfg.compile_config()
        cfg.harness_limits()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path: str | os.PathLike | None) -> ToolkitConfig:
    if path is None:
        return ToolkitConfig()
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, path.parent)
