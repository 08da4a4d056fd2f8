"""Layered pipeline configuration: defaults < JSON file < environment.

Environment overrides use ``AUTV_<SECTION>__<FIELD>`` (two underscores
between section and field), e.g. ``AUTV_CHAIN__NUM_FRAMES=10``. Values are
parsed as JSON where possible and taken as strings otherwise. Unknown
sections or fields are errors, not silent no-ops: a typo in a config file
should fail the run, not quietly configure nothing.

``config_hash`` digests the fully resolved configuration, so any two runs
reporting the same hash were configured identically regardless of where
each value came from.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .chain import ChainConfig
from .curation import CurationThresholds
from .errors import ConfigError

__all__ = [
    "ScheduleSection",
    "GenerationSection",
    "BackendSection",
    "MetricsSection",
    "PipelineConfig",
    "load_config",
    "config_hash",
    "ENV_PREFIX",
]

ENV_PREFIX = "AUTV_"


@dataclass(frozen=True)
class ScheduleSection:
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    kind: str = "linear"


@dataclass(frozen=True)
class GenerationSection:
    frame_height: int = 32
    frame_width: int = 32
    num_inference_steps: int = 50
    guidance_scale: float = 1.0
    alignment_threshold: float = 0.2
    max_retries: int = 3
    fps: float = 8.0

    def __post_init__(self):
        if self.frame_height < 8 or self.frame_width < 8:
            raise ConfigError("frames below 8x8 leave no room for objects")
        if self.max_retries < 1:
            raise ConfigError(f"max_retries must be >= 1, got {self.max_retries}")

    @property
    def frame_shape(self) -> tuple:
        return (self.frame_height, self.frame_width)


@dataclass(frozen=True)
class BackendSection:
    hidden_channels: int = 12
    max_instances: int = 4
    prompt_dim: int = 64
    train_steps: int = 5000
    batch_size: int = 8
    learning_rate: float = 3e-3
    train_frame_size: int = 32
    latent_gain_budget: float = 7e-4

    def __post_init__(self):
        if self.train_steps < 1 or self.batch_size < 1:
            raise ConfigError("training needs positive step and batch counts")
        if self.latent_gain_budget <= 0.0:
            raise ConfigError("latent_gain_budget must be > 0")


@dataclass(frozen=True)
class MetricsSection:
    clip_len: int = 8
    clip_count: int = 128
    frame_grid: int = 4
    hist_bins: int = 8
    clip_grid: int = 4
    audit_frames: tuple = (2, 6)

    def __post_init__(self):
        object.__setattr__(self, "audit_frames", tuple(int(f) for f in self.audit_frames))
        if self.clip_len < 2:
            raise ConfigError(f"clip_len must be >= 2, got {self.clip_len}")


@dataclass(frozen=True)
class PipelineConfig:
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    chain: ChainConfig = field(default_factory=ChainConfig)
    curation: CurationThresholds = field(default_factory=CurationThresholds)
    generation: GenerationSection = field(default_factory=GenerationSection)
    backend: BackendSection = field(default_factory=BackendSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


_SECTION_TYPES = {
    "schedule": ScheduleSection,
    "chain": ChainConfig,
    "curation": CurationThresholds,
    "generation": GenerationSection,
    "backend": BackendSection,
    "metrics": MetricsSection,
}


def _build_section(name: str, cls, values: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown fields in [{name}]: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad [{name}] section: {exc}") from exc


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _env_overrides(env) -> dict:
    layered: dict = {}
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        body = key[len(ENV_PREFIX) :].lower()
        if "__" in body:
            section, field_name = body.split("__", 1)
            if section not in _SECTION_TYPES:
                raise ConfigError(f"{key}: unknown config section {section!r}")
            layered.setdefault(section, {})[field_name] = _coerce(raw)
        elif body == "seed":
            layered["seed"] = _coerce(raw)
        else:
            raise ConfigError(
                f"{key}: expected {ENV_PREFIX}SEED or {ENV_PREFIX}<SECTION>__<FIELD>"
            )
    return layered


def _merge(base: dict, extra: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key].update(value)
        else:
            out[key] = value
    return out


def load_config(path=None, env=None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Resolve a config from defaults, an optional JSON file, and overrides.

    Precedence, lowest to highest: dataclass defaults, the file at ``path``,
    ``AUTV_*`` environment variables, then the explicit ``overrides`` dict.
    """
    layers: dict = {}
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        layers = _merge(layers, doc)
    layers = _merge(layers, _env_overrides(os.environ if env is None else env))
    if overrides:
        layers = _merge(layers, overrides)

    unknown = set(layers) - set(_SECTION_TYPES) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTION_TYPES.items():
        section_values = layers.get(name, {})
        if not isinstance(section_values, dict):
            raise ConfigError(f"[{name}] must be an object, got {type(section_values).__name__}")
        kwargs[name] = _build_section(name, cls, section_values)
    seed = layers.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return PipelineConfig(seed=seed, **kwargs)


def config_hash(cfg: PipelineConfig) -> str:
    """Stable short digest of the fully resolved configuration."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
