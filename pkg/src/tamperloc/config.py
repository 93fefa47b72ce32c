"""Run configuration: flat ``section.key = value`` files, presets and seed derivation.

Values use TOML syntax (numbers, quoted strings, booleans, arrays), so a
written effective config is itself a valid config file.
"""
from __future__ import annotations

import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import PAPER_CONFIG, TINY_CONFIG, ModelConfig
from .synth.generate import SynthConfig
from .training import PAPER_TRAIN, TINY_TRAIN, TrainConfig

DATA_ROOT_ENV = "TAMPERLOC_DATA_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    pixel_mode: str = "per_image"
    batch_size: int = 64


@dataclass
class PathsConfig:
    data_root: str = "data"
    out: str = "runs/default"
    sources: str = "builtin"
    manifest: str = ""
    checkpoint: str = ""


@dataclass
class SeedsConfig:
    # -1 means "derive from the global seed"
    data: int = -1
    init: int = -1
    shuffle: int = -1


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = PAPER_CONFIG
    train: TrainConfig = field(default_factory=lambda: dataclasses.replace(PAPER_TRAIN))
    synth: SynthConfig = field(default_factory=SynthConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)

    def resolved(self) -> "RunConfig":
        """Fill derived sub-seeds and push them into the model/train sections."""
        seeds = SeedsConfig(
            data=self.seeds.data if self.seeds.data >= 0 else self.seed,
            init=self.seeds.init if self.seeds.init >= 0 else self.seed + 1,
            shuffle=self.seeds.shuffle if self.seeds.shuffle >= 0 else self.seed + 2,
        )
        return dataclasses.replace(
            self, seeds=seeds,
            model=self.model.with_overrides(seed=seeds.init),
            train=dataclasses.replace(self.train, shuffle_seed=seeds.shuffle),
        )


def preset(tiny: bool = False) -> RunConfig:
    if not tiny:
        return RunConfig()
    return RunConfig(model=TINY_CONFIG, train=dataclasses.replace(TINY_TRAIN),
                     synth=SynthConfig(size=TINY_CONFIG.image_size))


SECTIONS = ("model", "train", "synth", "eval", "paths", "seeds")


def _section_dict(obj) -> dict:
    if isinstance(obj, ModelConfig):
        return obj.to_dict()
    return dataclasses.asdict(obj)


def to_flat(cfg: RunConfig) -> dict:
    flat = {"seed": cfg.seed}
    for section in SECTIONS:
        for key, value in _section_dict(getattr(cfg, section)).items():
            flat[f"{section}.{key}"] = value
    return flat


def _coerce(template, value, key):
    if isinstance(template, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(template, int) and not isinstance(template, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(template, tuple):
        return tuple(value)
    return value


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply flat ``section.key`` overrides; unknown keys are rejected."""
    current = to_flat(cfg)
    unknown = sorted(set(overrides) - set(current))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(current)
    for key, value in overrides.items():
        merged[key] = _coerce(current[key], value, key)
    return from_flat(merged)


def from_flat(flat: dict) -> RunConfig:
    sections = {s: {} for s in SECTIONS}
    for key, value in flat.items():
        if key == "seed":
            continue
        section, _, name = key.partition(".")
        sections[section][name] = value
    try:
        synth = dict(sections["synth"])
        for k in ("noise_sigma", "jpeg_quality", "crop_scale"):
            if k in synth:
                synth[k] = tuple(synth[k])
        return RunConfig(
            seed=int(flat.get("seed", 0)),
            model=ModelConfig.from_dict(sections["model"]),
            train=TrainConfig(**sections["train"]),
            synth=SynthConfig(**synth),
            eval=EvalConfig(**sections["eval"]),
            paths=PathsConfig(**sections["paths"]),
            seeds=SeedsConfig(**sections["seeds"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in d.items():
        name = f"{prefix}{key}"
        # mix is the one dict-valued setting; keep it whole
        if isinstance(value, dict) and name != "synth.mix":
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def parse_config_text(text: str) -> dict:
    try:
        return _flatten(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    return apply_overrides(base, parse_config_text(Path(path).read_text()))


def _format_value(value) -> str:
    if isinstance(value, dict):
        return "{ " + ", ".join(f"{k} = {_format_value(v)}" for k, v in value.items()) + " }"
    if isinstance(value, tuple):
        value = list(value)
    if isinstance(value, list):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return json.dumps(value)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{key} = {_format_value(value)}\n" for key, value in to_flat(cfg).items())


def write_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))
    return path


def data_root(cfg: RunConfig) -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV) or cfg.paths.data_root)
