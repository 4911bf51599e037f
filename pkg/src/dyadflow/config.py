"""INI configuration: one section per component, keys named after dataclass fields.

Example::

    [model]
    n_steps = 16
    cond_dim = 512

    [train]
    initial_lr = 1e-5
    sequence_length = 80

Missing keys keep their defaults; unknown keys are an error.
"""
import configparser
from dataclasses import dataclass, field, fields

from .features.dataset import SyntheticConfig
from .model import GenerationConfig, ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "synthetic": SyntheticConfig,
            "generate": GenerationConfig}


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    generate: GenerationConfig = field(default_factory=GenerationConfig)


def _convert(raw, default, key):
    try:
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _build(cls, section, values):
    defaults = {f.name: f.default for f in fields(cls)}
    kw = {}
    for key, raw in values.items():
        if key not in defaults:
            raise ConfigError(f"unknown key [{section}] {key}")
        kw[key] = _convert(raw, defaults[key], f"[{section}] {key}")
    try:
        obj = cls(**kw)
    except ValueError as e:
        raise ConfigError(f"[{section}]: {e}") from None
    if hasattr(obj, "validate"):
        obj.validate()
    return obj


def parse_config(text):
    cp = configparser.ConfigParser()
    cp.read_string(text)
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    built = {name: _build(cls, name, dict(cp[name]) if cp.has_section(name) else {})
             for name, cls in SECTIONS.items()}
    return Config(**built)


def load_config(path=None):
    if path is None:
        return Config()
    with open(path) as f:
        return parse_config(f.read())


def format_config(config):
    cp = configparser.ConfigParser()
    for name in SECTIONS:
        obj = getattr(config, name)
        cp[name] = {f.name: str(getattr(obj, f.name)) for f in fields(obj)}
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in cp[name].items())
        lines.append("")
    return "\n".join(lines)
