"""JSON run configuration with flag > environment > file > default precedence."""
import json
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError, DataIOError
from .model import ModelConfig
from .training import TrainConfig

SEED_ENV = "UNFOLD_PANSHARP_SEED"


@dataclass(frozen=True)
class DataConfig:
    samples: int = 20
    counts: tuple = None
    channels: int = 4
    patch: int = 32
    s: int = 4
    sigma: float = 0.0

    def __post_init__(self):
        if self.samples < 6:
            raise ConfigError(f"data.samples must be >= 6, got {self.samples}")
        if self.counts is not None and (len(self.counts) != 3 or min(self.counts) < 1):
            raise ConfigError(f"data.counts must be three positive integers, got {self.counts}")
        if self.sigma < 0:
            raise ConfigError(f"data.sigma must be >= 0, got {self.sigma}")
        if self.patch < 16:
            raise ConfigError(f"data.patch must be >= 16, got {self.patch}")


@dataclass(frozen=True)
class SolveConfig:
    lam: float = 1.0
    beta: float = 0.1
    mu: float = 0.1
    max_iter: int = 1000
    tol: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"solve.lam must be > 0, got {self.lam}")
        if self.beta < 0 or self.mu < 0:
            raise ConfigError(f"solve.beta and solve.mu must be >= 0, got {self.beta}, {self.mu}")
        if self.max_iter < 1:
            raise ConfigError(f"solve.max_iter must be >= 1, got {self.max_iter}")


SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig, "solve": SolveConfig}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    solve: SolveConfig = field(default_factory=SolveConfig)
    seed: int = 0
    sources: dict = field(default_factory=dict, compare=False)


def _build(cls, values, path):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    try:
        if cls is DataConfig and values.get("counts") is not None:
            values = dict(values, counts=tuple(int(c) for c in values["counts"]))
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def read_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataIOError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw


def resolve(file_values=None, flags=None, env=None):
    """Merge defaults, file values, the seed environment variable and explicit flags.

    ``flags`` maps dotted keys (``"model.features"``) to values; ``None`` means unset.
    Returns a RunConfig whose ``sources`` records where every non-default value came from.
    """
    file_values = file_values or {}
    env = os.environ if env is None else env
    unknown = sorted(set(file_values) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"config.{unknown[0]}: unknown key")
    merged = {name: dict(file_values.get(name) or {}) for name in SECTIONS}
    for name in SECTIONS:
        if not isinstance(merged[name], dict):
            raise ConfigError(f"config.{name}: must be an object")
    sources = {f"{sec}.{k}": "file" for sec in SECTIONS for k in merged[sec]}
    seed = file_values.get("seed", 0)
    if "seed" in file_values:
        sources["seed"] = "file"
    if env.get(SEED_ENV) not in (None, ""):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        sources["seed"] = "env"
    for key, val in (flags or {}).items():
        if val is None:
            continue
        if key == "seed":
            seed = val
        else:
            sec, name = key.split(".", 1)
            merged[sec][name] = val
        sources[key] = "flag"
    if not isinstance(seed, int):
        raise ConfigError(f"config.seed must be an integer, got {seed!r}")
    built = {name: _build(cls, merged[name], f"config.{name}") for name, cls in SECTIONS.items()}
    return RunConfig(seed=seed, sources=sources, **built)


def describe(cfg):
    """Startup log lines: every effective setting with its origin."""
    lines = [f"seed={cfg.seed} ({cfg.sources.get('seed', 'default')})"]
    for name in SECTIONS:
        sec = getattr(cfg, name)
        for f in fields(sec):
            key = f"{name}.{f.name}"
            lines.append(f"{key}={getattr(sec, f.name)!r} ({cfg.sources.get(key, 'default')})")
    return lines
