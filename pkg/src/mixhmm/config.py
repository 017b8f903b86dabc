"""Pipeline configuration: YAML in, validated frozen dataclasses out."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass

import yaml

from .continuum import SetupError, SimConfig
from .md.engine import ETA_AR_CH4, XI_AR_CH4, LjSpecies, combine_lj
from .md.riemann import DATASET_PARAMS, MdParams
from .surrogate import TrainConfig

STAGES = ("md-riemann", "dataset", "train", "simulate")


class ConfigError(ValueError):
    exit_code = 2

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path or '<root>'}: {msg}")
        self.key_path = path


@dataclass(frozen=True)
class SpeciesConfig:
    name: str
    sigma: float  # Angstrom
    epsilon: float  # K
    mass: float  # u


@dataclass(frozen=True)
class LjConfig:
    argon: SpeciesConfig = SpeciesConfig("Ar", 3.3967, 117.05, 39.948)
    methane: SpeciesConfig = SpeciesConfig("CH4", 3.7275, 148.99, 16.043)
    eta: float = ETA_AR_CH4
    xi: float = XI_AR_CH4

    def table(self, r_cutoff: float):
        sp = [LjSpecies(s.name, s.sigma, s.epsilon, s.mass) for s in (self.argon, self.methane)]
        return combine_lj(sp[0], sp[1], self.eta, self.xi, r_cutoff)


@dataclass(frozen=True)
class PathsConfig:
    dataset: str = ""
    model: str = ""
    out: str = "out"


@dataclass(frozen=True)
class RiemannConfig:
    """Rotated liquid and vapour states ``(rho0, rho1, m0, m1)`` [SI]."""

    u_minus: tuple[float, float, float, float] = (1200.0, 100.0, 0.0, 0.0)
    u_plus: tuple[float, float, float, float] = (10.0, 20.0, 0.0, 0.0)


@dataclass(frozen=True)
class DatasetConfig:
    n_samples: int = 200
    jobs: int = 1
    md: MdParams = DATASET_PARAMS

    def __post_init__(self):
        if self.n_samples < 1 or self.jobs < 1:
            raise ValueError("n_samples and jobs must be at least 1")


@dataclass(frozen=True)
class SimulateConfig:
    sim: SimConfig = SimConfig()
    initial: str = "example1"  # example1 | example2 | custom
    u_liquid: tuple[float, float, float, float] = (1200.0, 100.0, 0.0, 0.0)
    u_vapor: tuple[float, float, float, float] = (10.0, 20.0, 0.0, 0.0)

    def __post_init__(self):
        if self.initial not in ("example1", "example2", "custom"):
            raise ValueError(f"unknown initial data {self.initial!r}")


@dataclass(frozen=True)
class PipelineConfig:
    stage: str = "md-riemann"
    seed: int = 0
    paths: PathsConfig = PathsConfig()
    lj: LjConfig = LjConfig()
    md: MdParams = MdParams()
    riemann: RiemannConfig = RiemannConfig()
    dataset: DatasetConfig = DatasetConfig()
    train: TrainConfig = TrainConfig()
    simulate: SimulateConfig = SimulateConfig()

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}; expected one of {', '.join(STAGES)}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def hash(self) -> str:
        text = json.dumps(emit(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# generic (de)serialization


def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{k}]") for k, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{k}]") for k, (v, a) in enumerate(zip(value, args)))
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    raise ConfigError(path, f"unsupported field type {tp!r}")


def build(cls, data, path: str = ""):
    """Instantiate dataclass ``cls`` from a mapping, over its defaults."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown key")
    default = _default_instance(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if not f.init:
            continue
        sub = f"{path}.{f.name}" if path else f.name
        if f.name in data:
            tp = hints[f.name]
            if dataclasses.is_dataclass(tp):
                base = getattr(default, f.name) if default is not None else None
                kwargs[f.name] = _merge(tp, base, data[f.name], sub)
            else:
                kwargs[f.name] = _coerce(data[f.name], tp, sub)
    try:
        if default is not None:
            return dataclasses.replace(default, **kwargs)
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError, SetupError) as err:
        raise ConfigError(path, str(err)) from err


def _merge(tp, base, data, path):
    if base is None:
        return build(tp, data, path)
    if data is None:
        return base
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    merged = {**emit(base), **data}
    return build(tp, merged, path)


def _default_instance(cls):
    try:
        return cls()
    except TypeError:
        return None


def emit(obj) -> dict:
    """Plain-data form of a config dataclass (tuples become lists)."""

    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v) if f.init}
        if isinstance(v, (tuple, list)):
            return [conv(x) for x in v]
        return v

    return conv(obj)


def parse_config(path=None, text: str | None = None) -> PipelineConfig:
    """Validated configuration from a YAML file (or string); empty means all defaults."""
    if text is None:
        if path is None:
            return PipelineConfig()
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as err:
            raise ConfigError("", f"cannot read {path}: {err}") from err
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError("", f"invalid YAML: {err}") from err
    return build(PipelineConfig, data or {})


def dump_config(config: PipelineConfig) -> str:
    return yaml.safe_dump(emit(config), sort_keys=False)


def with_changes(config: PipelineConfig, **changes) -> PipelineConfig:
    """Apply dotted-path overrides such as ``{"paths.out": "x"}`` with validation."""
    data = emit(config)
    for key, value in changes.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
    return build(PipelineConfig, data)

