"""TOML run configuration with validation and canonical serialization."""
from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError
from .forward import SourceSpec
from .geometry import DomainSpec, TimePartition, cfl_time_step, default_domain
from .optimizer import RegularizationSchedule, StoppingCfg

SCHEMA_VERSION = 1


def _positive(name, v):
    if not v > 0:
        raise ConfigurationError(f"{name} must be > 0, got {v!r}")


@dataclass(frozen=True)
class DiscretizationCfg:
    h: float = 0.02
    tau: float | str = 0.002  # "auto": derive from the CFL rule

    def __post_init__(self):
        _positive("discretization.h", self.h)
        if self.tau != "auto":
            _positive("discretization.tau", self.tau)


@dataclass(frozen=True)
class SourceCfg:
    omega: float = 40.0
    amplitude: float = 1.0
    T: float = 2.0

    def __post_init__(self):
        _positive("source.omega", self.omega)
        _positive("source.T", self.T)
        if not math.isfinite(self.amplitude):
            raise ConfigurationError("source.amplitude must be finite")

    def spec(self):
        return SourceSpec(self.omega, self.amplitude)


@dataclass(frozen=True)
class OptimizationCfg:
    gamma0: float = 0.01
    p: float = 0.5
    theta: float = 1e-8
    C: float = 0.7
    alpha_max: float = math.inf
    max_iter: int = 10
    max_levels: int = 4
    max_backtracks: int = 8
    window: int = 3
    band: float = 0.01
    bounds: str = "symmetric"
    gamma_reset_per_level: bool = False
    design_only: bool = True
    cutoff: float = 0.1  # width of the residual cutoff as a fraction of T
    obstacle: bool = True

    def __post_init__(self):
        _positive("optimization.gamma0", self.gamma0)
        if not 0 < self.p < 1:
            raise ConfigurationError(f"optimization.p must lie in (0, 1), got {self.p!r}")
        if not 0 < self.C < 1:
            raise ConfigurationError(f"optimization.C must lie in (0, 1), got {self.C!r}")
        _positive("optimization.theta", self.theta)
        _positive("optimization.alpha_max", self.alpha_max)
        for name in ("max_iter", "max_levels", "max_backtracks"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"optimization.{name} must be >= 0")
        if self.window < 2:
            raise ConfigurationError("optimization.window must be >= 2")
        if not 0 <= self.band < 1:
            raise ConfigurationError("optimization.band must lie in [0, 1)")
        if self.bounds not in ("symmetric", "max"):
            raise ConfigurationError(
                f"optimization.bounds must be 'symmetric' or 'max', got {self.bounds!r}")
        if not 0 <= self.cutoff < 1:
            raise ConfigurationError("optimization.cutoff must lie in [0, 1)")

    def schedule(self):
        return RegularizationSchedule(self.gamma0, self.p)

    def stopping(self):
        return StoppingCfg(self.theta, self.window, self.band, self.max_iter, self.max_levels,
                           self.alpha_max, self.max_backtracks, self.gamma_reset_per_level)


@dataclass(frozen=True)
class DataCfg:
    path: str = ""  # empty: synthesize on the fly
    obstacle: bool = False
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.noise < 1:
            raise ConfigurationError(f"data.noise must lie in [0, 1), got {self.noise!r}")


@dataclass(frozen=True)
class RunCfg:
    guesses: tuple = (1.5,)
    out: str = "out"

    def __post_init__(self):
        if not self.guesses:
            raise ConfigurationError("run.guesses must not be empty")
        for g in self.guesses:
            _positive("run.guesses entry", g)


@dataclass(frozen=True)
class RunConfig:
    geometry: DomainSpec = field(default_factory=default_domain)
    discretization: DiscretizationCfg = field(default_factory=DiscretizationCfg)
    source: SourceCfg = field(default_factory=SourceCfg)
    optimization: OptimizationCfg = field(default_factory=OptimizationCfg)
    data: DataCfg = field(default_factory=DataCfg)
    run: RunCfg = field(default_factory=RunCfg)

    def time_partition(self, mesh=None, eps_min=1.0):
        tau = self.discretization.tau
        if tau == "auto":
            if mesh is None:
                raise ConfigurationError("tau = 'auto' needs a mesh")
            return TimePartition.fitting(self.source.T, cfl_time_step(mesh, eps_min))
        return TimePartition(self.source.T, float(tau))


_SECTIONS = {"discretization": DiscretizationCfg, "source": SourceCfg,
             "optimization": OptimizationCfg, "data": DataCfg, "run": RunCfg}
_GEOMETRY_KEYS = {"outer", "fem", "core", "design"}


def _coerce(cls, section, raw):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"[{section}] must be a table")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigurationError(f"unknown key {section}.{key}")
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigurationError(f"{section}.{key} must be a boolean")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigurationError(f"{section}.{key} must be an integer")
        elif isinstance(default, float) and not (key == "tau" and value == "auto"):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigurationError(f"{section}.{key} must be a number")
            value = float(value)
        elif isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigurationError(f"{section}.{key} must be an array")
            value = tuple(float(v) for v in value)
        kwargs[key] = value
    return cls(**kwargs)


def parse_config(text: str, base_dir=None) -> RunConfig:
    """Parse and validate a TOML document; missing fields take the defaults."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from exc
    schema = doc.pop("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema {schema!r}; expected {SCHEMA_VERSION}")
    kwargs = {}
    if "geometry" in doc:
        geo = doc.pop("geometry")
        unknown = set(geo) - _GEOMETRY_KEYS
        if unknown:
            raise ConfigurationError(f"unknown key geometry.{sorted(unknown)[0]}")
        base = default_domain().to_dict()
        base.update(geo)
        try:
            kwargs["geometry"] = DomainSpec.from_dict(base)
        except (TypeError, KeyError) as exc:
            raise ConfigurationError(f"invalid geometry: {exc}") from exc
    for name, cls in _SECTIONS.items():
        if name in doc:
            kwargs[name] = _coerce(cls, name, doc.pop(name))
    if doc:
        raise ConfigurationError(f"unknown key {sorted(doc)[0]}")
    cfg = RunConfig(**kwargs)
    if cfg.data.path:
        path = Path(cfg.data.path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigurationError(f"data.path {path} does not exist")
        cfg = RunConfig(cfg.geometry, cfg.discretization, cfg.source, cfg.optimization,
                        DataCfg(str(path), cfg.data.obstacle, cfg.data.noise, cfg.data.seed),
                        cfg.run)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"configuration file {path} does not exist")
    return parse_config(path.read_text(), base_dir=path.parent)


def to_document(cfg: RunConfig) -> dict:
    doc = {"schema": SCHEMA_VERSION, "geometry": cfg.geometry.to_dict()}
    for name in _SECTIONS:
        section = asdict(getattr(cfg, name))
        doc[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
    return doc


def serialize_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_document(cfg))
