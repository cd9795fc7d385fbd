"""
Experiment configuration: flat key=value files with dotted section keys, validated by pydantic.
Environment overrides come from .env via python-dotenv.
"""
from pathlib import Path
from typing import Dict, Any, List, Optional, Union
import hashlib
import json
import logging
import os

from dotenv import load_dotenv, dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.exceptions import ConfigurationError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

load_dotenv()

OUTPUT_ROOT_ENV = 'ALLEN_CAHN_OUTPUT_ROOT'
DATABASE_URL_ENV = 'ALLEN_CAHN_DATABASE_URL'
DEFAULT_DATABASE_URL = 'sqlite:///./allen_cahn_runs.db'


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class PotentialConfig(_Section):
    kind: str = 'quartic'
    zeros: Optional[List[Union[float, List[float]]]] = None
    coefficients: Optional[List[float]] = None
    validation_samples: int = Field(10_000, ge=16)

    @field_validator('kind')
    @classmethod
    def known_kind(cls, v):
        if v not in ('quartic', 'product_wells', 'custom_polynomial'):
            raise ValueError(f"unknown potential kind {v}")
        return v


class DampingConfig(_Section):
    kind: str = 'identity'
    tau_relaxation: Optional[float] = Field(None, gt=0.0)
    matrix: Optional[List[List[float]]] = None
    coefficient: Optional[float] = Field(None, gt=0.0)
    certify_lo: Optional[List[float]] = None
    certify_hi: Optional[List[float]] = None
    certify_samples: int = Field(4096, ge=16)

    @field_validator('kind')
    @classmethod
    def known_kind(cls, v):
        if v not in ('identity', 'scalar_function', 'constant_matrix', 'relaxation'):
            raise ValueError(f"unknown damping kind {v}")
        return v


class SystemConfig(_Section):
    tau: float = Field(1.0, gt=0.0)


class GridConfig(_Section):
    a: float = 0.0
    b: float = 1.0

    @model_validator(mode='after')
    def ordered(self):
        if not self.b > self.a:
            raise ValueError(f"grid.b={self.b} must exceed grid.a={self.a}")
        return self


class SolverConfig(_Section):
    # sweeps check energy monotonicity only under discrete_gradient; verlet steps may raise E by O(dt^2)
    scheme: str = 'discrete_gradient'
    dx_over_eps: float = Field(0.05, gt=0.0, le=0.1)
    cfl: float = Field(0.5, gt=0.0)
    dt: Optional[float] = Field(None, gt=0.0)
    t_end: Optional[float] = Field(None, ge=0.0)
    t_max: float = Field(1e4, gt=0.0)
    snapshot_stride: Optional[int] = Field(None, ge=1)
    ledger_stride: int = Field(1, ge=1)
    wall_seconds: float = Field(600.0, gt=0.0)

    @field_validator('scheme')
    @classmethod
    def known_scheme(cls, v):
        if v not in ('discrete_gradient', 'verlet'):
            raise ValueError(f"unknown scheme {v}")
        return v


class LayerConfig(_Section):
    jumps: str = ''
    constant: int = 0
    r: float = Field(0.1, gt=0.0)
    eps: List[float] = Field(default_factory=lambda: [0.05])
    construction: str = 'balls'
    centering: str = 'midpoint'

    @field_validator('eps')
    @classmethod
    def strictly_decreasing(cls, v):
        if not v:
            raise ValueError("layer.eps must list at least one value")
        if any(e <= 0.0 for e in v):
            raise ValueError("layer.eps values must be positive")
        if any(b >= a for a, b in zip(v[:-1], v[1:])):
            raise ValueError("layer.eps must be strictly decreasing")
        return v

    @field_validator('construction')
    @classmethod
    def known_construction(cls, v):
        if v not in ('balls', 'midpoint'):
            raise ValueError(f"unknown construction {v}")
        return v

    @field_validator('centering')
    @classmethod
    def known_centering(cls, v):
        if v not in ('midpoint', 'origin'):
            raise ValueError(f"unknown centering {v}")
        return v

    @model_validator(mode='after')
    def eps_below_r(self):
        if max(self.eps) >= self.r:
            raise ValueError(f"every eps must be below r={self.r}")
        return self


class VelocityConfig(_Section):
    kind: str = 'zero'
    A_target: float = Field(1.0, gt=0.0)
    C_target: float = Field(1.0, gt=0.0)
    seed: int = 42

    @field_validator('kind')
    @classmethod
    def known_kind(cls, v):
        if v not in ('zero', 'scaled_noise'):
            raise ValueError(f"unknown velocity kind {v}")
        return v


class InterfaceConfig(_Section):
    delta1: float = Field(0.05, gt=0.0)
    rho_d: float = Field(0.5, gt=0.0)


class ExperimentSection(_Section):
    name: str = 'experiment'
    horizon_multiplier: float = Field(1.0, gt=0.0)
    output_dir: str = 'results'
    budget_window: List[float] = Field(default_factory=lambda: [1.0, 50.0])
    rho_d_sweep: List[float] = Field(default_factory=lambda: [0.3, 0.5, 0.7])
    tau_sweep: List[float] = Field(default_factory=list)
    max_workers: Optional[int] = Field(None, ge=1)
    stop_on_exit: bool = True

    @field_validator('budget_window')
    @classmethod
    def window(cls, v):
        if len(v) != 2 or not 0.0 <= v[0] < v[1]:
            raise ValueError("experiment.budget_window must be [t0, t1] with 0 <= t0 < t1")
        return v


class ExperimentConfig(_Section):
    potential: PotentialConfig = Field(default_factory=PotentialConfig)
    damping: DampingConfig = Field(default_factory=DampingConfig)
    system: SystemConfig = Field(default_factory=SystemConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    layer: LayerConfig = Field(default_factory=LayerConfig)
    velocity: VelocityConfig = Field(default_factory=VelocityConfig)
    interface: InterfaceConfig = Field(default_factory=InterfaceConfig)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)

    @model_validator(mode='after')
    def delta1_below_r(self):
        if self.interface.delta1 >= self.layer.r:
            raise ValueError(f"interface.delta1={self.interface.delta1} must be below layer.r={self.layer.r}")
        return self

    @property
    def output_root(self) -> Path:
        return Path(os.getenv(OUTPUT_ROOT_ENV, self.experiment.output_dir))

    @property
    def database_url(self) -> str:
        return os.getenv(DATABASE_URL_ENV, DEFAULT_DATABASE_URL)


def _decode(value: Optional[str]) -> Any:
    if value is None:
        return None
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def nest_keys(flat: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    """{'potential.kind': 'quartic'} -> {'potential': {'kind': 'quartic'}}"""
    nested: Dict[str, Dict[str, Any]] = {}
    for key, value in flat.items():
        section, dot, name = key.partition('.')
        if not dot or not name or '.' in name:
            raise ConfigurationError(f"Config key '{key}' is not of the form section.name")
        nested.setdefault(section, {})[name] = _decode(value) if isinstance(value, str) or value is None else value
    return nested


def config_from_mapping(flat: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(nest_keys(flat))
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read a key=value experiment file.

    Args:
        path: config file path

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigurationError: unreadable file, malformed key or invalid values
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    config = config_from_mapping(dict(dotenv_values(path)))
    logger.info(f"Loaded config {path} ({config.experiment.name}, hash {config_hash(config)[:12]})")
    return config


def canonical_json(config: ExperimentConfig) -> str:
    return json.dumps(config.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON dump"""
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def to_flat_text(config: ExperimentConfig) -> str:
    """Render a config back to key=value lines (JSON values)"""
    lines = []
    for section, values in config.model_dump(mode='json').items():
        for name, value in values.items():
            if value is None:
                continue
            text = value if isinstance(value, str) else json.dumps(value)
            lines.append(f"{section}.{name}={text}")
    return '\n'.join(lines) + '\n'
