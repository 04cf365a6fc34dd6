import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from rich.logging import RichHandler

from errors import ConfigError

load_dotenv()

VERSION = "0.1.0"
ENV_OVERRIDE_PREFIX = "LEVY_FDT__"


class Config:
    # Logging
    LOG_LEVEL = os.getenv("LEVY_FDT_LOG_LEVEL", "INFO")

    # Parallel ensembles
    THREADS = int(os.getenv("LEVY_FDT_THREADS", 1))
    BLOCK_SIZE = int(os.getenv("LEVY_FDT_BLOCK_SIZE", 512))

    # Reproducibility
    DEFAULT_SEED = int(os.getenv("LEVY_FDT_SEED", 20240601))

    # Output
    OUTPUT_DIR = os.getenv("LEVY_FDT_OUTPUT_DIR", "output")

    VERSION = VERSION


_LOGGER_ROOT = "levy_fdt"


def get_logger(name: str) -> logging.Logger:
    """Module logger under the package root; the rich handler is attached once."""
    root = logging.getLogger(_LOGGER_ROOT)
    if not root.handlers:
        handler = RichHandler(show_path=False, markup=False)
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
        root.setLevel(Config.LOG_LEVEL)
    return logging.getLogger(f"{_LOGGER_ROOT}.{name}")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    name: Literal["stable-ou", "tanh-well", "custom"] = "tanh-well"
    alpha: float = Field(1.5, gt=1.0, lt=2.0)
    rate: float = 1.0
    strength: float = 2.0
    scale: float = 1.0
    # custom models: one drift expression per coordinate, scalar diffusion
    drift: Optional[Union[str, List[str]]] = None
    diffusion: Optional[str] = None
    constants: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _custom_needs_drift(self):
        if self.name == "custom" and self.drift is None:
            raise ValueError("custom model requires a drift expression")
        return self


class GridSection(_Section):
    half_width: float = Field(32.0, gt=0.0)
    n_points: int = 2048
    # Monte Carlo states wrap onto [-L, L) so both routes describe the same process
    periodic_dynamics: bool = True

    @field_validator("n_points")
    @classmethod
    def _power_of_two(cls, value):
        if value < 64 or value & (value - 1):
            raise ValueError("n_points must be a power of two >= 64")
        return value


class IntegratorSection(_Section):
    dt: float = Field(1e-3, gt=0.0)
    t_max: float = Field(10.0, gt=0.0)
    save_every: float = Field(0.1, gt=0.0)
    burn_in: float = Field(20.0, gt=0.0)
    thinning: float = Field(1.0, gt=0.0)
    n_chains: int = Field(1000, ge=1)


class EnsembleSection(_Section):
    n_traj: int = Field(200_000, ge=2)
    master_seed: int = Field(default_factory=lambda: Config.DEFAULT_SEED)
    threads: int = Field(default_factory=lambda: Config.THREADS, ge=1)
    initial: Literal["point", "steady-state"] = "point"
    x0: float = 0.0
    n_paths: int = Field(0, ge=0)


class PerturbationSection(_Section):
    field: Literal["lorentzian", "constant", "zero"] = "lorentzian"
    field_scale: float = 1.0
    profile: Literal["step", "impulse"] = "step"
    impulse_center: float = 0.5
    impulse_width: float = Field(0.05, gt=0.0)
    epsilons: List[float] = Field(default_factory=lambda: [0.1, 0.05])

    @field_validator("epsilons")
    @classmethod
    def _decreasing_positive(cls, value):
        if not value or any(e <= 0 for e in value):
            raise ValueError("epsilons must be positive")
        if any(a <= b for a, b in zip(value, value[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        return value


OBSERVABLE_NAMES = ("tanh", "x", "rational", "bump", "one", "moment")


class ResponseSection(_Section):
    t_max: float = Field(5.0, gt=0.0)
    dt_sample: float = Field(0.1, gt=0.0)
    smoothing_window: int = Field(5, ge=3)
    compare_from: float = Field(0.2, ge=0.0)
    n_batches: int = Field(20, ge=2)

    @field_validator("smoothing_window")
    @classmethod
    def _odd(cls, value):
        if value % 2 == 0:
            raise ValueError("smoothing_window must be odd")
        return value


class SolverSection(_Section):
    dt: float = Field(1e-3, gt=0.0)
    method: Literal["exponential-splitting", "explicit-RK"] = "exponential-splitting"
    stop_tol: float = Field(1e-8, gt=0.0)
    max_time: float = Field(50.0, gt=0.0)


class ToleranceSection(_Section):
    mc_sigma: float = 3.0
    mc_pde_abs: float = 2e-2
    direct_pde_abs: float = 3e-2
    max_boundary_mass: float = 5e-3
    compatibility: float = 1e-8
    conjugate_residual: float = 1e-6
    flagged_warn: float = 0.01
    flagged_fail: float = 0.10


class OutputSection(_Section):
    directory: str = Field(default_factory=lambda: Config.OUTPUT_DIR)
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class ScenarioConfig(_Section):
    model: ModelSection = Field(default_factory=ModelSection)
    grid: GridSection = Field(default_factory=GridSection)
    integrator: IntegratorSection = Field(default_factory=IntegratorSection)
    ensemble: EnsembleSection = Field(default_factory=EnsembleSection)
    perturbation: PerturbationSection = Field(default_factory=PerturbationSection)
    observables: List[str] = Field(default_factory=lambda: ["tanh"])
    response: ResponseSection = Field(default_factory=ResponseSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    tolerances: ToleranceSection = Field(default_factory=ToleranceSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @field_validator("model", mode="before")
    @classmethod
    def _model_shorthand(cls, value):
        if isinstance(value, str):
            return {"name": value}
        return value

    @field_validator("observables")
    @classmethod
    def _known_observables(cls, value):
        unknown = [name for name in value if name not in OBSERVABLE_NAMES]
        if unknown:
            raise ValueError(f"unknown observables {unknown}; valid: {list(OBSERVABLE_NAMES)}")
        if not value:
            raise ValueError("at least one observable is required")
        return value

    def canonical_json(self) -> str:
        """Canonical form used for the provenance hash (worker count and output location excluded)."""
        data = self.model_dump(mode="json")
        data["ensemble"].pop("threads", None)
        data.pop("output", None)
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def with_overrides(
        self,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        output: Optional[str] = None,
        trajectories: Optional[int] = None,
    ) -> "ScenarioConfig":
        data = self.model_dump()
        if trajectories is not None:
            data["ensemble"]["n_paths"] = trajectories
        if seed is not None:
            data["ensemble"]["master_seed"] = seed
        if threads is not None:
            data["ensemble"]["threads"] = threads
        if output is not None:
            data["output"]["directory"] = output
        return ScenarioConfig.model_validate(data)


def env_overrides(environ: Mapping[str, str]) -> Dict[str, Any]:
    """Nested dict from LEVY_FDT__SECTION__FIELD variables; values parsed as JSON when possible."""
    overrides: Dict[str, Any] = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_OVERRIDE_PREFIX):
            continue
        path = [part.lower() for part in key[len(ENV_OVERRIDE_PREFIX):].split("__") if part]
        if not path:
            continue
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        node = overrides
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"environment override {key} conflicts with a scalar value")
        node[path[-1]] = value
    return overrides


def _deep_merge(base: Dict[str, Any], top: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in top.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Union[str, Path]] = None, environ: Optional[Mapping[str, str]] = None) -> ScenarioConfig:
    """Read a JSON scenario file, layer it over environment overrides and validate."""
    environ = os.environ if environ is None else environ
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")

    merged = _deep_merge(env_overrides(environ), data)
    try:
        return ScenarioConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration{f' in {path}' if path else ''}:\n{e}")
