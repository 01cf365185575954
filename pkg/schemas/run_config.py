"""Run configuration: one YAML (or JSON) file describes one reproducible run.

Example::

    system:
      name: damped_oscillator
      params: {nu: 0.5}
    ensemble: {n_paths: 2000, T: 10.0, dt: 0.001, master_seed: 7}
    scheme: stratonovich_heun
    checks:
      - {name: strong_conservation, observable: energy, tolerance: 0.005}
      - {name: moment_ode}
    sweep: {parameter: dt, values: [0.004, 0.002, 0.001]}
    output: {directory: out, trajectories: true}
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from core.exceptions import ConfigurationError
from stochham.integrators import Scheme
from stochham.systems import CATALOG

CheckName = Literal[
    "strong_conservation",
    "weak_conservation",
    "involution",
    "bracket_increment",
    "symplectic",
    "dirichlet",
    "lyapunov",
    "exceedance",
    "moment_ode",
    "closed_form",
    "noether",
]

ENSEMBLE_SWEEPS = ("dt", "n_paths")


class SystemConfig(BaseModel):
    """Catalog system and parameter overrides."""

    name: str
    params: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _known_system(self) -> "SystemConfig":
        if self.name not in CATALOG:
            raise ValueError(f"unknown system '{self.name}'; known systems: {', '.join(CATALOG)}")
        CATALOG[self.name].resolve(self.params)
        return self


class EnsembleConfig(BaseModel):
    n_paths: int = Field(100, ge=1)
    T: float = Field(1.0, gt=0)
    dt: float = Field(1e-3, gt=0)
    master_seed: int = Field(0, ge=0, lt=2 ** 64)
    initial: Optional[List[float]] = None
    record_stride: int = Field(1, ge=1)


class CheckConfig(BaseModel):
    """One named diagnostic; unset fields take the check's defaults."""

    name: CheckName
    observable: Optional[str] = None
    tolerance: Optional[float] = Field(None, ge=0)
    times: List[float] = Field(default_factory=list)
    exit_radius: Optional[float] = Field(None, gt=0)
    level: Optional[float] = Field(None, gt=0)
    horizon: Optional[float] = Field(None, gt=0)
    point: Optional[List[float]] = None
    probes: List[List[float]] = Field(default_factory=list)
    min_order: Optional[float] = None


class SweepConfig(BaseModel):
    parameter: str
    values: List[float] = Field(min_length=1)


class OutputConfig(BaseModel):
    directory: str = "stochham_out"
    trajectories: bool = True
    trajectory_cap: Optional[int] = Field(None, ge=0)


class RunConfig(BaseModel):
    """A complete run: system, ensemble, integrator, checks, sweep and outputs."""

    system: SystemConfig
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    scheme: str = Scheme.STRATONOVICH_HEUN.value
    checkpoints: int = Field(20, ge=1)
    observables: List[str] = Field(default_factory=list)
    checks: List[CheckConfig] = Field(default_factory=list)
    sweep: Optional[SweepConfig] = None
    output: OutputConfig = Field(default_factory=OutputConfig)

    @field_validator("scheme")
    @classmethod
    def _known_scheme(cls, value: str) -> str:
        valid = [s.value for s in Scheme]
        if value not in valid:
            raise ValueError(f"unknown scheme '{value}'; valid schemes: {', '.join(valid)}")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        entry = CATALOG[self.system.name]
        if self.sweep is not None:
            known = set(ENSEMBLE_SWEEPS) | {p.name for p in entry.params}
            if self.sweep.parameter not in known:
                raise ValueError(
                    f"cannot sweep '{self.sweep.parameter}'; choose one of {', '.join(sorted(known))}"
                )
            if self.sweep.parameter == "dt" and min(self.sweep.values) <= 0:
                raise ValueError("swept dt values must be positive")
            if self.sweep.parameter == "n_paths" and any(
                v < 1 or v != int(v) for v in self.sweep.values
            ):
                raise ValueError("swept n_paths values must be positive integers")
            if self.sweep.parameter not in ENSEMBLE_SWEEPS:
                for value in self.sweep.values:
                    entry.resolve({**self.system.params, self.sweep.parameter: value})
        return self

    def with_overrides(self, seed: Optional[int] = None, paths: Optional[int] = None,
                       dt: Optional[float] = None, out: Optional[str] = None) -> "RunConfig":
        """Re-validated copy with command-line overrides applied."""
        data = self.model_dump()
        if seed is not None:
            data["ensemble"]["master_seed"] = seed
        if paths is not None:
            data["ensemble"]["n_paths"] = paths
        if dt is not None:
            data["ensemble"]["dt"] = dt
        if out is not None:
            data["output"]["directory"] = out
        return parse_run_config(data)


def parse_run_config(data: Any) -> RunConfig:
    """Validate a decoded configuration mapping."""
    if not isinstance(data, dict):
        raise ConfigurationError("run configuration must be a mapping at the top level")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid run configuration:\n{exc}") from exc


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a YAML or JSON run configuration."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigurationError(f"cannot read run configuration {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse run configuration {path}: {exc}") from exc
    return parse_run_config(data)
