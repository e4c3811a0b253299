"""
Configuration objects for the simulation toolkit and the benchmark harness.

Experiment files are YAML documents (plain JSON is accepted too, since JSON is
a subset of YAML). The top level holds the harness settings, the ``base`` block
holds the system parameters and the optional ``solver`` block tunes S-MJCE.
"""

from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.utils.errors import ConfigError

ESTIMATORS = ("ls", "binary", "smv", "s-smv", "mmv", "s-mmv", "s-mjce", "s-genie-ls")
SWEEP_AXES = ("B", "P_dB", "N_f", "lambda_d")


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


class SystemConfig(BaseModel):
    """System dimensions, power levels and the sparse-recovery constants."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    M: int = Field(ge=1, description="BS antennas")
    L: int = Field(ge=1, description="RIS elements")
    K: int = Field(ge=1, description="users")
    T: int = Field(ge=1, description="pilot length in symbols")
    B: int = Field(ge=1, description="sub-frames")
    P: float = Field(gt=0, description="per-user transmit power, linear")
    noise_var: float = Field(default=1.0, gt=0)
    G_r: int = Field(ge=1)
    G_t: int = Field(ge=1)
    N_f: int = Field(ge=1)
    N_h: int = Field(default=1, ge=1)
    varsigma: float = Field(default=1e-9, gt=0)
    d: float = Field(default=0.1, gt=0)
    seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _power_in_db(cls, data: Any) -> Any:
        # config files usually give the power in dB relative to the noise
        if isinstance(data, dict) and "P_dB" in data:
            data = dict(data)
            p_db = data.pop("P_dB")
            if "P" in data:
                raise ValueError("give either P or P_dB, not both")
            data["P"] = db_to_linear(float(p_db))
        return data

    @model_validator(mode="after")
    def _check_dimensions(self) -> "SystemConfig":
        if self.T < self.K:
            raise ValueError(f"pilot length T={self.T} must be at least K={self.K}")
        if self.G_r < self.L:
            raise ValueError(f"AoA grid G_r={self.G_r} must be at least L={self.L}")
        return self

    def with_sweep(self, axis: str, value: float) -> "SystemConfig":
        """Copy of this configuration with one sweep parameter replaced."""
        if axis == "P_dB":
            update = {"P": db_to_linear(value)}
        elif axis == "lambda_d":
            update = {"d": float(value)}
        elif axis in ("B", "N_f"):
            update = {axis: int(value)}
        else:
            raise ConfigError(f"unknown sweep axis {axis!r}")
        try:
            return SystemConfig.model_validate({**self.model_dump(), **update})
        except ValidationError as e:
            raise ConfigError(f"sweep {axis}={value} gives an invalid system: {e}") from e


class SolverConfig(BaseModel):
    """Iteration limits of S-MJCE and the reflection design sweeps."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    inner_tol: float = Field(default=1e-6, gt=0)
    outer_tol: float = Field(default=1e-5, gt=0)
    max_inner: int = Field(default=30, ge=1)
    max_outer: int = Field(default=50, ge=1)
    n_sweeps: int = Field(default=3, ge=1)
    alpha_init: Literal["s-mmv", "s-smv", "identity"] = "s-mmv"
    # "least-squares" takes the full LS scaling every outer iteration
    alpha_step: Literal["noise-floor", "least-squares"] = "noise-floor"
    verbose: bool = False


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    base: SystemConfig
    sweep_axis: Literal["B", "P_dB", "N_f", "lambda_d"] = "B"
    sweep_values: List[float]
    estimators: List[str] = Field(default_factory=lambda: list(ESTIMATORS))
    trials: int = Field(default=1, ge=1)
    reflection_mode: Literal["random", "optimized"] = "random"
    reflections_file: Optional[str] = None
    seed: int = 0
    nf_override: Optional[int] = Field(default=None, ge=1)
    n_jobs: int = 1
    solver: SolverConfig = Field(default_factory=SolverConfig)

    @field_validator("sweep_values")
    @classmethod
    def _nonempty(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("sweep_values must not be empty")
        return values

    @field_validator("estimators")
    @classmethod
    def _known_estimators(cls, names: List[str]) -> List[str]:
        names = [name.strip().lower() for name in names]
        unknown = sorted(set(names) - set(ESTIMATORS))
        if unknown:
            raise ValueError(f"unknown estimators {unknown}, choose from {list(ESTIMATORS)}")
        if not names:
            raise ValueError("at least one estimator is required")
        # keep the order given by the user, drop repeats
        return list(dict.fromkeys(names))

    def systems(self) -> List[Tuple[float, SystemConfig]]:
        return [(value, self.base.with_sweep(self.sweep_axis, value)) for value in self.sweep_values]


def parse_sweep(text: str) -> Tuple[str, List[float]]:
    """Parse a ``--sweep`` value such as ``B=8,16,24,32``."""
    axis, sep, values = text.partition("=")
    axis = axis.strip()
    if not sep or axis not in SWEEP_AXES:
        raise ConfigError(f"sweep must look like AXIS=v1,v2,... with AXIS in {SWEEP_AXES}, got {text!r}")
    try:
        parsed = [float(v) for v in values.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"sweep values must be numbers: {text!r}") from e
    return axis, parsed


def load_experiment(path: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentSpec:
    """
    Read an experiment file and apply command-line overrides on top of it
    """
    try:
        with open(path, "r") as file:
            raw = yaml.safe_load(file)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e

    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")

    raw.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        return ExperimentSpec.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e
