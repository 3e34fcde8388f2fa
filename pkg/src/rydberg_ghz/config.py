"""Run configuration: JSON files validated into :class:`RunConfig`."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dynamics import MAX_QUBITS, EvolveSettings
from .lattice import C6_50S, DEFAULT_SPACING_UM, LatticeSpec


class ConfigError(ValueError):
    """Invalid or unreadable configuration, with the offending key when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line

    def to_dict(self) -> dict:
        return {"error": "config", "message": str(self), "key": self.key, "line": self.line}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EvolveConfig(_Strict):
    n_steps: int = Field(1000, ge=1)
    krylov_dim_max: int = Field(30, ge=2)
    krylov_tol: float = Field(1e-10, gt=0)
    record_stride: int = Field(10, ge=0)

    def settings(self, record: bool = True) -> EvolveSettings:
        return EvolveSettings(
            n_steps=self.n_steps, krylov_dim_max=self.krylov_dim_max,
            krylov_tol=self.krylov_tol, record_stride=self.record_stride if record else 0,
        )


class SearchConfig(_Strict):
    """Bounds default to ``[0, omega_max_factor * V0]`` and ``+-delta_factor * crossing``."""

    omega_max_factor: float = Field(2.0, gt=0)
    delta_factor: float = Field(1.5, gt=0)
    omega_bounds: Optional[tuple[float, float]] = None
    delta_bounds: Optional[tuple[float, float]] = None

    @field_validator("omega_bounds")
    @classmethod
    def _omega_nonnegative(cls, v):
        if v is not None and (v[0] < 0 or v[0] >= v[1]):
            raise ValueError("need 0 <= lower < upper")
        return v

    @field_validator("delta_bounds")
    @classmethod
    def _delta_ordered(cls, v):
        if v is not None and v[0] >= v[1]:
            raise ValueError("need lower < upper")
        return v


class BoConfig(_Strict):
    budget: int = Field(300, ge=1)
    n_init: int = Field(24, ge=1)
    seed: int = Field(0, ge=0)
    n_restarts: int = Field(8, ge=1)
    xi: float = Field(0.01, ge=0)
    n_candidates: int = Field(4096, ge=1)

    @model_validator(mode="after")
    def _budget_covers_init(self):
        if self.budget < self.n_init:
            raise ValueError("budget must be at least n_init")
        return self


class NoiseConfig(_Strict):
    level: float = Field(0.03, ge=0)
    n_members: int = Field(30, ge=1)


class QuenchConfig(_Strict):
    #: detuning during the scan as a multiple of the all-down/all-up crossing
    delta_factor: float = 1.0
    #: omega1 = g V0 (1 + split), omega2 = g V0 (1 - split)
    split: float = Field(0.0, ge=-1.0, le=1.0)
    ramp_start: float = Field(0.0, ge=0.0, le=1.0)
    ramp_end: float = Field(1.0, ge=0.0, le=1.0)


class AnalysisConfig(_Strict):
    spectrum_snapshots: int = Field(100, ge=1)
    entropy_partitions: Optional[list[list[int]]] = None
    slope_window: tuple[float, float] = (0.1, 0.4)
    level_points: int = Field(201, ge=2)


class PulseConfig(_Strict):
    omega_knots: tuple[float, float, float]
    delta_knots: tuple[float, float, float]

    @field_validator("omega_knots")
    @classmethod
    def _nonnegative(cls, v):
        if min(v) < 0:
            raise ValueError("Rabi knots must be non-negative")
        return v


class RunConfig(_Strict):
    lattice: list[int] = Field(min_length=1, max_length=3)
    target: Literal["phi", "psi"]
    duration_us: float = Field(gt=0)
    spacing_um: float = Field(DEFAULT_SPACING_UM, gt=0)
    c6: float = Field(C6_50S, gt=0)
    n_atoms: Optional[int] = Field(None, ge=1)
    max_qubits: int = Field(MAX_QUBITS, ge=1)
    evolve: EvolveConfig = EvolveConfig()
    search: SearchConfig = SearchConfig()
    bo: BoConfig = BoConfig()
    noise: Optional[NoiseConfig] = None
    quench: QuenchConfig = QuenchConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    pulse: Optional[PulseConfig] = None
    output_dir: Optional[str] = None

    @field_validator("lattice")
    @classmethod
    def _positive_extents(cls, v):
        if any(e < 1 for e in v):
            raise ValueError("every extent must be a positive integer")
        return v

    @model_validator(mode="after")
    def _cross_checks(self):
        n = 1
        for e in self.lattice:
            n *= e
        if self.n_atoms is not None and self.n_atoms != n:
            raise ValueError(f"n_atoms={self.n_atoms} but lattice {self.lattice} has {n} sites")
        if n > self.max_qubits:
            raise ValueError(f"lattice has {n} sites, above max_qubits={self.max_qubits}")
        if self.target == "psi" and n < 2:
            raise ValueError("target 'psi' needs at least two atoms")
        return self

    @property
    def n_sites(self) -> int:
        n = 1
        for e in self.lattice:
            n *= e
        return n

    def lattice_spec(self) -> LatticeSpec:
        return LatticeSpec(tuple(self.lattice), self.spacing_um, self.c6)

    def echo(self) -> dict:
        return self.model_dump(mode="json")

    def identity(self) -> dict:
        """Fields that determine results (output location excluded)."""
        data = self.echo()
        data.pop("output_dir", None)
        return data


def _first_error(exc: ValidationError) -> ConfigError:
    errs = exc.errors()
    parts = []
    key = None
    for err in errs:
        loc = ".".join(str(p) for p in err["loc"])
        key = key or loc
        parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return ConfigError("; ".join(parts), key=key)


def config_from_dict(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise _first_error(exc) from None


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
                          line=exc.lineno) from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        exc.line = _line_of_key(text, exc.key)
        raise


def _line_of_key(text: str, key: str | None) -> int | None:
    if not key:
        return None
    leaf = key.split(".")[-1]
    needle = f'"{leaf}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None
