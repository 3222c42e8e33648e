"""Experiment configuration: schema, validation and file loading."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .checks import CHECKS
from .symbols import THRESHOLDS

KINDS = ("bands", "projections", "pdo", "mourre", "lap", "cook", "phase", "b-diagnostics")
Kind = Literal["bands", "projections", "pdo", "mourre", "lap", "cook", "phase", "b-diagnostics"]

WINDOW_MARGIN = 0.05


class ConfigError(ValueError):
    """Validation failure; ``errors`` lists ``(field path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class WindowConfig(_Strict):
    a: float = 1.2
    b: float = 2.8

    @model_validator(mode="after")
    def _avoid_thresholds(self):
        if not self.a < self.b:
            raise ValueError(f"window needs a < b, got ({self.a}, {self.b})")
        if self.a < -3 or self.b > 3:
            raise ValueError(f"window ({self.a}, {self.b}) leaves the band [-3, 3]")
        for t in THRESHOLDS:
            if self.a - WINDOW_MARGIN <= t <= self.b + WINDOW_MARGIN:
                raise ValueError(
                    f"threshold rule: window ({self.a}, {self.b}) must stay {WINDOW_MARGIN} away from "
                    f"the threshold {t:g} of {{0, +-1, +-3}}"
                )
        return self


class PotentialConfig(_Strict):
    rho: float = Field(0.7, gt=0, le=1.7)
    c_long: float = 0.0
    c_short: float = 0.0
    short_profile: Literal["isotropic", "sublattice-split"] = "isotropic"
    wall: Optional[tuple[float, float, float]] = None


class TimeConfig(_Strict):
    t0: float = Field(2.0, gt=0)
    n_times: int = Field(11, ge=2)
    s: float = 1.0
    eps: float = Field(1e-12, gt=0)
    fd_every: int = Field(0, ge=0)


class PacketConfig(_Strict):
    energy: float = 2.0
    sigma: float = Field(8.0, gt=0)
    ramp: float = Field(0.02, gt=0)


class ToleranceConfig(_Strict):
    cauchy: float = 1e-3
    growth: float = 1.05
    power: float = 1e-6
    boundary: float = 1e-10


class LapConfig(_Strict):
    s: float = Field(0.75, gt=0.5)
    energies: list[float] = [1.6, 2.0, 2.4]
    eps: list[float] = [0.2, 0.1, 0.05, 0.025, 0.0125]


class ExperimentConfig(_Strict):
    kind: Kind
    N: int = 1026
    L: int = Field(32, ge=2)
    boundary: Literal["zero-padded", "periodic"] = "zero-padded"
    window: WindowConfig = WindowConfig()
    gap: float = Field(0.5, gt=0)
    potential: PotentialConfig = PotentialConfig()
    modifier: bool = False
    times: TimeConfig = TimeConfig()
    packet: PacketConfig = PacketConfig()
    lap: LapConfig = LapConfig()
    ladder: list[int] = [16, 32, 64]
    tolerances: ToleranceConfig = ToleranceConfig()
    seed: int = 0
    only: Optional[list[str]] = None

    @field_validator("only")
    @classmethod
    def _known_checks(cls, names):
        bad = [n for n in names or [] if n not in CHECKS]
        if bad:
            raise ValueError(f"unknown check names {bad}; see --list-checks")
        return names

    @field_validator("N")
    @classmethod
    def _grid(cls, N):
        if N <= 0 or N % 6:
            raise ValueError(f"grid size N must be a positive multiple of 6, got {N}")
        return N

    @model_validator(mode="after")
    def _phase_regime(self):
        needs = self.kind == "phase" or (self.kind == "cook" and self.modifier)
        if needs and self.potential.c_long != 0 and not self.potential.rho > 0.5:
            raise ValueError(f"first-order phase requires potential.rho > 1/2, got {self.potential.rho}")
        wrong = [n for n in self.only or [] if CHECKS[n][0] != self.kind]
        if wrong:
            raise ValueError(f"checks {wrong} do not belong to kind {self.kind!r}")
        delta = min(abs(self.window.a), abs(self.window.b))
        if not self.gap < delta / 2:
            raise ValueError(f"gap must lie in (0, delta/2) = (0, {delta / 2:g}), got {self.gap}")
        return self


def _errors(exc: ValidationError) -> list[tuple[str, str]]:
    out = []
    for e in exc.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"].removeprefix("Value error, ")
        out.append((path, msg))
    return out


def validate(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_errors(exc)) from None


def read_config_data(path: str | Path) -> dict:
    """Raw mapping from a ``.json`` file, or YAML for any other suffix."""
    path = Path(path)
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return data or {}


def load_config(path: str | Path) -> ExperimentConfig:
    return validate(read_config_data(path))


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.path=value`` overrides (values parsed as JSON when possible)."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError([(item, "override must look like field.path=value")])
        key, raw = item.split("=", 1)
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _coerce(raw)
    return data
