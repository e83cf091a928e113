"""Validated experiment configuration with explicit units.

Dimensioned fields are ``{"value": ..., "unit": ...}`` objects. Frequencies
also carry ``angular``: ``false`` means the value is a cyclic frequency that
gets multiplied by ``2 pi``; ``true`` means it already is an angular
frequency in rad/s times the unit prefix.
"""

from __future__ import annotations

import hashlib
import json
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .cavity_optics import CavityGeometry
from .coupling import GROUPS, DensityProfile, PhysicalParams, SpinSite, j1_fixture, sample_positions
from .replica_dynamics import RampSchedule

# decimal exponents of each unit
_LENGTH = {"nm": -9, "um": -6, "µm": -6, "mm": -3, "cm": -2, "m": 0}
_TIME = {"ns": -9, "us": -6, "µs": -6, "ms": -3, "s": 0}
_FREQ = {"Hz": 0, "kHz": 3, "MHz": 6, "GHz": 9}


def _scale(value: float, exp: int) -> float:
    # dividing by an exact power of ten keeps e.g. 780.24 nm -> 7.8024e-07 m correctly rounded
    return value * 10.0 ** exp if exp >= 0 else value / 10.0 ** -exp

__all__ = ["ExperimentConfig", "ValidationError", "load_config", "config_hash", "format_errors"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Length(_Strict):
    value: float
    unit: Literal["nm", "um", "µm", "mm", "cm", "m"]

    def to(self, unit: str) -> float:
        return _scale(self.value, _LENGTH[self.unit] - _LENGTH[unit])


class Duration(_Strict):
    value: float
    unit: Literal["ns", "us", "µs", "ms", "s"]

    def seconds(self) -> float:
        return _scale(self.value, _TIME[self.unit])


class Frequency(_Strict):
    value: float
    unit: Literal["Hz", "kHz", "MHz", "GHz"]
    angular: bool = False

    def rad_per_s(self) -> float:
        v = _scale(self.value, _FREQ[self.unit])
        return v if self.angular else 2 * np.pi * v


def _len(v, u):
    return Length(value=v, unit=u)


def _freq(v, u):
    return Frequency(value=v, unit=u)


class GeometryConfig(_Strict):
    M: int = 4
    N: int = 7
    eta: int = 0
    Q0_parity: Literal["odd", "even"] = "odd"
    w0: Length = _len(35.0, "um")
    L: Length = _len(1.22, "cm")
    R_mirror: Length = _len(1.0, "cm")
    phi: float = Field(0.0, ge=0.0)

    def build(self) -> CavityGeometry:
        return CavityGeometry(self.M, self.N, self.eta, self.Q0_parity, self.w0.to("um"),
                              self.L.to("cm"), self.R_mirror.to("cm"), self.phi)


class PhysicalConfig(_Strict):
    N_A: float = Field(6e4, gt=0)
    g0: Frequency = _freq(1.35, "MHz")
    kappa: Frequency = _freq(140.0, "kHz")
    Delta_A: Frequency = _freq(-97.2, "GHz")
    Delta_C: Frequency = _freq(-20.0, "MHz")
    lambda_pump: Length = _len(780.24, "nm")

    def build(self) -> PhysicalParams:
        return PhysicalParams(self.N_A, self.g0.rad_per_s(), self.kappa.rad_per_s(),
                              self.Delta_A.rad_per_s(), self.Delta_C.rad_per_s(),
                              self.lambda_pump.to("m"))


class DensityConfig(_Strict):
    sigma_x: Length = _len(5.2, "um")
    sigma_y: Length = _len(5.4, "um")
    a00: float = 1.0
    a01: float = 0.0
    a10: float = 0.0

    def build(self) -> DensityProfile:
        return DensityProfile(self.sigma_x.to("um"), self.sigma_y.to("um"), self.a00, self.a01, self.a10)


class SitesConfig(_Strict):
    """Either a named position group (sampled with ``seed``), the fixed J1
    layout, or explicit positions in micrometres."""

    group: Literal["A", "B", "C", "D", "J1"] | None = "J1"
    seed: int = 0
    positions_um: list[tuple[float, float]] | None = None
    density: DensityConfig = DensityConfig()

    @model_validator(mode="before")
    @classmethod
    def _one_source(cls, data):
        if isinstance(data, dict) and data.get("positions_um") is not None:
            data = dict(data)
            if data.setdefault("group", None) is not None:
                raise ValueError("give exactly one of 'group' or 'positions_um'")
        elif isinstance(data, dict) and "group" in data and data["group"] is None:
            raise ValueError("give exactly one of 'group' or 'positions_um'")
        return data

    def build(self) -> list[SpinSite]:
        dens = self.density.build()
        if self.positions_um is not None:
            return [SpinSite(tuple(p), dens) for p in self.positions_um]
        if self.group == "J1":
            return j1_fixture(dens)
        return sample_positions(GROUPS[self.group], self.seed, dens)


class CouplingConfig(_Strict):
    nodes: int = Field(24, ge=4, le=200)
    include_local: bool = True
    point_source: bool = False


class ScheduleConfig(_Strict):
    t_R: Duration = Duration(value=5.0, unit="ms")
    t_q: Duration = Duration(value=300.0, unit="us")
    ramp_target: float = Field(4.0, gt=0)
    quench_target: float = Field(5.0, gt=0)
    tau_fraction: float = Field(1.0 / 3.0, gt=0)

    def build(self) -> RampSchedule:
        return RampSchedule(self.t_R.seconds(), self.t_q.seconds(), self.ramp_target,
                            self.quench_target, self.tau_fraction)


class DynamicsConfig(_Strict):
    engine: Literal["semiclassical", "descent"] = "semiclassical"
    n_reps: int | None = Field(None, ge=2)
    base_seed: int = 0
    epsilon: float = Field(1e-3, gt=0)
    damping_scale: float = Field(1.0, ge=0)
    descent_init: Literal["uniform", "normal"] = "uniform"
    rtol: float = Field(1e-8, gt=0, lt=1)


class AnalysisConfig(_Strict):
    bins: int = Field(50, ge=2)
    binarize: bool = False
    linkage: Literal["average", "single", "complete"] = "average"
    use_abs: bool = True
    n_boot: int = Field(1000, ge=0)


class ExperimentConfig(_Strict):
    geometry: GeometryConfig = GeometryConfig()
    physical: PhysicalConfig = PhysicalConfig()
    sites: SitesConfig = SitesConfig()
    coupling: CouplingConfig = CouplingConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    dynamics: DynamicsConfig = DynamicsConfig()
    analysis: AnalysisConfig = AnalysisConfig()

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, ensure_ascii=False)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(cfg.canonical_json().encode("utf-8")).hexdigest()


def load_config(path=None) -> ExperimentConfig:
    """Parse a JSON config file; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig()
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.model_validate_json(fh.read())


def format_errors(exc: ValidationError) -> list[str]:
    """One ``path.to.field: message`` line per validation error."""
    return [".".join(str(p) for p in e["loc"]) + ": " + e["msg"] for e in exc.errors()]
