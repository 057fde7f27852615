"""
harness/config.py — strict run configuration.

Configs are YAML files (or a report.json, whose embedded "config" block is
reused) validated by pydantic models that reject unknown keys. Dotted
overrides (`--set chain.L=13`) are applied before validation; values are
parsed with yaml.safe_load so numbers, booleans and lists keep their type.

Environment (read from .env at CLI import):
    RYDBERG_LAB_THREADS   default for --threads
    RYDBERG_LAB_OUT       default output directory
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from skills.dynamics.dynamics import IntegratorSettings
from skills.dynamics.schedule import (
    DEFAULT_SWEEP_TIME,
    DEFAULT_THETA0,
    ModulationPulse,
    Schedule,
    omega_ramp_on,
    sweep_in,
)
from skills.errors import ValidationError
from skills.hamiltonian.hamiltonian import (
    PUBLISHED_CONFIGS,
    ChainParams,
    uniform_profile,
)

ExperimentName = Literal[
    "ising_spectroscopy",
    "parity_resolved",
    "tci_boundary",
    "dsf",
    "coherent_control",
    "critical_point",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Grid(_Strict):
    """Either `values: [...]` or `start/stop/num` (inclusive); a bare YAML list is accepted."""

    start: float | None = None
    stop: float | None = None
    num: int | None = Field(default=None, ge=1)
    values: tuple[float, ...] | None = None

    @model_validator(mode="before")
    @classmethod
    def _from_list(cls, data: Any) -> Any:
        if isinstance(data, list | tuple):
            return {"values": list(data)}
        return data

    @model_validator(mode="after")
    def _check(self) -> Grid:
        linear = (self.start, self.stop, self.num)
        if self.values is None and None in linear:
            raise ValueError("grid needs either values or start/stop/num")
        if self.values is not None and any(v is not None for v in linear):
            raise ValueError("grid takes values or start/stop/num, not both")
        return self

    def array(self) -> np.ndarray:
        if self.values is not None:
            return np.asarray(self.values, dtype=np.float64)
        return np.linspace(self.start, self.stop, self.num)


class SweepConfig(_Strict):
    theta0: float = Field(default=DEFAULT_THETA0, gt=0.0, lt=1.5707963)
    duration: float = Field(default=DEFAULT_SWEEP_TIME, gt=0.0)
    omega_ramp: float | None = Field(default=None, gt=0.0)
    min_fidelity: float = Field(default=0.9, ge=0.0, le=1.0)

    def schedule(self, params: ChainParams) -> Schedule:
        main = sweep_in(params.delta, params.omega, theta0=self.theta0, duration=self.duration)
        if self.omega_ramp is None:
            return Schedule(segments=(main,))
        start = main.delta(0.0, main.duration)
        return Schedule(segments=(omega_ramp_on(self.omega_ramp, start, params.omega), main))


class ScanConfig(_Strict):
    frequencies: Grid | None = None
    deltas: Grid | None = None
    etas: Grid | None = None
    times: Grid | None = None
    durations: Grid | None = None
    waits: Grid | None = None
    lengths: tuple[int, ...] = ()
    ks: tuple[float, ...] = ()
    amplitudes: tuple[float, ...] = ()

    def axis(self, name: str) -> np.ndarray:
        grid = getattr(self, name)
        if grid is None:
            raise ValidationError(f"config is missing scan.{name}")
        return grid.array()


class AnalysisConfig(_Strict):
    fit: Literal["gaussian", "three_term", "none"] = "gaussian"
    n_peaks: int = Field(default=4, ge=1)
    window: tuple[float, float] | None = None
    noise: float = Field(default=0.0, ge=0.0)
    center_sigma_floor: float = Field(default=0.02, gt=0.0)
    bootstrap: int = Field(default=0, ge=0)
    tolerance: float = Field(default=0.08, gt=0.0)
    model: Literal["ising", "tci"] = "ising"
    pair_offset: int = Field(default=2, ge=1)
    levels: tuple[int, ...] = (2, 3)
    delta_order: Literal[1, 2] = 2
    ratio_order: Literal[1, 2] = 1
    exponent_lengths: tuple[int, ...] = ()
    collapse_from: int = 11
    k: float = 0.0
    broaden: float | None = Field(default=None, gt=0.0)
    phase_cycle: bool = True
    dsf_source: Literal["eigensum", "modulation"] = "modulation"
    plateau: tuple[float, float] = (0.1, 0.3)  # in units of Omega
    target: float | None = Field(default=None, description="expected Delta_c / Omega")
    target_tolerance: float = Field(default=0.005, gt=0.0)
    target_relative: bool = True


class QuenchConfig(_Strict):
    prepare_offset: float = Field(description="prepare_near - Delta_c, 2*pi*MHz")
    etas: tuple[float, ...] = (0.0,)
    tolerance: float = Field(default=0.05, gt=0.0)


class CoherentConfig(_Strict):
    rabi_frequency: float = Field(default=0.506, gt=0.0, description="target many-body Rabi frequency, MHz")
    tolerance: float = Field(default=0.03, gt=0.0)


class LabConfig(_Strict):
    name: str = "run"
    experiment: ExperimentName | None = None
    preset: Literal["ising_repulsive", "ising_attractive", "tci"] | None = None
    chain: ChainParams
    method: Literal["dynamics", "perturbative"] = "perturbative"
    n_states: int = Field(default=20, ge=1)
    pulse: ModulationPulse | None = None
    sweep: SweepConfig = SweepConfig()
    readout: Literal["z2", "disordered"] = "z2"
    scan: ScanConfig = ScanConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    quench: QuenchConfig | None = None
    coherent: CoherentConfig | None = None
    integrator: IntegratorSettings = IntegratorSettings()
    beta: float | None = Field(default=None, gt=0.0, description="inverse temperature; null means ground state")
    seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _apply_preset(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("preset"):
            preset = PUBLISHED_CONFIGS.get(data["preset"])
            if preset is not None:
                data = {**data, "chain": {**preset, **(data.get("chain") or {})}}
        return data

    @property
    def inverse_temperature(self) -> float:
        return float("inf") if self.beta is None else self.beta

    def chain_at(self, L: int) -> ChainParams:
        if L == self.chain.L:
            return self.chain
        return self.chain.replace(L=L, local_detunings=None)

    def drive_weights(self, L: int) -> np.ndarray:
        """Spatial drive profile c_i; uniform when no pulse is configured."""
        return self.pulse.weights_for(L) if self.pulse is not None else uniform_profile(L)

    def require_pulse(self) -> ModulationPulse:
        if self.pulse is None:
            raise ValidationError("config is missing a pulse section")
        return self.pulse


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def read_document(path: Path) -> dict[str, Any]:
    """YAML or JSON mapping; a report.json yields its embedded config."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: not valid {'JSON' if path.suffix == '.json' else 'YAML'}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    if "config" in data and "checks" in data:
        return data["config"]
    return data


def parse_override(item: str) -> tuple[list[str], Any]:
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ValidationError(f"override {item!r} must look like key.sub=value")
    return key.strip().split("."), yaml.safe_load(raw)


def apply_overrides(data: dict[str, Any], overrides: list[str] | tuple[str, ...]) -> dict[str, Any]:
    out = json.loads(json.dumps(data))
    for item in overrides:
        keys, value = parse_override(item)
        node = out
        for key in keys[:-1]:
            child = node.get(key)
            if not isinstance(child, dict):
                child = {}
                node[key] = child
            node = child
        node[keys[-1]] = value
    return out


def load_config(path: Path, overrides: list[str] | tuple[str, ...] = ()) -> LabConfig:
    return LabConfig.model_validate(apply_overrides(read_document(path), overrides))


def config_from_mapping(data: dict[str, Any], overrides: list[str] | tuple[str, ...] = ()) -> LabConfig:
    return LabConfig.model_validate(apply_overrides(data, overrides))
