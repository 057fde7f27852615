"""
schedule — piecewise control profiles for time evolution.

A Schedule is an ordered list of Segments. Each segment carries a detuning
profile Delta(t), a Rabi profile Omega(t) and an optional Drive that adds
a(t) * sum_i c_i n_i to the Hamiltonian. Profiles are evaluated on segment-local
time t in [0, duration]; values may jump only at segment boundaries.

Times are in microseconds, frequencies f in MHz, amplitudes in 2*pi*MHz, so a
modulation reads cos(2*pi*f*t + phi).
"""

from __future__ import annotations

import math
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from skills.errors import DomainError
from skills.hamiltonian.hamiltonian import k_mode_profile, odd_parity_profile, uniform_profile

DEFAULT_THETA0 = 1.45
DEFAULT_SWEEP_TIME = 1.5  # us


class _Profile(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Constant(_Profile):
    kind: Literal["constant"] = "constant"
    value: float

    def __call__(self, t: float, duration: float) -> float:
        return self.value


class Linear(_Profile):
    kind: Literal["linear"] = "linear"
    start: float
    end: float

    def __call__(self, t: float, duration: float) -> float:
        return self.start + (self.end - self.start) * t / duration


class TangentSweep(_Profile):
    """center + scale * tan(theta0 * (1 - t/T)) when incoming, tan(theta0 * t/T) when mirrored."""

    kind: Literal["tangent_sweep"] = "tangent_sweep"
    center: float
    scale: float
    theta0: float = Field(default=DEFAULT_THETA0, gt=0.0, lt=math.pi / 2)
    mirrored: bool = False

    def __call__(self, t: float, duration: float) -> float:
        x = t / duration if self.mirrored else 1.0 - t / duration
        return self.center + self.scale * math.tan(self.theta0 * x)


class GaussianCosine(_Profile):
    """A * exp(-((t - T/2)/w)^2) * cos(2 pi f t + phi); raised uses [1 + cos(...)]."""

    kind: Literal["gaussian_cosine"] = "gaussian_cosine"
    amplitude: float
    frequency: float
    phase: float = 0.0
    width: float = Field(gt=0.0)
    raised: bool = False

    def envelope(self, t: float, duration: float) -> float:
        return math.exp(-(((t - 0.5 * duration) / self.width) ** 2))

    def __call__(self, t: float, duration: float) -> float:
        carrier = math.cos(2.0 * math.pi * self.frequency * t + self.phase)
        if self.raised:
            carrier += 1.0
        return self.amplitude * self.envelope(t, duration) * carrier


class SquareCosine(_Profile):
    kind: Literal["square_cosine"] = "square_cosine"
    amplitude: float
    frequency: float
    phase: float = 0.0
    raised: bool = False

    def envelope(self, t: float, duration: float) -> float:
        return 1.0

    def __call__(self, t: float, duration: float) -> float:
        carrier = math.cos(2.0 * math.pi * self.frequency * t + self.phase)
        if self.raised:
            carrier += 1.0
        return self.amplitude * carrier


Profile = Annotated[
    Constant | Linear | TangentSweep | GaussianCosine | SquareCosine,
    Field(discriminator="kind"),
]
Modulation = Annotated[GaussianCosine | SquareCosine, Field(discriminator="kind")]


class Drive(BaseModel):
    """Spatial weights c_i times a temporal waveform a(t)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    waveform: Modulation
    profile: Literal["uniform", "odd_parity", "k_mode", "custom"] = "uniform"
    k: float = 0.0
    alpha: float = 0.0
    weights: tuple[float, ...] | None = None

    def weights_for(self, L: int) -> np.ndarray:
        if self.profile == "uniform":
            return uniform_profile(L)
        if self.profile == "odd_parity":
            return odd_parity_profile(L)
        if self.profile == "k_mode":
            return k_mode_profile(L, self.k, self.alpha)
        if self.weights is None or len(self.weights) != L:
            raise DomainError(f"custom drive needs {L} weights")
        return np.asarray(self.weights, dtype=np.float64)


class Segment(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    duration: float = Field(gt=0.0)
    delta: Profile
    omega: Profile
    drive: Drive | None = None
    label: str = ""

    def frequencies(self) -> list[float]:
        freqs = []
        if self.drive is not None:
            freqs.append(abs(self.drive.waveform.frequency))
        return freqs


class Schedule(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    segments: tuple[Segment, ...] = Field(min_length=1)

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    def then(self, *segments: Segment) -> Schedule:
        return Schedule(segments=self.segments + tuple(segments))


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def hold(duration: float, delta: float, omega: float, drive: Drive | None = None, label: str = "hold") -> Segment:
    return Segment(
        duration=duration, delta=Constant(value=delta), omega=Constant(value=omega), drive=drive, label=label
    )


def omega_ramp_on(duration: float, delta: float, omega: float) -> Segment:
    return Segment(
        duration=duration,
        delta=Constant(value=delta),
        omega=Linear(start=0.0, end=omega),
        label="omega_ramp",
    )


def sweep_in(
    delta_c: float,
    omega: float,
    *,
    scale: float | None = None,
    theta0: float = DEFAULT_THETA0,
    duration: float = DEFAULT_SWEEP_TIME,
) -> Segment:
    """Tangent sweep ending at delta_c; default scale -omega starts on the disordered side."""
    return Segment(
        duration=duration,
        delta=TangentSweep(center=delta_c, scale=-abs(omega) if scale is None else scale, theta0=theta0),
        omega=Constant(value=omega),
        label="sweep_in",
    )


def sweep_out(
    delta_c: float,
    omega: float,
    readout: Literal["z2", "disordered"],
    *,
    scale: float | None = None,
    theta0: float = DEFAULT_THETA0,
    duration: float = DEFAULT_SWEEP_TIME,
) -> Segment:
    """Mirror of sweep_in; heads to large positive Delta for Z2 readout, negative otherwise."""
    magnitude = abs(omega) if scale is None else abs(scale)
    signed = magnitude if readout == "z2" else -magnitude
    return Segment(
        duration=duration,
        delta=TangentSweep(center=delta_c, scale=signed, theta0=theta0, mirrored=True),
        omega=Constant(value=omega),
        label=f"sweep_out_{readout}",
    )


def phase_for_max_response(frequency: float, duration: float, sign: int = -1) -> float:
    """phi = +/- pi/2 - 2 pi f T, which maximizes the linear response of K to itself."""
    return sign * math.pi / 2.0 - 2.0 * math.pi * frequency * duration


class ModulationPulse(BaseModel):
    """Amplitude A, frequency f, phase phi, envelope over [0, duration] and spatial profile."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    amplitude: float
    frequency: float = 0.0
    phase: float = 0.0
    duration: float = Field(gt=0.0)
    envelope: Literal["gaussian", "square"] = "gaussian"
    width: float | None = Field(default=None, gt=0.0)
    profile: Literal["uniform", "odd_parity", "k_mode", "custom"] = "uniform"
    k: float = 0.0
    alpha: float = 0.0
    weights: tuple[float, ...] | None = None
    raised: bool = False

    @property
    def envelope_width(self) -> float:
        """Gaussian width w; defaults to duration / 6."""
        if self.envelope != "gaussian":
            return math.inf
        return self.width if self.width is not None else self.duration / 6.0

    def waveform(self) -> GaussianCosine | SquareCosine:
        if self.envelope == "gaussian":
            return GaussianCosine(
                amplitude=self.amplitude,
                frequency=self.frequency,
                phase=self.phase,
                width=self.envelope_width,
                raised=self.raised,
            )
        return SquareCosine(amplitude=self.amplitude, frequency=self.frequency, phase=self.phase, raised=self.raised)

    def drive(self) -> Drive:
        return Drive(
            waveform=self.waveform(), profile=self.profile, k=self.k, alpha=self.alpha, weights=self.weights
        )

    def weights_for(self, L: int) -> np.ndarray:
        return self.drive().weights_for(L)

    def segment(self, delta: float, omega: float) -> Segment:
        return hold(self.duration, delta, omega, drive=self.drive(), label="modulation")

    def envelope_tail(self) -> float:
        """f(T-), the envelope value at the end of the pulse."""
        return self.waveform().envelope(self.duration, self.duration)

    def with_(self, **changes: object) -> ModulationPulse:
        return ModulationPulse.model_validate({**self.model_dump(), **changes})
