"""
response — perturbative spectroscopy predictors and structure-factor estimators.

Energies and frequencies share one numeric scale: a stored gap of 2.83
(2*pi*MHz) shows up at f = 2.83 MHz. Angular quantities (omega = 2*pi*f,
2*pi*A, 2*pi*gap) appear only inside the formulas below.

The Gaussian envelope is centered at T/2, so the carrier phase seen at the
envelope center is phi + omega*T/2; the cos(2 phi) cross term uses that phase.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import pandas as pd
from scipy import integrate, special

from skills.dynamics.schedule import ModulationPulse, phase_for_max_response
from skills.errors import MissingVectorsError, TruncationError, ValidationError
from skills.hamiltonian.hamiltonian import drive_operator, k_mode_profile
from skills.hilbert.hilbert import ConstrainedBasis, SparseOperator
from skills.spectral.spectral import Spectrum, transition_strengths

TWO_PI = 2.0 * math.pi
TRUNCATION_BUDGET = 1e-6
QUAD_TOL = 1e-8

CurveKind = Literal["delta_n", "linear_response", "dsf"]


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass
class ResponseCurve:
    frequencies: np.ndarray
    values: np.ndarray
    kind: CurveKind
    sigma: np.ndarray | None = None
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.frequencies = np.asarray(self.frequencies, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.frequencies.shape != self.values.shape:
            raise ValidationError("frequencies and values differ in length")
        if self.frequencies.size > 1 and np.any(np.diff(self.frequencies) < 0):
            raise ValidationError("frequencies must be ascending")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("response values must be finite")

    def scaled(self, factor: float, kind: CurveKind | None = None, **provenance: Any) -> ResponseCurve:
        sigma = None if self.sigma is None else self.sigma * abs(factor)
        return ResponseCurve(
            self.frequencies.copy(),
            self.values * factor,
            kind or self.kind,
            sigma,
            {**self.provenance, **provenance},
        )

    def to_frame(self) -> pd.DataFrame:
        sigma = self.sigma if self.sigma is not None else np.full(self.values.size, np.nan)
        return pd.DataFrame({"f_MHz": self.frequencies, "value": self.values, "sigma": sigma})


@dataclass(frozen=True)
class ThermalWeights:
    beta: float
    weights: np.ndarray
    tail_weight: float

    @property
    def relevant(self) -> np.ndarray:
        return np.nonzero(self.weights > 0)[0]


def thermal_weights(spectrum: Spectrum, beta: float = math.inf, budget: float = TRUNCATION_BUDGET) -> ThermalWeights:
    """e^{-beta E_m}/Z over computed states; the last state's weight bounds the truncation error."""
    n = len(spectrum)
    if math.isinf(beta):
        w = np.zeros(n)
        w[0] = 1.0
        return ThermalWeights(beta, w, 0.0)
    w = np.exp(-beta * (spectrum.energies - spectrum.energies[0]))
    w /= w.sum()
    tail = float(w[-1])
    if n > 1 and tail > budget:
        raise TruncationError(f"highest computed state carries weight {tail:.1e} > {budget:.0e}; compute more states")
    return ThermalWeights(beta, w, tail)


def _pulse_phase(pulse: ModulationPulse, frequency: float, max_response_phase: bool) -> float:
    return phase_for_max_response(frequency, pulse.duration) if max_response_phase else pulse.phase


# ---------------------------------------------------------------------------
# Envelope transforms
# ---------------------------------------------------------------------------


def _gaussian_window(x: np.ndarray, duration: float, width: float) -> np.ndarray:
    """int_0^T exp(-((t-T/2)/w)^2) e^{ixt} dt via the Faddeeva function (overflow-safe)."""
    c = 0.5 * duration
    a = c / width
    xw = x * width / 2.0
    edge = math.exp(-(a**2))
    inner = 2.0 * np.exp(-(xw**2)) - edge * (
        np.exp(-1j * c * x) * special.wofz(1j * a - xw) + np.exp(1j * c * x) * special.wofz(1j * a + xw)
    )
    return np.exp(1j * x * c) * (width * math.sqrt(math.pi) / 2.0) * inner


def _square_window(x: np.ndarray, duration: float) -> np.ndarray:
    out = np.empty(x.shape, dtype=np.complex128)
    small = np.abs(x * duration) < 1e-8
    out[small] = duration
    xs = x[~small]
    out[~small] = (np.exp(1j * xs * duration) - 1.0) / (1j * xs)
    return out


def envelope_transform(pulse: ModulationPulse, x: np.ndarray | float) -> np.ndarray:
    """F(x) = int_0^T f(t) e^{ixt} dt for the pulse envelope f (x angular, rad/us)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if pulse.envelope == "gaussian":
        return _gaussian_window(x, pulse.duration, pulse.envelope_width)
    if pulse.envelope == "square":
        return _square_window(x, pulse.duration)
    return numeric_envelope_transform(lambda t: pulse.waveform().envelope(t, pulse.duration), pulse.duration, x)


def numeric_envelope_transform(envelope: Any, duration: float, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape, dtype=np.complex128)
    for i, xi in enumerate(x):
        re = integrate.quad(lambda t: envelope(t) * math.cos(xi * t), 0.0, duration, epsabs=QUAD_TOL, limit=500)[0]
        im = integrate.quad(lambda t: envelope(t) * math.sin(xi * t), 0.0, duration, epsabs=QUAD_TOL, limit=500)[0]
        out[i] = re + 1j * im
    return out


# ---------------------------------------------------------------------------
# Second-order (population) response
# ---------------------------------------------------------------------------


def _gaussian_width(pulse: ModulationPulse) -> float:
    if pulse.envelope != "gaussian":
        raise ValidationError("second-order predictors need a gaussian envelope")
    return pulse.envelope_width


def _check_resolved(spectrum: Spectrum, width: float) -> None:
    if len(spectrum) < 3:
        return
    spacing = float(np.min(np.diff(spectrum.gaps[1:])))
    if TWO_PI * width * max(spacing, 0.0) < 1.0:
        warnings.warn(f"pulse width {width:.3g} us does not resolve level spacing {spacing:.3g} MHz", stacklevel=3)


def quadratic_response_full(
    spectrum: Spectrum,
    K: SparseOperator,
    pulse: ModulationPulse,
    frequencies: Sequence[float],
    readout_contrast: np.ndarray | float = 1.0,
) -> ResponseCurve:
    """(pi w^2 A^2/4) sum_e dO_e |K_ge|^2 [G(w+dE) + G(w-dE) + 2 e^{-w^2(w^2+dE^2)/2} cos 2phi]."""
    w = _gaussian_width(pulse)
    table = transition_strengths(spectrum, K)
    amp = TWO_PI * pulse.amplitude
    dE = TWO_PI * table.gaps[None, :]
    f = np.asarray(frequencies, dtype=np.float64)
    omega = TWO_PI * f[:, None]
    phi_center = pulse.phase + omega * pulse.duration / 2.0
    kernel = (
        np.exp(-(w**2) * (omega + dE) ** 2 / 2.0)
        + np.exp(-(w**2) * (omega - dE) ** 2 / 2.0)
        + 2.0 * np.exp(-(w**2) * (omega**2 + dE**2) / 2.0) * np.cos(2.0 * phi_center)
    )
    weights = np.asarray(readout_contrast, dtype=np.float64) * table.strengths
    values = math.pi * w**2 * amp**2 / 4.0 * (kernel @ weights)
    return ResponseCurve(f, values, "delta_n", provenance={"source": "quadratic_response_full", "width_us": w})


def quadratic_response_resolved(
    spectrum: Spectrum, K: SparseOperator, pulse: ModulationPulse, frequencies: Sequence[float]
) -> ResponseCurve:
    """delta_n(f) = (pi w^2 A^2/4) sum_e |K_ge|^2 exp(-2 pi^2 w^2 (gap - f)^2) in angular units."""
    w = _gaussian_width(pulse)
    table = transition_strengths(spectrum, K)
    _check_resolved(spectrum, w)
    amp = TWO_PI * pulse.amplitude
    f = np.asarray(frequencies, dtype=np.float64)
    kernel = np.exp(-2.0 * math.pi**2 * w**2 * (table.gaps[None, :] - f[:, None]) ** 2)
    values = math.pi * w**2 * amp**2 / 4.0 * (kernel @ table.strengths)
    return ResponseCurve(f, values, "delta_n", provenance={"source": "quadratic_response_resolved", "width_us": w})


# ---------------------------------------------------------------------------
# Linear response
# ---------------------------------------------------------------------------


def _matrix_elements(spectrum: Spectrum, op: SparseOperator) -> np.ndarray:
    if spectrum.vectors is None:
        raise MissingVectorsError("matrix elements need eigenvectors")
    V = spectrum.vectors
    return V.T @ (op.matrix @ V)


def linear_response_finite_T(
    spectrum: Spectrum,
    K: SparseOperator,
    Q: SparseOperator,
    pulse: ModulationPulse,
    frequencies: Sequence[float],
    beta: float = math.inf,
    *,
    max_response_phase: bool = False,
) -> ResponseCurve:
    """First-order delta<Q>(T) for a drive a(t) K; resonant and counter-rotating parts both kept.

    delta<Q> = sum_m p_m sum_n 2 Im[ Q_mn K_nm e^{i(E_m-E_n)T} G(E_n-E_m) ],
    G(x) = (A/2) [e^{i phi} F(x + omega) + e^{-i phi} F(x - omega)], F = envelope transform.
    """
    thermal = thermal_weights(spectrum, beta)
    Kmn = _matrix_elements(spectrum, K)
    Qmn = _matrix_elements(spectrum, Q)
    eps = TWO_PI * spectrum.energies
    amp = TWO_PI * pulse.amplitude
    T = pulse.duration
    f = np.asarray(frequencies, dtype=np.float64)
    values = np.zeros(f.size)
    for m in thermal.relevant:
        x = eps - eps[m]  # E_n - E_m
        coupling = Qmn[m, :] * Kmn[:, m] * np.exp(-1j * x * T)
        for i, fi in enumerate(f):
            omega = TWO_PI * fi
            phi = _pulse_phase(pulse, fi, max_response_phase)
            G = 0.5 * amp * (
                np.exp(1j * phi) * envelope_transform(pulse, x + omega)
                + np.exp(-1j * phi) * envelope_transform(pulse, x - omega)
            )
            values[i] += thermal.weights[m] * 2.0 * float(np.imag(np.sum(coupling * G)))
    return ResponseCurve(
        f,
        values,
        "linear_response",
        provenance={"source": "linear_response_finite_T", "beta": beta, "tail_weight": thermal.tail_weight},
    )


# ---------------------------------------------------------------------------
# Dynamical structure factor
# ---------------------------------------------------------------------------


def mean_level_spacing(spectrum: Spectrum, window: tuple[float, float]) -> float:
    gaps = np.sort(spectrum.gaps[(spectrum.gaps >= window[0]) & (spectrum.gaps <= window[1])])
    if gaps.size < 2:
        return float(window[1] - window[0])
    return float(np.mean(np.diff(gaps)))


def _unit_gaussian(x: np.ndarray, width: float) -> np.ndarray:
    return np.exp(-0.5 * (x / width) ** 2) / (math.sqrt(TWO_PI) * width)


def dsf_eigensum(
    spectrum: Spectrum,
    local_ops: Sequence[SparseOperator],
    k: float,
    frequencies: Sequence[float],
    beta: float = math.inf,
    broaden: float | None = None,
    *,
    positions: Sequence[float] | None = None,
    L: int | None = None,
) -> ResponseCurve:
    """S(k, f) = (1/LZ) sum_{m,n} e^{-beta E_m} |<n|O_k|m>|^2 delta_b(f - (E_n - E_m)).

    O_k = sum_j e^{ikx_j} o_j; delta_b is a unit-area Gaussian of width `broaden` (MHz).
    """
    if spectrum.vectors is None:
        raise MissingVectorsError("structure factor needs eigenvectors")
    f = np.asarray(frequencies, dtype=np.float64)
    chain = L or (spectrum.params.L if spectrum.params is not None else len(local_ops))
    x = np.arange(1, len(local_ops) + 1, dtype=np.float64) if positions is None else np.asarray(positions, float)
    if broaden is None:
        broaden = 3.0 * mean_level_spacing(spectrum, (max(float(f.min()), 0.0), float(f.max())))
    thermal = thermal_weights(spectrum, beta)
    V = spectrum.vectors
    values = np.zeros(f.size)
    captured = []
    for m in thermal.relevant:
        w = np.zeros(V.shape[0], dtype=np.complex128)
        for xj, op in zip(x, local_ops, strict=True):
            w += np.exp(1j * k * xj) * op.matvec(V[:, m])
        amps = np.abs(V.T @ w) ** 2
        captured.append(float(amps.sum() / max(np.vdot(w, w).real, 1e-300)))
        gaps = spectrum.energies - spectrum.energies[m]
        values += thermal.weights[m] / chain * (_unit_gaussian(f[:, None] - gaps[None, :], broaden) @ amps)
    return ResponseCurve(
        f,
        values,
        "dsf",
        provenance={
            "source": "dsf_eigensum",
            "k": k,
            "beta": beta,
            "broaden_MHz": broaden,
            "sum_rule_captured": min(captured) if captured else 1.0,
        },
    )


def dsf_from_modulation(
    curve: ResponseCurve, amplitude: float, L: int, beta: float = math.inf, envelope_tail: float = 1.0
) -> ResponseCurve:
    """S = delta<Q>^cont / (pi f(T-) A L (1 - e^{-beta omega})); points with f <= 0 are dropped and flagged."""
    keep = curve.frequencies > 0
    f = curve.frequencies[keep]
    balance = np.ones_like(f) if math.isinf(beta) else -np.expm1(-beta * f)
    norm = math.pi * envelope_tail * amplitude * L
    sigma = None if curve.sigma is None else curve.sigma[keep] / (norm * balance)
    return ResponseCurve(
        f,
        curve.values[keep] / (norm * balance),
        "dsf",
        sigma,
        {**curve.provenance, "source": "dsf_from_modulation", "dropped_nonpositive": int((~keep).sum())},
    )


# ---------------------------------------------------------------------------
# k-resolved response map
# ---------------------------------------------------------------------------


@dataclass
class LightConeMap:
    ks: np.ndarray
    frequencies: np.ndarray
    values: np.ndarray  # shape (len(ks), len(frequencies))

    def thresholds(self, fraction: float = 0.5) -> np.ndarray:
        """Lowest frequency where each k-row reaches `fraction` of its maximum."""
        out = np.empty(self.ks.size)
        for i, row in enumerate(self.values):
            above = np.nonzero(row >= fraction * row.max())[0]
            out[i] = self.frequencies[above[0]] if above.size else np.nan
        return out

    def to_frame(self) -> pd.DataFrame:
        kk, ff = np.meshgrid(self.ks, self.frequencies, indexing="ij")
        return pd.DataFrame({"k": kk.ravel(), "f_MHz": ff.ravel(), "value": self.values.ravel()})


def light_cone_response(
    spectrum: Spectrum,
    basis: ConstrainedBasis,
    ks: Sequence[float],
    frequencies: Sequence[float],
    pulse: ModulationPulse,
    alpha: float = 0.0,
) -> LightConeMap:
    """(pi w^2 A^2/4) sum_e |<g|K_k|e>|^2 e^{-w^2(omega - dE)^2/2} for K_k = sum_j cos(k j + alpha) n_j."""
    rows = []
    for k in ks:
        K = drive_operator(basis, k_mode_profile(basis.L, float(k), alpha))
        rows.append(quadratic_response_resolved(spectrum, K, pulse, frequencies).values)
    return LightConeMap(np.asarray(ks, dtype=np.float64), np.asarray(frequencies, dtype=np.float64), np.array(rows))
