"""
dynamics — Krylov time propagation and the experiment sequences built on it.

Each step applies exp(-i 2 pi dt H(t + dt/2)) to the state with a Lanczos
basis of dimension `krylov_dim` (full reorthogonalization). The step is
accepted when the a-posteriori Krylov error estimate is below `tol`, then dt
grows by `growth` up to `max_step`; otherwise dt is halved.

Sequences:
    adiabatic_prepare       all-|0> -> tangent sweep -> state near the ground state at Delta_end
    modulation_ramp_probe   modulation at Delta_c, ramp to a gapped phase, count atoms
    modulation_probe        modulation, measure the drive operator right after
    quench_evolve           ground state at Delta_near, hold at Delta_c, sample sum_i sigma_i
    rabi_scan / ramsey_scan coherent control of the lowest transition
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
import scipy.linalg as la
from pydantic import BaseModel, ConfigDict, Field

from skills.dynamics.schedule import (
    ModulationPulse,
    Schedule,
    Segment,
    hold,
    phase_for_max_response,
    sweep_in,
    sweep_out,
)
from skills.errors import DomainError, NormDriftError, StepSizeError, ValidationError
from skills.hamiltonian.hamiltonian import (
    ChainParams,
    HamiltonianTerms,
    build_terms,
    total_cdw_operator,
)
from skills.hilbert.hilbert import ConstrainedBasis, SparseOperator
from skills.response.response import ResponseCurve
from skills.spectral.spectral import eigensolve_lowest

TWO_PI = 2.0 * math.pi
_TIME_EPS = 1e-12
Readout = Literal["z2", "disordered"]
Mapper = Callable[[Callable, Iterable], Iterable]


class IntegratorSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    krylov_dim: int = Field(default=16, ge=4, le=40)
    tol: float = Field(default=1e-9, gt=0.0)
    dt_initial: float = Field(default=1e-3, gt=0.0)
    max_step: float = Field(default=2e-3, gt=0.0)
    min_step: float = Field(default=1e-10, gt=0.0)
    growth: float = Field(default=1.5, gt=1.0)
    norm_tol: float = Field(default=1e-8, gt=0.0)


DEFAULT_SETTINGS = IntegratorSettings()


# ---------------------------------------------------------------------------
# Krylov exponential
# ---------------------------------------------------------------------------


def krylov_expm(
    apply: Callable[[np.ndarray], np.ndarray], psi: np.ndarray, tau: float, m: int
) -> tuple[np.ndarray, float]:
    """exp(-i tau H) psi in an m-dimensional Lanczos space, plus an error estimate."""
    beta0 = float(np.linalg.norm(psi))
    if beta0 == 0.0:
        return psi.copy(), 0.0
    V = np.zeros((psi.size, m), dtype=np.complex128)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[:, 0] = psi / beta0
    size = m
    residual = 0.0
    for j in range(m):
        w = apply(V[:, j])
        alpha[j] = float(np.real(np.vdot(V[:, j], w)))
        w = w - alpha[j] * V[:, j]
        if j > 0:
            w = w - beta[j - 1] * V[:, j - 1]
        w = w - V[:, : j + 1] @ (V[:, : j + 1].conj().T @ w)
        b = float(np.linalg.norm(w))
        if b < 1e-13 * max(1.0, abs(alpha[j])):  # invariant subspace reached
            size = j + 1
            residual = 0.0
            break
        if j + 1 < m:
            beta[j] = b
            V[:, j + 1] = w / b
        else:
            residual = b
    evals, evecs = la.eigh_tridiagonal(alpha[:size], beta[: size - 1])
    coeffs = evecs @ (np.exp(-1j * tau * evals) * evecs[0, :])
    error = beta0 * residual * abs(coeffs[-1])
    return beta0 * (V[:, :size] @ coeffs), error


def _segment_generator(
    terms: HamiltonianTerms, segment: Segment, drive_diag: np.ndarray | None
) -> Callable[[float], Callable[[np.ndarray], np.ndarray]]:
    def at(t: float) -> Callable[[np.ndarray], np.ndarray]:
        omega = segment.omega(t, segment.duration)
        delta = segment.delta(t, segment.duration)
        diag = terms.diagonal(omega, delta)
        if drive_diag is not None and segment.drive is not None:
            diag = diag + segment.drive.waveform(t, segment.duration) * drive_diag
        h2 = terms.h2_offdiag
        h2_scale = terms.h2_scale(omega)
        kinetic = terms.kinetic

        def apply(v: np.ndarray) -> np.ndarray:
            out = omega * (kinetic @ v) + diag * v
            if h2 is not None:
                out += h2_scale * (h2 @ v)
            return out

        return apply

    return at


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


@dataclass
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    label: str = "value"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t_us": self.times, self.label: self.values})


@dataclass
class Propagation:
    psi: np.ndarray
    steps: int
    rejected: int
    norm_drift: float
    samples: dict[str, TimeSeries] = field(default_factory=dict)


def propagate(
    psi0: np.ndarray,
    basis: ConstrainedBasis,
    params: ChainParams,
    schedule: Schedule,
    *,
    terms: HamiltonianTerms | None = None,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    sample_times: Sequence[float] | None = None,
    observables: dict[str, SparseOperator] | None = None,
) -> Propagation:
    """Evolve psi0 through every segment; Omega and Delta come from the schedule, the rest from params."""
    psi = np.asarray(psi0, dtype=np.complex128).copy()
    if abs(np.linalg.norm(psi) - 1.0) > settings.norm_tol:
        raise DomainError("initial state must be normalized")
    terms = terms if terms is not None else build_terms(basis, params)
    observables = observables or {}
    samples_t = np.array(sorted(sample_times), dtype=np.float64) if sample_times is not None else np.zeros(0)
    recorded: dict[str, list[float]] = {name: [] for name in observables}

    def record() -> None:
        for name, op in observables.items():
            recorded[name].append(op.expectation(psi))

    pending = deque(float(ts) for ts in samples_t)
    while pending and pending[0] <= _TIME_EPS:
        record()
        pending.popleft()

    steps = rejected = 0
    dt = min(settings.dt_initial, settings.max_step)
    start = 0.0
    for segment in schedule.segments:
        drive_diag = None
        if segment.drive is not None:
            drive_diag = np.zeros(basis.dim)
            for site, w in enumerate(segment.drive.weights_for(basis.L), start=1):
                if w != 0:
                    drive_diag += w * basis.site_occupation(site)
        generator = _segment_generator(terms, segment, drive_diag)
        end = start + segment.duration
        stops = [ts - start for ts in pending if ts < end - _TIME_EPS] + [segment.duration]

        t = 0.0
        for stop in stops:
            while stop - t > _TIME_EPS:
                h = min(dt, stop - t)
                new_psi, err = krylov_expm(generator(t + 0.5 * h), psi, TWO_PI * h, settings.krylov_dim)
                if err > settings.tol:
                    rejected += 1
                    dt = 0.5 * h
                    if dt < settings.min_step:
                        raise StepSizeError(f"step size fell below {settings.min_step:g} us at t={start + t:.6f}")
                    continue
                psi = new_psi
                steps += 1
                if h >= dt:
                    dt = min(dt * settings.growth, settings.max_step)
                t += h
            t = stop
            while pending and pending[0] <= start + stop + _TIME_EPS:
                record()
                pending.popleft()
        start = end

    while pending:  # sample times past the end see the final state
        record()
        pending.popleft()

    drift = abs(float(np.linalg.norm(psi)) - 1.0)
    if drift > settings.norm_tol:
        raise NormDriftError(f"norm drift {drift:.2e} exceeds {settings.norm_tol:.0e}")
    series = {name: TimeSeries(samples_t.copy(), np.asarray(vals), name) for name, vals in recorded.items()}
    return Propagation(psi=psi, steps=steps, rejected=rejected, norm_drift=drift, samples=series)


def initial_state(basis: ConstrainedBasis) -> np.ndarray:
    """All atoms in |0>, the Delta -> -inf ground state."""
    psi = np.zeros(basis.dim, dtype=np.complex128)
    psi[0] = 1.0
    return psi


# ---------------------------------------------------------------------------
# Sequences
# ---------------------------------------------------------------------------


@dataclass
class Preparation:
    psi: np.ndarray
    fidelity: float
    ground_energy: float
    sweep: Schedule


def adiabatic_prepare(
    basis: ConstrainedBasis,
    params: ChainParams,
    sweep: Schedule | None = None,
    *,
    terms: HamiltonianTerms | None = None,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    min_fidelity: float = 0.9,
) -> Preparation:
    """Sweep from all-|0> to params.delta; fidelity is reported against the exact ground state."""
    terms = terms if terms is not None else build_terms(basis, params)
    sweep = sweep if sweep is not None else Schedule(segments=(sweep_in(params.delta, params.omega),))
    first = sweep.segments[0]
    start_delta = first.delta(0.0, first.duration)
    if params.omega != 0 and start_delta / params.omega > -4.0:
        warnings.warn(f"sweep starts at Delta/Omega = {start_delta / params.omega:.2f} > -4", stacklevel=2)
    result = propagate(initial_state(basis), basis, params, sweep, terms=terms, settings=settings)
    ground = eigensolve_lowest(terms.assemble(), 1)
    fidelity = float(abs(np.vdot(ground.ground_state, result.psi)) ** 2)
    if fidelity < min_fidelity:
        warnings.warn(f"preparation fidelity {fidelity:.3f} below {min_fidelity}", stacklevel=2)
    return Preparation(psi=result.psi, fidelity=fidelity, ground_energy=float(ground.energies[0]), sweep=sweep)


def readout_operator(basis: ConstrainedBasis, readout: Readout) -> SparseOperator:
    """sum_i (1 - n_i) for Z2 readout, sum_i n_i for disordered readout."""
    if readout == "z2":
        return SparseOperator.from_diagonal(basis.L - basis.total_occupation)
    return SparseOperator.from_diagonal(basis.total_occupation)


def _check_readout(basis: ConstrainedBasis, readout: Readout) -> None:
    if readout not in ("z2", "disordered"):
        raise DomainError(f"readout must be 'z2' or 'disordered', got {readout!r}")
    if readout == "z2" and basis.L % 2 == 0:
        raise DomainError("even-L chains have degenerate Z2 ground states; use disordered readout")


@dataclass
class ProbeResult:
    delta_n: float
    value: float
    reference: float
    psi_post_modulation: np.ndarray | None = None


def modulation_ramp_probe(
    basis: ConstrainedBasis,
    params: ChainParams,
    pulse: ModulationPulse,
    ramp_out: Segment | None = None,
    readout: Readout = "z2",
    *,
    prepared: np.ndarray | None = None,
    reference: float | None = None,
    terms: HamiltonianTerms | None = None,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    keep_post_modulation: bool = False,
) -> ProbeResult:
    """delta_n = <O'>(modulated) - <O'>(same schedule with A = 0)."""
    _check_readout(basis, readout)
    terms = terms if terms is not None else build_terms(basis, params)
    if prepared is None:
        prepared = adiabatic_prepare(basis, params, terms=terms, settings=settings).psi
    ramp_out = ramp_out if ramp_out is not None else sweep_out(params.delta, params.omega, readout)
    O = readout_operator(basis, readout)

    def run(p: ModulationPulse) -> tuple[float, np.ndarray]:
        schedule = Schedule(segments=(p.segment(params.delta, params.omega),))
        mod = propagate(prepared, basis, params, schedule, terms=terms, settings=settings)
        out = propagate(mod.psi, basis, params, Schedule(segments=(ramp_out,)), terms=terms, settings=settings)
        return O.expectation(out.psi), mod.psi

    value, psi_mod = run(pulse)
    if reference is None:
        reference = value if pulse.amplitude == 0 else run(pulse.with_(amplitude=0.0))[0]
    return ProbeResult(
        delta_n=value - reference,
        value=value,
        reference=reference,
        psi_post_modulation=psi_mod if keep_post_modulation else None,
    )


def modulation_ramp_scan(
    basis: ConstrainedBasis,
    params: ChainParams,
    pulse: ModulationPulse,
    frequencies: Sequence[float],
    readout: Readout = "z2",
    *,
    ramp_out: Segment | None = None,
    prepared: np.ndarray | None = None,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    mapper: Mapper = map,
) -> ResponseCurve:
    """delta_n(f) with one shared preparation and one shared A = 0 reference."""
    _check_readout(basis, readout)
    terms = build_terms(basis, params)
    if prepared is None:
        prepared = adiabatic_prepare(basis, params, terms=terms, settings=settings).psi
    ref = modulation_ramp_probe(
        basis, params, pulse.with_(amplitude=0.0), ramp_out, readout, prepared=prepared, terms=terms, settings=settings
    ).value

    def point(f: float) -> float:
        return modulation_ramp_probe(
            basis,
            params,
            pulse.with_(frequency=float(f)),
            ramp_out,
            readout,
            prepared=prepared,
            reference=ref,
            terms=terms,
            settings=settings,
        ).delta_n

    values = np.array(list(mapper(point, list(frequencies))))
    return ResponseCurve(
        frequencies=np.asarray(frequencies, dtype=np.float64),
        values=values,
        kind="delta_n",
        provenance={"source": "modulation_ramp_probe", "readout": readout, "L": basis.L, "pulse": pulse.model_dump()},
    )


def modulation_probe(
    basis: ConstrainedBasis,
    params: ChainParams,
    pulse: ModulationPulse,
    K: SparseOperator,
    *,
    initial: np.ndarray | None = None,
    phase_cycle: bool = False,
    terms: HamiltonianTerms | None = None,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
) -> float:
    """delta<K> = <K(T)> - <K(0)>; with phase_cycle, (delta(phi) - delta(phi + pi)) / 2."""
    terms = terms if terms is not None else build_terms(basis, params)
    if initial is None:
        initial = eigensolve_lowest(terms.assemble(), 1).ground_state.astype(np.complex128)
    before = K.expectation(initial)

    def run(p: ModulationPulse) -> float:
        schedule = Schedule(segments=(p.segment(params.delta, params.omega),))
        return K.expectation(propagate(initial, basis, params, schedule, terms=terms, settings=settings).psi) - before

    if not phase_cycle:
        return run(pulse)
    return 0.5 * (run(pulse) - run(pulse.with_(phase=pulse.phase + math.pi)))


def modulation_probe_scan(
    basis: ConstrainedBasis,
    params: ChainParams,
    pulse: ModulationPulse,
    K: SparseOperator,
    frequencies: Sequence[float],
    *,
    phase_cycle: bool = True,
    max_response_phase: bool = True,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    mapper: Mapper = map,
) -> ResponseCurve:
    terms = build_terms(basis, params)
    ground = eigensolve_lowest(terms.assemble(), 1).ground_state.astype(np.complex128)

    def point(f: float) -> float:
        phase = phase_for_max_response(f, pulse.duration) if max_response_phase else pulse.phase
        return modulation_probe(
            basis,
            params,
            pulse.with_(frequency=float(f), phase=phase),
            K,
            initial=ground,
            phase_cycle=phase_cycle,
            terms=terms,
            settings=settings,
        )

    values = np.array(list(mapper(point, list(frequencies))))
    return ResponseCurve(
        frequencies=np.asarray(frequencies, dtype=np.float64),
        values=values,
        kind="linear_response",
        provenance={
            "source": "modulation_probe",
            "phase_cycle": phase_cycle,
            "L": basis.L,
            "pulse": pulse.model_dump(),
        },
    )


def quench_evolve(
    basis: ConstrainedBasis,
    params: ChainParams,
    prepare_near: float,
    hold_at_crit: float,
    times: Sequence[float],
    *,
    observable: SparseOperator | None = None,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
) -> TimeSeries:
    """Ground state at Delta = prepare_near, then hold at Delta = hold_at_crit; samples sum_i <sigma_i>."""
    if prepare_near == hold_at_crit:
        raise DomainError("prepare_near must differ from the critical detuning")
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0 or times.max() <= 0:
        raise ValidationError("quench needs at least one positive time")
    near = build_terms(basis, params.replace(delta=prepare_near))
    psi0 = eigensolve_lowest(near.assemble(), 1).ground_state.astype(np.complex128)
    observable = observable if observable is not None else total_cdw_operator(basis)
    crit = params.replace(delta=hold_at_crit)
    schedule = Schedule(segments=(hold(float(times.max()), hold_at_crit, params.omega, label="quench_hold"),))
    result = propagate(
        psi0, basis, crit, schedule, settings=settings, sample_times=times, observables={"sigma_total": observable}
    )
    return result.samples["sigma_total"]


# ---------------------------------------------------------------------------
# Coherent control
# ---------------------------------------------------------------------------


def _square_pulse(frequency: float, amplitude: float, duration: float, phase: float = 0.0) -> ModulationPulse:
    return ModulationPulse(
        amplitude=amplitude, frequency=frequency, phase=phase, duration=duration, envelope="square"
    )


def rabi_scan(
    basis: ConstrainedBasis,
    params: ChainParams,
    frequency: float,
    amplitude: float,
    durations: Sequence[float],
    readout: Readout = "z2",
    *,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    mapper: Mapper = map,
) -> TimeSeries:
    """delta_n after a square resonant drive of variable length followed by the readout ramp."""
    _check_readout(basis, readout)
    terms = build_terms(basis, params)
    prepared = adiabatic_prepare(basis, params, terms=terms, settings=settings).psi

    def point(t: float) -> float:
        if t <= 0:
            return 0.0
        return modulation_ramp_probe(
            basis,
            params,
            _square_pulse(frequency, amplitude, float(t)),
            None,
            readout,
            prepared=prepared,
            terms=terms,
            settings=settings,
        ).delta_n

    values = np.array(list(mapper(point, list(durations))))
    return TimeSeries(np.asarray(durations, dtype=np.float64), values, "delta_n")


def ramsey_scan(
    basis: ConstrainedBasis,
    params: ChainParams,
    frequency: float,
    amplitude: float,
    pi_half_time: float,
    waits: Sequence[float],
    readout: Readout = "z2",
    *,
    settings: IntegratorSettings = DEFAULT_SETTINGS,
    mapper: Mapper = map,
) -> TimeSeries:
    """Two pi/2 pulses (each restarting at phase 0) around a free wait; P_e ~ [1 + cos(E1 t)] / 2."""
    _check_readout(basis, readout)
    terms = build_terms(basis, params)
    prepared = adiabatic_prepare(basis, params, terms=terms, settings=settings).psi
    O = readout_operator(basis, readout)
    ramp_out = sweep_out(params.delta, params.omega, readout)
    pulse = _square_pulse(frequency, amplitude, pi_half_time).segment(params.delta, params.omega)
    reference = propagate(prepared, basis, params, Schedule(segments=(ramp_out,)), terms=terms, settings=settings)
    ref_value = O.expectation(reference.psi)

    def point(wait: float) -> float:
        segments: list[Segment] = [pulse]
        if wait > 0:
            segments.append(hold(float(wait), params.delta, params.omega, label="ramsey_wait"))
        segments += [pulse, ramp_out]
        out = propagate(prepared, basis, params, Schedule(segments=tuple(segments)), terms=terms, settings=settings)
        return O.expectation(out.psi) - ref_value

    values = np.array(list(mapper(point, list(waits))))
    return TimeSeries(np.asarray(waits, dtype=np.float64), values, "delta_n")
