"""
tests/test_dynamics.py — schedules, Krylov propagation and the pulse sequences.

Verifies:
  1. Schedule builders: tangent endpoints, envelope defaults, max-response phase
  2. krylov_expm and propagate agree with dense matrix exponentials
  3. Sampling, norm checks and step-size validation
  4. Quench series equal the exact eigen-decomposed evolution; quench times must include a positive one
  5. Zero-amplitude sequences give zero response; readout validation
  6. Slow sweeps prepare the ground state (slow)
"""

from __future__ import annotations

import math

import numpy as np
import pydantic
import pytest
import scipy.linalg as la

from skills.dynamics.dynamics import (
    IntegratorSettings,
    adiabatic_prepare,
    initial_state,
    krylov_expm,
    modulation_probe,
    modulation_ramp_probe,
    propagate,
    quench_evolve,
    readout_operator,
)
from skills.dynamics.schedule import (
    ModulationPulse,
    Schedule,
    hold,
    omega_ramp_on,
    phase_for_max_response,
    sweep_in,
    sweep_out,
)
from skills.errors import DomainError, ValidationError
from skills.hamiltonian.hamiltonian import (
    ChainParams,
    build_hamiltonian,
    drive_operator,
    total_cdw_operator,
    uniform_profile,
)
from skills.hilbert.hilbert import enumerate_basis

TWO_PI = 2.0 * math.pi


def _params(L: int = 5, delta: float = 1.0) -> ChainParams:
    return ChainParams(L=L, omega=1.0, delta=delta, v2=0.3)


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


def test_sweep_in_starts_disordered_and_ends_at_target() -> None:
    seg = sweep_in(2.0, 1.0, theta0=1.45, duration=1.5)
    assert seg.delta(0.0, seg.duration) == pytest.approx(2.0 - math.tan(1.45))
    assert seg.delta(seg.duration, seg.duration) == pytest.approx(2.0)


def test_sweep_out_direction_follows_readout() -> None:
    z2 = sweep_out(2.0, 1.0, "z2")
    disordered = sweep_out(2.0, 1.0, "disordered")
    assert z2.delta(0.0, z2.duration) == pytest.approx(2.0)
    assert z2.delta(z2.duration, z2.duration) > 2.0
    assert disordered.delta(disordered.duration, disordered.duration) < 2.0


def test_omega_ramp_linear() -> None:
    seg = omega_ramp_on(0.2, -5.0, 6.0)
    assert seg.omega(0.0, 0.2) == 0.0
    assert seg.omega(0.1, 0.2) == pytest.approx(3.0)


def test_schedule_duration_and_boundaries() -> None:
    s = Schedule(segments=(hold(0.5, 0.0, 1.0), hold(0.25, 0.0, 1.0)))
    assert s.duration == pytest.approx(0.75)
    np.testing.assert_allclose(s.boundaries(), [0.0, 0.5, 0.75])


def test_empty_schedule_rejected() -> None:
    with pytest.raises(pydantic.ValidationError):
        Schedule(segments=())


def test_pulse_envelope_defaults() -> None:
    gaussian = ModulationPulse(amplitude=0.1, duration=3.0)
    assert gaussian.envelope_width == pytest.approx(0.5)
    assert gaussian.envelope_tail() == pytest.approx(math.exp(-9.0))
    square = gaussian.with_(envelope="square")
    assert square.envelope_width == math.inf
    assert square.envelope_tail() == 1.0


def test_pulse_waveform_peak() -> None:
    pulse = ModulationPulse(amplitude=0.2, frequency=1.0, duration=2.0, width=0.5)
    wave = pulse.waveform()
    assert wave(1.0, 2.0) == pytest.approx(0.2)
    assert pulse.with_(raised=True).waveform()(1.0, 2.0) == pytest.approx(0.4)


def test_phase_for_max_response() -> None:
    assert phase_for_max_response(0.0, 1.0) == pytest.approx(-math.pi / 2)
    assert phase_for_max_response(1.0, 0.25, sign=1) == pytest.approx(0.0)


def test_custom_profile_length_checked() -> None:
    pulse = ModulationPulse(amplitude=0.1, duration=1.0, profile="custom", weights=(1.0, 0.0))
    with pytest.raises(DomainError):
        pulse.weights_for(3)


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


def test_krylov_matches_expm() -> None:
    rng = np.random.Generator(np.random.Philox(key=3))
    A = rng.standard_normal((30, 30))
    H = 0.5 * (A + A.T)
    psi = rng.standard_normal(30) + 1j * rng.standard_normal(30)
    psi /= np.linalg.norm(psi)
    out, err = krylov_expm(lambda v: H @ v, psi, 0.05, 16)
    np.testing.assert_allclose(out, la.expm(-1j * 0.05 * H) @ psi, atol=1e-10)
    assert err < 1e-8


def test_static_propagation_matches_expm() -> None:
    basis = enumerate_basis(5)
    p = _params()
    H = build_hamiltonian(basis, p).to_dense()
    result = propagate(initial_state(basis), basis, p, Schedule(segments=(hold(0.7, p.delta, p.omega),)))
    exact = la.expm(-1j * TWO_PI * 0.7 * H) @ initial_state(basis)
    np.testing.assert_allclose(result.psi, exact, atol=1e-6)
    assert result.norm_drift < 1e-8
    assert result.steps > 0


def test_samples_at_requested_times() -> None:
    basis = enumerate_basis(5)
    p = _params()
    op = total_cdw_operator(basis)
    result = propagate(
        initial_state(basis),
        basis,
        p,
        Schedule(segments=(hold(0.3, p.delta, p.omega), hold(0.3, p.delta, p.omega))),
        sample_times=[0.0, 0.3, 0.45, 0.6],
        observables={"cdw": op},
    )
    series = result.samples["cdw"]
    np.testing.assert_allclose(series.times, [0.0, 0.3, 0.45, 0.6])
    assert series.values[0] == pytest.approx(op.expectation(initial_state(basis)))
    assert series.to_frame().columns.tolist() == ["t_us", "cdw"]


def test_unnormalized_initial_state() -> None:
    basis = enumerate_basis(3)
    p = _params(3)
    with pytest.raises(DomainError):
        propagate(2 * initial_state(basis), basis, p, Schedule(segments=(hold(0.1, 0.0, 1.0),)))


def test_settings_bounds() -> None:
    with pytest.raises(pydantic.ValidationError):
        IntegratorSettings(krylov_dim=2)


# ---------------------------------------------------------------------------
# Sequences
# ---------------------------------------------------------------------------


def test_quench_matches_exact_evolution() -> None:
    basis = enumerate_basis(5)
    p = _params(delta=1.0)
    times = np.linspace(0.0, 1.0, 11)
    series = quench_evolve(basis, p, 2.0, 1.0, times)

    H_near = build_hamiltonian(basis, p.replace(delta=2.0)).to_dense()
    psi0 = np.linalg.eigh(H_near)[1][:, 0].astype(np.complex128)
    H = build_hamiltonian(basis, p).to_dense()
    sigma = total_cdw_operator(basis).to_dense()
    exact = []
    for t in times:
        psi = la.expm(-1j * TWO_PI * t * H) @ psi0
        exact.append(np.real(np.vdot(psi, sigma @ psi)))
    np.testing.assert_allclose(series.values, exact, atol=1e-6)


def test_quench_needs_distinct_detunings() -> None:
    with pytest.raises(DomainError):
        quench_evolve(enumerate_basis(3), _params(3), 1.0, 1.0, [0.0, 0.1])


@pytest.mark.parametrize("times", [[], [0.0], [0.0, -0.1]])
def test_quench_needs_a_positive_time(times: list[float]) -> None:
    with pytest.raises(ValidationError, match="at least one positive time"):
        quench_evolve(enumerate_basis(3), _params(3), 2.0, 1.0, times)


def test_modulation_probe_zero_amplitude() -> None:
    basis = enumerate_basis(5)
    p = _params()
    K = drive_operator(basis, uniform_profile(5))
    pulse = ModulationPulse(amplitude=0.0, frequency=1.0, duration=0.5)
    assert modulation_probe(basis, p, pulse, K) == pytest.approx(0.0, abs=1e-9)


def test_modulation_probe_phase_cycle_cancels_even_orders() -> None:
    basis = enumerate_basis(5)
    p = _params()
    K = drive_operator(basis, uniform_profile(5))
    pulse = ModulationPulse(amplitude=0.02, frequency=1.3, duration=1.0, envelope="square")
    small = modulation_probe(basis, p, pulse, K, phase_cycle=True)
    large = modulation_probe(basis, p, pulse.with_(amplitude=0.04), K, phase_cycle=True)
    # odd in A: doubling A doubles the response up to O(A^3)
    assert large / small == pytest.approx(2.0, rel=1e-2)


def test_readout_operators() -> None:
    basis = enumerate_basis(3)
    z2 = readout_operator(basis, "z2").diagonal()
    assert z2[basis.index_of_label("000")] == 3.0
    assert z2[basis.index_of_label("101")] == 1.0
    assert readout_operator(basis, "disordered").diagonal()[basis.index_of_label("101")] == 2.0


def test_even_chain_rejects_z2_readout() -> None:
    basis = enumerate_basis(4)
    pulse = ModulationPulse(amplitude=0.01, duration=0.2)
    with pytest.raises(DomainError):
        modulation_ramp_probe(basis, _params(4), pulse, readout="z2", prepared=initial_state(basis))


@pytest.mark.slow
def test_slow_sweep_prepares_ground_state() -> None:
    basis = enumerate_basis(5)
    p = ChainParams(L=5, omega=6.0, delta=10.2, v2=3.06)
    sweep = Schedule(segments=(sweep_in(p.delta, p.omega, duration=5.0),))
    prep = adiabatic_prepare(basis, p, sweep)
    assert prep.fidelity > 0.9
    assert prep.sweep.duration == pytest.approx(5.0)
