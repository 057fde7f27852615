"""
tests/test_spectral.py — eigensolver, parity labels and transition strengths.

Verifies:
  1. Dense and Lanczos paths agree on the lowest levels
  2. Every labelled eigenvector is a reflection eigenstate
  3. Uniform drives only connect the ground state to its own parity sector
  4. Strengths are complete when every state is computed
  5. L=7 full-Hamiltonian first gap reads 2.83 MHz
  6. Single-scale fit recovers an exact ladder
"""

from __future__ import annotations

import numpy as np
import pytest

from skills.errors import MissingVectorsError, ValidationError
from skills.hamiltonian.hamiltonian import (
    ChainParams,
    build_hamiltonian,
    drive_operator,
    odd_parity_profile,
    published_params,
    uniform_profile,
)
from skills.hilbert.hilbert import enumerate_basis, reflection_matrix
from skills.spectral import spectral
from skills.spectral.spectral import (
    degenerate_clusters,
    eigensolve_lowest,
    fit_single_scale,
    strongest_by_parity,
    transition_strengths,
)


def _ising(L: int):
    basis = enumerate_basis(L)
    params = published_params("ising_repulsive", L)
    return basis, params, build_hamiltonian(basis, params)


# ---------------------------------------------------------------------------
# Eigensolver
# ---------------------------------------------------------------------------


def test_two_site_ground_energy() -> None:
    basis = enumerate_basis(2)
    spec = eigensolve_lowest(build_hamiltonian(basis, ChainParams(L=2, omega=1.0)), 3, basis=basis)
    assert spec.energies[0] == pytest.approx(-1 / np.sqrt(2))
    assert spec.gaps[0] == 0.0


def test_energies_ascending_and_residual_small() -> None:
    basis, params, H = _ising(9)
    spec = eigensolve_lowest(H, 10, basis=basis, params=params)
    assert len(spec) == 10
    assert np.all(np.diff(spec.energies) >= 0)
    assert spec.max_residual < 1e-9
    assert spec.params == params


def test_lanczos_matches_dense(monkeypatch: pytest.MonkeyPatch) -> None:
    basis, _, H = _ising(11)
    dense = eigensolve_lowest(H, 6, with_vectors=False)
    monkeypatch.setattr(spectral, "DENSE_LIMIT", 10)
    sparse = eigensolve_lowest(H, 6, with_vectors=False)
    np.testing.assert_allclose(sparse.energies, dense.energies, atol=1e-8)
    assert sparse.vectors is None


def test_n_states_out_of_range() -> None:
    basis, _, H = _ising(3)
    with pytest.raises(ValidationError):
        eigensolve_lowest(H, basis.dim + 1)
    with pytest.raises(ValidationError):
        eigensolve_lowest(H, 0)


def test_ground_state_requires_vectors() -> None:
    _, _, H = _ising(5)
    with pytest.raises(MissingVectorsError):
        _ = eigensolve_lowest(H, 2, with_vectors=False).ground_state


def test_degenerate_clusters() -> None:
    assert degenerate_clusters(np.array([0.0, 1.0, 1.0 + 1e-12, 2.0])) == [[0], [1, 2], [3]]


# ---------------------------------------------------------------------------
# Parity
# ---------------------------------------------------------------------------


def test_vectors_are_reflection_eigenstates() -> None:
    basis, _, H = _ising(9)
    spec = eigensolve_lowest(H, 12, basis=basis)
    R = reflection_matrix(basis).matrix
    for i, parity in enumerate(spec.parities):
        assert parity in (-1, 1)
        v = spec.vectors[:, i]
        np.testing.assert_allclose(R @ v, parity * v, atol=1e-8)
    assert spec.ambiguous == []


def test_uniform_drive_selection_rule() -> None:
    basis, _, H = _ising(9)
    spec = eigensolve_lowest(H, 16, basis=basis)
    table = transition_strengths(spec, drive_operator(basis, uniform_profile(9)))
    forbidden = table.strengths[table.parities != spec.parities[0]]
    assert forbidden.size > 0
    assert np.max(forbidden) < 1e-20


def test_odd_drive_selects_opposite_parity() -> None:
    basis, _, H = _ising(9)
    spec = eigensolve_lowest(H, 16, basis=basis)
    table = transition_strengths(spec, drive_operator(basis, odd_parity_profile(9)))
    same = table.strengths[table.parities == spec.parities[0]]
    assert np.max(same) < 1e-20
    assert table.diagonal < 1e-20


# ---------------------------------------------------------------------------
# Transition strengths
# ---------------------------------------------------------------------------


def test_completeness_with_all_states() -> None:
    basis, _, H = _ising(6)
    spec = eigensolve_lowest(H, basis.dim, basis=basis)
    table = transition_strengths(spec, drive_operator(basis, uniform_profile(6)))
    assert table.completeness_residual() < 1e-10


def test_strongest_by_parity_ordered_by_gap() -> None:
    basis, _, H = _ising(9)
    spec = eigensolve_lowest(H, 20, basis=basis)
    table = transition_strengths(spec, drive_operator(basis, uniform_profile(9)))
    top = strongest_by_parity(table, int(spec.parities[0]), 3)
    assert top.gaps.size == 3
    assert np.all(np.diff(top.gaps) > 0)
    allowed = table.strengths[table.parities == spec.parities[0]]
    assert top.strengths.min() >= np.sort(allowed)[-3] - 1e-15


def test_missing_vectors() -> None:
    basis, _, H = _ising(5)
    spec = eigensolve_lowest(H, 3, with_vectors=False)
    with pytest.raises(MissingVectorsError):
        transition_strengths(spec, drive_operator(basis, uniform_profile(5)))


def test_spectrum_frame_with_strengths() -> None:
    basis, _, H = _ising(7)
    spec = eigensolve_lowest(H, 6, basis=basis)
    table = transition_strengths(spec, drive_operator(basis, uniform_profile(7)))
    frame = spec.to_frame(table)
    assert list(frame.columns) == ["index", "energy", "gap", "parity", "strength"]
    assert frame["strength"].iloc[0] == 0.0


def test_l7_first_gap() -> None:
    basis = enumerate_basis(7)
    params = published_params("ising_repulsive", 7, delta=8.8)
    spec = eigensolve_lowest(build_hamiltonian(basis, params), 6, basis=basis)
    assert spec.gaps[1] == pytest.approx(2.83, rel=0.03)


# ---------------------------------------------------------------------------
# Single-scale fit
# ---------------------------------------------------------------------------


def test_single_scale_exact_ladder() -> None:
    fit = fit_single_scale(np.array([1.0, 2.0, 3.0, 4.0]) * 0.7, np.array([2.0, 4.0, 6.0, 8.0]))
    assert fit.scale == pytest.approx(0.35)
    assert fit.max_relative_residual < 1e-12
