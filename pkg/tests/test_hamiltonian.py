"""
tests/test_hamiltonian.py — Hamiltonian terms, boundary family and drive operators.

Verifies:
  1. Two-site blockade matrix and its ground energy -Omega/sqrt(2)
  2. Van der Waals tail energies 64 V2 / r^6
  3. H2 diagonal and hopping matrix elements at unit Omega^2/V1
  4. Constrained H equals the low sector of a large-penalty full-space H
  5. terms.assemble() tracks parameter changes without rebuilding
  6. eta, bond and weight validation
"""

from __future__ import annotations

import math

import numpy as np
import pydantic
import pytest

from skills.errors import DomainError, SiteRangeError
from skills.hamiltonian.hamiltonian import (
    PUBLISHED_CONFIGS,
    ChainParams,
    boundary_detuning_profile,
    build_h2_correction,
    build_h_eta,
    build_hamiltonian,
    build_terms,
    centered_coordinates,
    cdw_operator,
    drive_operator,
    edge_cdw_observable,
    epsilon_operator,
    fss_params,
    full_space_hamiltonian,
    h2_diagonal,
    k_mode_profile,
    odd_parity_profile,
    published_params,
)
from skills.hilbert.hilbert import enumerate_basis, reflection_permutation

# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def test_published_presets() -> None:
    p = published_params("ising_repulsive", 7)
    assert p.v2_over_omega == pytest.approx(0.51)
    assert p.delta_over_omega == pytest.approx(1.70)
    tci = published_params("tci", 9)
    assert tci.v2_over_omega == pytest.approx(-1.63, abs=0.01)
    assert set(PUBLISHED_CONFIGS) == {"ising_repulsive", "ising_attractive", "tci"}


def test_unknown_preset() -> None:
    with pytest.raises(DomainError):
        published_params("heisenberg", 5)


def test_h2_requires_v1() -> None:
    with pytest.raises(pydantic.ValidationError):
        ChainParams(L=5, omega=1.0, include_h2=True)


def test_local_detunings_length_checked() -> None:
    with pytest.raises(pydantic.ValidationError):
        ChainParams(L=3, omega=1.0, local_detunings=(0.1, 0.2))


def test_eta_outside_unit_interval() -> None:
    with pytest.raises(pydantic.ValidationError):
        ChainParams(L=3, omega=1.0, eta=1.5)
    with pytest.raises(DomainError):
        build_h_eta(enumerate_basis(3), ChainParams(L=3, omega=1.0), -0.1)


def test_ratio_needs_omega() -> None:
    with pytest.raises(DomainError):
        _ = ChainParams(L=3, omega=0.0, v2=1.0).v2_over_omega


def test_fss_mode_truncates_tails() -> None:
    p = fss_params(9, 1.0, 1.0, 0.5)
    assert p.max_tail == 2
    assert not p.include_h2


# ---------------------------------------------------------------------------
# Matrix elements
# ---------------------------------------------------------------------------


def test_two_site_matrix() -> None:
    basis = enumerate_basis(2)
    H = build_hamiltonian(basis, ChainParams(L=2, omega=1.0)).to_dense()
    i00, i10, i01 = (basis.index_of_label(s) for s in ("00", "10", "01"))
    np.testing.assert_allclose(np.diag(H), 0.0)
    assert H[i00, i10] == pytest.approx(0.5)
    assert H[i00, i01] == pytest.approx(0.5)
    assert H[i10, i01] == 0.0
    assert np.linalg.eigvalsh(H)[0] == pytest.approx(-1.0 / math.sqrt(2.0))


def test_tail_energy() -> None:
    basis = enumerate_basis(4)
    H = build_hamiltonian(basis, ChainParams(L=4, omega=0.0, v2=1.0)).to_dense()
    assert H[basis.index_of_label("1001"), basis.index_of_label("1001")] == pytest.approx(64 / 3**6)
    assert H[basis.index_of_label("1010"), basis.index_of_label("1010")] == pytest.approx(1.0)


def test_tail_range_cuts_long_distances() -> None:
    basis = enumerate_basis(4)
    H = build_hamiltonian(basis, ChainParams(L=4, omega=0.0, v2=1.0, tail_range=2)).to_dense()
    assert H[basis.index_of_label("1001"), basis.index_of_label("1001")] == 0.0


def test_h2_diagonal_next_nearest_pair() -> None:
    basis = enumerate_basis(3)
    diag = h2_diagonal(basis)
    # two excitations and one n_0 n_2 pair: -1/4 (2*2 - 3/2)
    assert diag[basis.index_of_label("101")] == pytest.approx(-0.25 * (4.0 - 1.5))
    assert diag[basis.index_of_label("010")] == pytest.approx(-0.5)


def test_h2_hopping_amplitude() -> None:
    basis = enumerate_basis(4)
    p = ChainParams(L=4, omega=2.0, v1=10.0, include_h2=True)
    H2 = build_h2_correction(basis, p).to_dense()
    a, b = basis.index_of_label("0100"), basis.index_of_label("0010")
    assert H2[a, b] == pytest.approx(-(2.0**2) / (4 * 10.0))
    assert H2[a, b] == H2[b, a]


def test_h2_needs_finite_v1() -> None:
    with pytest.raises(DomainError):
        build_h2_correction(enumerate_basis(3), ChainParams(L=3, omega=1.0))


def test_hamiltonian_symmetric() -> None:
    basis = enumerate_basis(9)
    H = build_hamiltonian(basis, published_params("ising_repulsive", 9))
    assert H.max_asymmetry() < 1e-12


def test_constrained_matches_full_space_low_spectrum() -> None:
    p = ChainParams(L=5, omega=1.0, delta=0.7, v2=0.3)
    constrained = np.linalg.eigvalsh(build_hamiltonian(enumerate_basis(5), p).to_dense())
    full = np.linalg.eigvalsh(full_space_hamiltonian(p, v1_penalty=1e4))
    np.testing.assert_allclose(full[:4], constrained[:4], atol=1e-3)


def test_terms_assemble_matches_rebuild() -> None:
    basis = enumerate_basis(7)
    p = published_params("ising_repulsive", 7)
    terms = build_terms(basis, p)
    shifted = terms.assemble(delta=9.0).to_dense()
    rebuilt = build_hamiltonian(basis, p.replace(delta=9.0)).to_dense()
    np.testing.assert_allclose(shifted, rebuilt, atol=1e-12)


def test_basis_params_mismatch() -> None:
    with pytest.raises(DomainError):
        build_terms(enumerate_basis(4), ChainParams(L=5, omega=1.0))


# ---------------------------------------------------------------------------
# Boundary family
# ---------------------------------------------------------------------------


def test_boundary_profile_reflection_symmetric() -> None:
    prof = boundary_detuning_profile(9, -8.96)
    np.testing.assert_allclose(prof, prof[::-1])
    assert prof[0] > prof[4] > 0  # attractive V2 raises the edge detuning


def test_eta_zero_is_plain_hamiltonian() -> None:
    basis = enumerate_basis(7)
    p = published_params("tci", 7)
    np.testing.assert_allclose(build_h_eta(basis, p, 0.0).to_dense(), build_hamiltonian(basis, p).to_dense())


# ---------------------------------------------------------------------------
# Observables and drives
# ---------------------------------------------------------------------------


def test_cdw_sign_alternates() -> None:
    basis = enumerate_basis(4)
    z2 = basis.index_of_label("1010")
    assert cdw_operator(basis, 1).diagonal()[z2] == 1.0
    assert cdw_operator(basis, 2).diagonal()[z2] == 1.0
    assert edge_cdw_observable(basis).left.diagonal()[z2] == 1.0


def test_epsilon_operator() -> None:
    basis = enumerate_basis(3)
    eps = epsilon_operator(basis, 2).diagonal()
    assert eps[basis.index_of_label("010")] == 1.0
    assert eps[basis.index_of_label("101")] == 1.0
    with pytest.raises(SiteRangeError):
        epsilon_operator(basis, 3)


def test_odd_profile_antisymmetric() -> None:
    c = odd_parity_profile(9)
    np.testing.assert_allclose(c, -c[::-1], atol=1e-12)


def test_k_mode_profile_centered() -> None:
    np.testing.assert_allclose(centered_coordinates(5), [-2, -1, 0, 1, 2])
    np.testing.assert_allclose(k_mode_profile(5, 0.0), np.ones(5))


def test_odd_drive_flips_reflection_parity() -> None:
    basis = enumerate_basis(7)
    perm = reflection_permutation(basis)
    K = drive_operator(basis, odd_parity_profile(7)).diagonal()
    np.testing.assert_allclose(K[perm], -K, atol=1e-12)


def test_drive_weight_count() -> None:
    with pytest.raises(SiteRangeError):
        drive_operator(enumerate_basis(4), np.ones(3))
