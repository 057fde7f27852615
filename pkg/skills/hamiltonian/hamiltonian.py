"""
hamiltonian — Rydberg chain Hamiltonian in the blockade-constrained space.

    H = sum_i [ (Omega/2) P_{i-1} X_i P_{i+1} - (Delta + dDelta_i) n_i ]
        + sum_{j-i>=2} 64 V2 / |i-j|^6 n_i n_j
        + H2                                  (optional, finite-V1 correction)
        - eta * sum_i dDelta^bd_i n_i          (boundary-detuning family)

Energies are stored in units of 2*pi*MHz: a stored value of 6.0 means
Omega = 2*pi x 6.0 MHz, and the matching spectroscopy frequency is 6.0 MHz.

Usage:
    basis = enumerate_basis(7)
    p = ChainParams(L=7, omega=6.0, delta=8.8, v1=164.6, v2=3.06, include_h2=True)
    H = build_hamiltonian(basis, p)
    terms = build_terms(basis, p)          # reusable decomposition for scans
    H_shifted = terms.assemble(delta=9.0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator

from skills.errors import DomainError, SiteRangeError
from skills.hilbert.hilbert import MAX_SITES, ConstrainedBasis, SparseOperator

TAIL_PREFACTOR = 64.0  # V_ij = 64 V2 / |i-j|^6 so that V_{i,i+2} = V2


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


class ChainParams(BaseModel):
    """All Hamiltonian parameters; energies in 2*pi*MHz."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    L: int = Field(ge=1, le=MAX_SITES)
    omega: float
    delta: float = 0.0
    v1: float | None = None
    v2: float = 0.0
    local_detunings: tuple[float, ...] | None = None
    eta: float = Field(default=0.0, ge=0.0, le=1.0)
    include_h2: bool = False
    tail_range: int | Literal["all"] = "all"

    @model_validator(mode="after")
    def _check(self) -> ChainParams:
        if self.local_detunings is not None and len(self.local_detunings) != self.L:
            raise ValueError(f"local_detunings has {len(self.local_detunings)} entries, expected L={self.L}")
        if isinstance(self.tail_range, int) and self.tail_range < 1:
            raise ValueError("tail_range must be >= 1 or 'all'")
        if self.include_h2 and self.v1 is None:
            raise ValueError("include_h2 requires v1")
        return self

    @property
    def detunings(self) -> np.ndarray:
        if self.local_detunings is None:
            return np.zeros(self.L)
        return np.asarray(self.local_detunings, dtype=np.float64)

    @property
    def max_tail(self) -> int:
        return self.L - 1 if self.tail_range == "all" else min(int(self.tail_range), self.L - 1)

    def _require_omega(self) -> None:
        if self.omega == 0:
            raise DomainError("dimensionless ratios need omega != 0")

    @property
    def v2_over_omega(self) -> float:
        self._require_omega()
        return self.v2 / self.omega

    @property
    def delta_over_omega(self) -> float:
        self._require_omega()
        return self.delta / self.omega

    def replace(self, **changes: object) -> ChainParams:
        """Validated copy with fields replaced."""
        return ChainParams.model_validate({**self.model_dump(), **changes})


# Published configurations: Ising with V2/Omega = +0.51 and -0.51, and the TCI point.
PUBLISHED_CONFIGS: dict[str, dict[str, object]] = {
    "ising_repulsive": {"omega": 6.0, "v2": 3.06, "v1": 164.6, "include_h2": True, "delta": 10.2},
    "ising_attractive": {"omega": 6.0, "v2": -3.06, "delta": -0.9},
    "tci": {"omega": 5.5, "v2": -8.96, "delta": -8.3},
}


def published_params(name: str, L: int, **overrides: object) -> ChainParams:
    try:
        base = PUBLISHED_CONFIGS[name]
    except KeyError as exc:
        raise DomainError(f"unknown configuration {name!r}; choose from {sorted(PUBLISHED_CONFIGS)}") from exc
    return ChainParams.model_validate({"L": L, **base, **overrides})


def fss_params(L: int, omega: float, delta: float, v2: float) -> ChainParams:
    """FSS mode: tails truncated at |i-j| = 2, no H2."""
    return ChainParams(L=L, omega=omega, delta=delta, v2=v2, tail_range=2)


# ---------------------------------------------------------------------------
# Term builders
# ---------------------------------------------------------------------------


def _pair_count(states: np.ndarray, distance: int) -> np.ndarray:
    return np.bitwise_count(states & (states >> distance)).astype(np.float64)


def _symmetric(d: int, src: np.ndarray, dst: np.ndarray, amp: float) -> sp.csr_matrix:
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    data = np.full(rows.size, amp, dtype=np.float64)
    return sp.csr_matrix((data, (rows, cols)), shape=(d, d))


def pxp_kinetic(basis: ConstrainedBasis) -> sp.csr_matrix:
    """sum_i (1/2) P_{i-1} X_i P_{i+1}; out-of-chain projectors are identity."""
    s = basis.states
    src_all, dst_all = [], []
    for b in range(basis.L):
        bit = np.int64(1 << b)
        neighbours = np.int64(0)
        if b > 0:
            neighbours |= np.int64(1 << (b - 1))
        if b < basis.L - 1:
            neighbours |= np.int64(1 << (b + 1))
        src = np.nonzero(((s & bit) == 0) & ((s & neighbours) == 0))[0]
        src_all.append(src)
        dst_all.append(np.searchsorted(s, s[src] | bit))
    src = np.concatenate(src_all) if src_all else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst_all) if dst_all else np.zeros(0, dtype=np.int64)
    return _symmetric(basis.dim, src, dst, 0.5)


def h2_hopping(basis: ConstrainedBasis) -> sp.csr_matrix:
    """sum_i (P_{i-1} b_i^dag b_{i+1} P_{i+2} + h.c.) scaled by -1/4 (unit Omega^2/V1)."""
    s = basis.states
    L = basis.L
    src_all, dst_all = [], []
    for i in range(1, L):  # sites i, i+1 exist
        site_i = np.int64(1 << (i - 1))
        site_next = np.int64(1 << i)
        guard = np.int64(0)
        if i >= 2:
            guard |= np.int64(1 << (i - 2))
        if i + 2 <= L:
            guard |= np.int64(1 << (i + 1))
        src = np.nonzero(((s & site_next) != 0) & ((s & guard) == 0))[0]
        src_all.append(src)
        dst_all.append(np.searchsorted(s, (s[src] ^ site_next) | site_i))
    src = np.concatenate(src_all) if src_all else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst_all) if dst_all else np.zeros(0, dtype=np.int64)
    return _symmetric(basis.dim, src, dst, -0.25)


def h2_diagonal(basis: ConstrainedBasis) -> np.ndarray:
    """-1/4 [ sum_i 2 n_i - 3/2 n_{i-1} n_{i+1} ] at unit Omega^2/V1."""
    return -0.25 * (2.0 * basis.total_occupation - 1.5 * _pair_count(basis.states, 2))


def interaction_diagonal(basis: ConstrainedBasis, v2: float, max_tail: int) -> np.ndarray:
    diag = np.zeros(basis.dim)
    if v2 == 0:
        return diag
    for distance in range(2, max_tail + 1):
        diag += TAIL_PREFACTOR * v2 / distance**6 * _pair_count(basis.states, distance)
    return diag


def boundary_detuning_profile(L: int, v2: float) -> np.ndarray:
    """dDelta_i = -64 V2 [(i+1)^-6 + (L+2-i)^-6], i = 1..L."""
    i = np.arange(1, L + 1, dtype=np.float64)
    return -TAIL_PREFACTOR * v2 * ((i + 1.0) ** -6 + (L + 2.0 - i) ** -6)


def _site_weighted_number(basis: ConstrainedBasis, weights: np.ndarray) -> np.ndarray:
    out = np.zeros(basis.dim)
    for site, w in enumerate(weights, start=1):
        if w != 0:
            out += w * basis.site_occupation(site)
    return out


# ---------------------------------------------------------------------------
# Assembled decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HamiltonianTerms:
    """H(Omega, Delta) = Omega*kinetic + (Omega^2/V1)*h2 - Delta*number + static."""

    basis: ConstrainedBasis
    params: ChainParams
    kinetic: sp.csr_matrix
    h2_offdiag: sp.csr_matrix | None
    h2_diag: np.ndarray | None
    number: np.ndarray
    static_diag: np.ndarray

    def h2_scale(self, omega: float) -> float:
        if self.h2_offdiag is None:
            return 0.0
        return omega**2 / float(self.params.v1)  # type: ignore[arg-type]

    def diagonal(self, omega: float | None = None, delta: float | None = None) -> np.ndarray:
        omega = self.params.omega if omega is None else omega
        delta = self.params.delta if delta is None else delta
        diag = self.static_diag - delta * self.number
        if self.h2_diag is not None:
            diag = diag + self.h2_scale(omega) * self.h2_diag
        return diag

    def offdiag(self, omega: float | None = None) -> sp.csr_matrix:
        omega = self.params.omega if omega is None else omega
        mat = self.kinetic * omega
        if self.h2_offdiag is not None:
            mat = mat + self.h2_offdiag * self.h2_scale(omega)
        return mat.tocsr()

    def assemble(
        self,
        omega: float | None = None,
        delta: float | None = None,
        extra_diag: np.ndarray | None = None,
    ) -> SparseOperator:
        diag = self.diagonal(omega, delta)
        if extra_diag is not None:
            diag = diag + extra_diag
        return SparseOperator((self.offdiag(omega) + sp.diags(diag)).tocsr())


def build_terms(basis: ConstrainedBasis, p: ChainParams) -> HamiltonianTerms:
    if basis.L != p.L:
        raise DomainError(f"basis has L={basis.L} but params have L={p.L}")
    if p.include_h2 and not p.v1:
        raise DomainError("H2 correction needs a finite non-zero v1")
    local = p.detunings + p.eta * boundary_detuning_profile(p.L, p.v2)
    static = interaction_diagonal(basis, p.v2, p.max_tail) - _site_weighted_number(basis, local)
    return HamiltonianTerms(
        basis=basis,
        params=p,
        kinetic=pxp_kinetic(basis),
        h2_offdiag=h2_hopping(basis) if p.include_h2 else None,
        h2_diag=h2_diagonal(basis) if p.include_h2 else None,
        number=basis.total_occupation.copy(),
        static_diag=static,
    )


def build_hamiltonian(basis: ConstrainedBasis, p: ChainParams) -> SparseOperator:
    return build_terms(basis, p).assemble()


def build_h2_correction(basis: ConstrainedBasis, p: ChainParams) -> SparseOperator:
    if not p.v1:
        raise DomainError("H2 correction divides by v1; v1 must be finite and non-zero")
    scale = p.omega**2 / p.v1
    return SparseOperator((h2_hopping(basis) * scale + sp.diags(h2_diagonal(basis) * scale)).tocsr())


def build_h_eta(basis: ConstrainedBasis, p_tci: ChainParams, eta: float) -> SparseOperator:
    """H_eta = H_TCI - eta * sum_i dDelta_i n_i (fixed boundary at eta = 1)."""
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta must lie in [0, 1], got {eta}")
    return build_hamiltonian(basis, p_tci.replace(eta=eta))


# ---------------------------------------------------------------------------
# Observables and drive operators
# ---------------------------------------------------------------------------


def _check_bond(basis: ConstrainedBasis, bond: int) -> None:
    if not 1 <= bond <= basis.L - 1:
        raise SiteRangeError(f"bond {bond}+1/2 outside 1..{basis.L - 1}")


def cdw_operator(basis: ConstrainedBasis, bond: int) -> SparseOperator:
    """sigma_{i+1/2} = (-1)^(i+1) (n_i - n_{i+1}) for bond = i."""
    _check_bond(basis, bond)
    sign = 1.0 if bond % 2 == 1 else -1.0
    return SparseOperator.from_diagonal(sign * (basis.site_occupation(bond) - basis.site_occupation(bond + 1)))


def epsilon_operator(basis: ConstrainedBasis, bond: int) -> SparseOperator:
    """Lattice energy-density operator eps_{i+1/2} = n_i + n_{i+1}."""
    _check_bond(basis, bond)
    return SparseOperator.from_diagonal(basis.site_occupation(bond) + basis.site_occupation(bond + 1))


def total_cdw_operator(basis: ConstrainedBasis) -> SparseOperator:
    diag = np.zeros(basis.dim)
    for bond in range(1, basis.L):
        diag += cdw_operator(basis, bond).diagonal()
    return SparseOperator.from_diagonal(diag)


@dataclass(frozen=True)
class EdgeCdw:
    """sigma_edge = (|<sigma_{3/2}>| + |<sigma_{L-1/2}>|) / 2."""

    left: SparseOperator
    right: SparseOperator

    def evaluate(self, psi: np.ndarray) -> float:
        return 0.5 * (abs(self.left.expectation(psi)) + abs(self.right.expectation(psi)))


def edge_cdw_observable(basis: ConstrainedBasis) -> EdgeCdw:
    if basis.L < 2:
        raise SiteRangeError("edge CDW needs at least two sites")
    return EdgeCdw(left=cdw_operator(basis, 1), right=cdw_operator(basis, basis.L - 1))


def centered_coordinates(L: int) -> np.ndarray:
    """j_i = i - 1 - floor((L-1)/2), so odd chains run -(L-1)/2..(L-1)/2."""
    return np.arange(L, dtype=np.float64) - (L - 1) // 2


def odd_parity_profile(L: int) -> np.ndarray:
    """c_i = cos(pi (i-1) / (L-1)); antisymmetric under i -> L+1-i."""
    if L < 2:
        raise SiteRangeError("odd-parity profile needs L >= 2")
    return np.cos(math.pi * np.arange(L) / (L - 1))


def k_mode_profile(L: int, k: float, alpha: float = 0.0) -> np.ndarray:
    """c_i = cos(k j_i + alpha) on centered coordinates."""
    return np.cos(k * centered_coordinates(L) + alpha)


def uniform_profile(L: int) -> np.ndarray:
    return np.ones(L)


def drive_operator(basis: ConstrainedBasis, weights: np.ndarray) -> SparseOperator:
    """K = sum_i c_i n_i."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size != basis.L:
        raise SiteRangeError(f"expected {basis.L} weights, got {weights.size}")
    return SparseOperator.from_diagonal(_site_weighted_number(basis, weights))


# ---------------------------------------------------------------------------
# Unconstrained oracle (tests only)
# ---------------------------------------------------------------------------


def full_space_hamiltonian(p: ChainParams, v1_penalty: float) -> np.ndarray:
    """Dense 2^L Hamiltonian with plain Rabi coupling and an explicit V1 n_i n_{i+1} penalty."""
    L = p.L
    states = np.arange(1 << L, dtype=np.int64)
    H = np.zeros((states.size, states.size))
    for b in range(L):
        flipped = states ^ np.int64(1 << b)
        H[states, flipped] += 0.5 * p.omega
    diag = v1_penalty * _pair_count(states, 1)
    for distance in range(2, p.max_tail + 1):
        diag += TAIL_PREFACTOR * p.v2 / distance**6 * _pair_count(states, distance)
    local = p.detunings + p.eta * boundary_detuning_profile(L, p.v2)
    for b in range(L):
        diag -= (p.delta + local[b]) * ((states >> b) & 1)
    H[states, states] += diag
    return H
