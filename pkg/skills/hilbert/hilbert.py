"""
hilbert — blockade-constrained Hilbert space of an open Rydberg chain.

States are bit-packed integers, one bit per site, site 1 = least significant
bit. A state is allowed when no two adjacent sites are both in |1>, so the
dimension follows the Fibonacci recursion d(L) = d(L-1) + d(L-2).

Usage:
    basis = enumerate_basis(19)          # 10946 states, ascending order
    perm = reflection_permutation(basis)  # i -> L+1-i on ordinals
    n3 = local_number_operator(basis, 3)
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from skills.errors import BasisSizeError, SiteRangeError

MAX_SITES = 31
"""Cap for full enumeration; d(31) = 3524578 states."""


# ---------------------------------------------------------------------------
# Sparse operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseOperator:
    """Real symmetric operator stored as CSR in the constrained basis."""

    matrix: sp.csr_matrix

    @classmethod
    def from_diagonal(cls, values: np.ndarray) -> SparseOperator:
        return cls(sp.diags(np.asarray(values, dtype=np.float64), format="csr"))

    @classmethod
    def zeros(cls, dim: int) -> SparseOperator:
        return cls(sp.csr_matrix((dim, dim), dtype=np.float64))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def expectation(self, psi: np.ndarray) -> float:
        return float(np.real(np.vdot(psi, self.matrix @ psi)))

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def is_diagonal(self) -> bool:
        coo = self.matrix.tocoo()
        return bool(np.all(coo.row[coo.data != 0] == coo.col[coo.data != 0]))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def entries(self) -> Iterator[tuple[int, int, float]]:
        """Yield (row, col, value) triples, both triangles."""
        coo = self.matrix.tocoo()
        for r, c, v in zip(coo.row, coo.col, coo.data, strict=True):
            yield int(r), int(c), float(v)

    def max_asymmetry(self) -> float:
        diff = self.matrix - self.matrix.T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def is_hermitian(self, tol: float = 0.0) -> bool:
        return self.max_asymmetry() <= tol

    def __add__(self, other: SparseOperator) -> SparseOperator:
        return SparseOperator((self.matrix + other.matrix).tocsr())

    def __sub__(self, other: SparseOperator) -> SparseOperator:
        return SparseOperator((self.matrix - other.matrix).tocsr())

    def __mul__(self, scale: float) -> SparseOperator:
        return SparseOperator((self.matrix * float(scale)).tocsr())

    __rmul__ = __mul__

    def __matmul__(self, other: SparseOperator) -> SparseOperator:
        return SparseOperator((self.matrix @ other.matrix).tocsr())


# ---------------------------------------------------------------------------
# Basis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstrainedBasis:
    L: int
    states: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(self.states.size)

    @property
    def dim(self) -> int:
        return int(self.states.size)

    def index(self, state: int | np.ndarray) -> int | np.ndarray:
        """Ordinal of a bit pattern (or array of patterns); KeyError when not in the basis."""
        pos = np.searchsorted(self.states, state)
        pos_clipped = np.minimum(pos, self.dim - 1)
        found = self.states[pos_clipped] == state
        if not np.all(found):
            raise KeyError(f"state not in constrained basis: {state}")
        if np.ndim(pos) == 0:
            return int(pos)
        return pos_clipped

    def index_of_label(self, label: str) -> int:
        return int(self.index(parse_label(label, self.L)))

    def label(self, ordinal: int) -> str:
        return state_label(int(self.states[ordinal]), self.L)

    def site_occupation(self, site: int) -> np.ndarray:
        """0/1 occupation of `site` (1-based) for every basis state."""
        _check_site(site, self.L)
        return ((self.states >> (site - 1)) & 1).astype(np.float64)

    @cached_property
    def total_occupation(self) -> np.ndarray:
        return np.bitwise_count(self.states).astype(np.float64)


def dimension(L: int) -> int:
    """d(L) from the Fibonacci recursion, d(0) = 1 (empty chain)."""
    a, b = 1, 2
    for _ in range(L - 1):
        a, b = b, a + b
    return b if L >= 1 else a


def enumerate_basis(L: int) -> ConstrainedBasis:
    if not 1 <= L <= MAX_SITES:
        raise BasisSizeError(f"L must be in 1..{MAX_SITES}, got {L}")
    prev = np.array([0], dtype=np.int64)  # L = 0
    cur = np.array([0, 1], dtype=np.int64)  # L = 1
    for n in range(2, L + 1):
        # site n occupied forces site n-1 empty: append (states of n-2 sites) | bit n
        prev, cur = cur, np.concatenate([cur, prev | np.int64(1 << (n - 1))])
    cur.setflags(write=False)
    return ConstrainedBasis(L=L, states=cur)


def is_allowed(state: int) -> bool:
    return (state & (state >> 1)) == 0


def state_label(state: int, L: int) -> str:
    """Site 1 first, e.g. 0b0101 with L=4 -> '1010'."""
    return "".join("1" if (state >> i) & 1 else "0" for i in range(L))


def parse_label(label: str, L: int) -> int:
    if len(label) != L or set(label) - {"0", "1"}:
        raise ValueError(f"expected {L} characters of 0/1, got {label!r}")
    return sum(1 << i for i, ch in enumerate(label) if ch == "1")


def _check_site(site: int, L: int) -> None:
    if not 1 <= site <= L:
        raise SiteRangeError(f"site {site} outside 1..{L}")


# ---------------------------------------------------------------------------
# Reflection
# ---------------------------------------------------------------------------


def _reverse_bits(states: np.ndarray, L: int) -> np.ndarray:
    out = np.zeros_like(states)
    for i in range(L):
        out |= ((states >> i) & 1) << (L - 1 - i)
    return out


def reflection_permutation(basis: ConstrainedBasis) -> np.ndarray:
    """perm[k] is the ordinal of the site-reversed image of state k."""
    perm = np.searchsorted(basis.states, _reverse_bits(basis.states, basis.L))
    perm.setflags(write=False)
    return perm


def reflection_matrix(basis: ConstrainedBasis) -> SparseOperator:
    perm = reflection_permutation(basis)
    d = basis.dim
    mat = sp.csr_matrix((np.ones(d), (perm, np.arange(d))), shape=(d, d))
    return SparseOperator(mat)


# ---------------------------------------------------------------------------
# Local operators
# ---------------------------------------------------------------------------


def local_number_operator(basis: ConstrainedBasis, site: int) -> SparseOperator:
    return SparseOperator.from_diagonal(basis.site_occupation(site))


def total_number_operator(basis: ConstrainedBasis) -> SparseOperator:
    return SparseOperator.from_diagonal(basis.total_occupation)
