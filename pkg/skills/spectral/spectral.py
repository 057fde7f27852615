"""
spectral — lowest eigenpairs, reflection-parity labels and transition strengths.

Dense LAPACK for small spaces, ARPACK Lanczos (which='SA') above DENSE_LIMIT.
Degenerate clusters are rotated into reflection eigenstates before labeling.

Usage:
    spec = eigensolve_lowest(H, 20, basis=basis)
    table = transition_strengths(spec, drive_operator(basis, uniform_profile(L)))
    even = strongest_by_parity(table, parity=+1, count=4)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import scipy.linalg as la
import scipy.sparse.linalg as spla

from skills.errors import ConvergenceError, MissingVectorsError, ValidationError
from skills.hamiltonian.hamiltonian import ChainParams
from skills.hilbert.hilbert import ConstrainedBasis, SparseOperator, reflection_matrix

DENSE_LIMIT = 4000
DEGENERACY_TOL = 1e-8  # 2*pi*MHz
PARITY_THRESHOLD = 0.99
RESIDUAL_TOL = 1e-9
_EXTRA_STATES = 4  # computed beyond the request so boundary clusters are complete
_ARPACK_SEED = 20240917


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass
class Spectrum:
    energies: np.ndarray
    vectors: np.ndarray | None = field(default=None, repr=False)
    parities: np.ndarray | None = None
    ambiguous: list[int] = field(default_factory=list)
    params: ChainParams | None = None
    max_residual: float = 0.0

    def __len__(self) -> int:
        return int(self.energies.size)

    @property
    def gaps(self) -> np.ndarray:
        return self.energies - self.energies[0]

    @property
    def ground_state(self) -> np.ndarray:
        if self.vectors is None:
            raise MissingVectorsError("spectrum was computed without eigenvectors")
        return self.vectors[:, 0]

    def to_frame(self, table: TransitionTable | None = None) -> pd.DataFrame:
        n = len(self)
        frame = pd.DataFrame(
            {
                "index": np.arange(n),
                "energy": self.energies,
                "gap": self.gaps,
                "parity": self.parities if self.parities is not None else np.zeros(n, dtype=int),
            }
        )
        if table is not None:
            strength = np.zeros(n)
            strength[table.indices] = table.strengths
            frame["strength"] = strength
        return frame


@dataclass
class TransitionTable:
    indices: np.ndarray
    gaps: np.ndarray
    strengths: np.ndarray
    parities: np.ndarray
    diagonal: float
    second_moment: float

    def completeness_residual(self) -> float:
        """|sum_e |K_ge|^2 + |K_gg|^2 - <g|K^2|g>| relative to <g|K^2|g>."""
        total = float(self.strengths.sum()) + self.diagonal
        scale = max(abs(self.second_moment), 1e-300)
        return abs(total - self.second_moment) / scale

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"index": self.indices, "gap": self.gaps, "parity": self.parities, "strength": self.strengths}
        )


# ---------------------------------------------------------------------------
# Eigensolver
# ---------------------------------------------------------------------------


def _fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Largest-magnitude amplitude of each column made positive."""
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _lowest_pairs(H: SparseOperator, k: int, max_iter: int | None) -> tuple[np.ndarray, np.ndarray]:
    d = H.dim
    if d <= DENSE_LIMIT or k >= d - 1:
        return la.eigh(H.to_dense(), subset_by_index=[0, k - 1])
    rng = np.random.Generator(np.random.Philox(key=_ARPACK_SEED))
    v0 = rng.standard_normal(d)
    try:
        vals, vecs = spla.eigsh(
            H.matrix, k=k, which="SA", v0=v0, ncv=min(d, max(2 * k + 1, 40)), tol=0.0, maxiter=max_iter
        )
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"Lanczos did not converge for {k} states (dim={d}): {exc}") from exc
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def eigensolve_lowest(
    H: SparseOperator,
    n_states: int,
    *,
    basis: ConstrainedBasis | None = None,
    params: ChainParams | None = None,
    with_vectors: bool = True,
    max_iter: int | None = None,
) -> Spectrum:
    """Lowest n_states eigenpairs; parity labels when a basis is supplied."""
    d = H.dim
    if not 1 <= n_states <= d:
        raise ValidationError(f"n_states must be in 1..{d}, got {n_states}")
    k = min(n_states + _EXTRA_STATES, d)
    energies, vectors = _lowest_pairs(H, k, max_iter)

    residual = np.linalg.norm(H.matrix @ vectors - vectors * energies, axis=0)
    residual = residual / np.maximum(np.abs(energies), 1.0)
    worst = float(residual.max())
    if worst > RESIDUAL_TOL:
        raise ConvergenceError(f"eigen-residual {worst:.2e} exceeds {RESIDUAL_TOL:.0e}")

    vectors = _fix_phase(vectors)
    spectrum = Spectrum(energies=energies, vectors=vectors, params=params, max_residual=worst)
    if basis is not None:
        spectrum = parity_label(spectrum, reflection_matrix(basis))
    spectrum = _truncate(spectrum, n_states)
    if not with_vectors:
        spectrum.vectors = None
    return spectrum


def _truncate(spectrum: Spectrum, n: int) -> Spectrum:
    vectors = spectrum.vectors[:, :n] if spectrum.vectors is not None else None
    parities = spectrum.parities[:n] if spectrum.parities is not None else None
    return replace(
        spectrum,
        energies=spectrum.energies[:n],
        vectors=vectors,
        parities=parities,
        ambiguous=[i for i in spectrum.ambiguous if i < n],
    )


def degenerate_clusters(energies: np.ndarray, tol: float = DEGENERACY_TOL) -> list[list[int]]:
    clusters: list[list[int]] = [[0]] if energies.size else []
    for i in range(1, energies.size):
        if energies[i] - energies[i - 1] < tol:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    return clusters


def parity_label(spectrum: Spectrum, R: SparseOperator) -> Spectrum:
    """Rotate degenerate clusters into R_x eigenstates and label +1/-1 (0 = ambiguous)."""
    if spectrum.vectors is None:
        raise MissingVectorsError("parity labels need eigenvectors")
    vectors = spectrum.vectors.copy()
    for cluster in degenerate_clusters(spectrum.energies):
        if len(cluster) < 2:
            continue
        block = vectors[:, cluster]
        _, rotation = la.eigh(block.T @ (R.matrix @ block))
        vectors[:, cluster] = _fix_phase(block @ rotation)

    expectations = np.einsum("ij,ij->j", vectors, R.matrix @ vectors)
    parities = np.where(np.abs(expectations) > PARITY_THRESHOLD, np.sign(expectations), 0).astype(int)
    ambiguous = [int(i) for i in np.nonzero(parities == 0)[0]]
    return replace(spectrum, vectors=vectors, parities=parities, ambiguous=ambiguous)


# ---------------------------------------------------------------------------
# Transition strengths
# ---------------------------------------------------------------------------


def transition_strengths(spectrum: Spectrum, K: SparseOperator, ground: int = 0) -> TransitionTable:
    """|<g|K|e>|^2 for every computed e != g."""
    if spectrum.vectors is None:
        raise MissingVectorsError("transition strengths need eigenvectors")
    g = spectrum.vectors[:, ground]
    Kg = K.matvec(g)
    amplitudes = spectrum.vectors.T @ Kg
    others = np.array([i for i in range(len(spectrum)) if i != ground], dtype=int)
    parities = spectrum.parities if spectrum.parities is not None else np.zeros(len(spectrum), dtype=int)
    return TransitionTable(
        indices=others,
        gaps=spectrum.energies[others] - spectrum.energies[ground],
        strengths=amplitudes[others] ** 2,
        parities=parities[others],
        diagonal=float(amplitudes[ground] ** 2),
        second_moment=float(Kg @ Kg),
    )


def strongest_by_parity(table: TransitionTable, parity: int, count: int) -> TransitionTable:
    """The `count` strongest transitions into states of the given parity, ordered by gap."""
    mask = table.parities == parity
    idx = np.nonzero(mask)[0]
    top = idx[np.argsort(-table.strengths[idx], kind="stable")[:count]]
    top = top[np.argsort(table.gaps[top], kind="stable")]
    return TransitionTable(
        indices=table.indices[top],
        gaps=table.gaps[top],
        strengths=table.strengths[top],
        parities=table.parities[top],
        diagonal=table.diagonal,
        second_moment=table.second_moment,
    )


@dataclass(frozen=True)
class ScaleFit:
    scale: float
    predicted: np.ndarray
    relative_residuals: np.ndarray

    @property
    def max_relative_residual(self) -> float:
        return float(np.max(np.abs(self.relative_residuals)))


def fit_single_scale(gaps: np.ndarray, normalized: np.ndarray, weights: np.ndarray | None = None) -> ScaleFit:
    """One-parameter least squares gaps ~ scale * normalized (scale = pi*hbar*v/L)."""
    gaps = np.asarray(gaps, dtype=np.float64)
    normalized = np.asarray(normalized, dtype=np.float64)
    w = np.ones_like(gaps) if weights is None else np.asarray(weights, dtype=np.float64)
    scale = float(np.sum(w * gaps * normalized) / np.sum(w * normalized**2))
    predicted = scale * normalized
    return ScaleFit(scale=scale, predicted=predicted, relative_residuals=(gaps - predicted) / predicted)
