"""
cft_oracle — boundary-CFT level tables and closed-form structure-factor predictions.

Ising levels come from filling free Majorana modes k_n = (pi/L)(n + 1/2);
TCI levels come from hard-coded conformal towers per boundary condition.
Energies are normalized as E * L / (pi * hbar * v) and kept as exact fractions.

Usage:
    levels_for("tci_free", "odd_L", 4)       # I 0, e'' 3/2, I 2, e'' 5/2
    ising_levels("odd_L", "even_fermion", 5)
    levels_to_csv(levels, Path("levels.csv"))
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd

from skills.errors import IllegalBoundaryError, ValidationError

ChainParity = Literal["odd_L", "even_L"]
Sector = Literal["even_fermion", "odd_fermion", "any"]
MAX_TCI_LEVELS = 6


class BoundaryCondition(str, Enum):
    ISING_FIXED_PP = "ising_fixed_pp"
    ISING_FIXED_PM = "ising_fixed_pm"
    ISING_FREE = "ising_free"
    TCI_FREE = "tci_free"
    TCI_INTERMEDIATE = "tci_intermediate"
    TCI_FIXED = "tci_fixed"


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CftLevel:
    primary: str
    J: int
    normalized_energy: Fraction
    parity: int
    occupation: tuple[int, ...] | None = None
    degeneracy: int = 1

    @property
    def parity_label(self) -> str:
        return "even" if self.parity > 0 else "odd"

    def to_dict(self) -> dict:
        return {
            "primary": self.primary,
            "J": self.J,
            "normalized_energy": str(self.normalized_energy),
            "parity": self.parity,
            "occupation": list(self.occupation) if self.occupation is not None else None,
            "degeneracy": self.degeneracy,
        }


@dataclass(frozen=True)
class FermionMode:
    n: int
    L: int

    @property
    def momentum(self) -> float:
        return math.pi / self.L * (self.n + 0.5)

    def energy(self, v: float) -> float:
        return v * self.momentum


def fermion_modes(L: int, count: int) -> list[FermionMode]:
    return [FermionMode(n, L) for n in range(count)]


# ---------------------------------------------------------------------------
# Ising: free Majorana fillings
# ---------------------------------------------------------------------------


def _mode_sign(n: int, chain_parity: ChainParity) -> int:
    """Reflection eigenvalue -(-1)^n (-1)^{L+1} carried by mode n."""
    l_factor = 1 if chain_parity == "odd_L" else -1
    return -((-1) ** n) * l_factor


def _reflection_sign(occupied: tuple[int, ...], chain_parity: ChainParity) -> int:
    k = len(occupied)
    sign = (-1) ** (k * (k - 1) // 2)
    for n in occupied:
        sign *= _mode_sign(n, chain_parity)
    return sign


def _fillings(cap: Fraction, start: int = 0) -> Iterator[tuple[int, ...]]:
    """Sets of distinct modes >= start whose energy sum(n + 1/2) stays within cap."""
    yield ()
    n = start
    while Fraction(2 * n + 1, 2) <= cap:
        for rest in _fillings(cap - Fraction(2 * n + 1, 2), n + 1):
            yield (n, *rest)
        n += 1


def _default_sector(chain_parity: ChainParity) -> Sector:
    return "even_fermion" if chain_parity == "odd_L" else "odd_fermion"


def ising_levels(chain_parity: ChainParity, sector: Sector | None = None, count: int = 5) -> list[CftLevel]:
    """Lowest `count` fermion fillings with reflection parity relative to the sector ground state."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    sector = sector or _default_sector(chain_parity)
    # every integer (even sector) or half-integer (odd sector) energy >= 2 is reachable,
    # so the count-th level lies below count + 2
    cap = Fraction(count + 2)
    fills = [
        occ
        for occ in _fillings(cap)
        if sector == "any" or (len(occ) % 2 == 0) == (sector == "even_fermion")
    ]
    fills.sort(key=lambda occ: (sum(Fraction(2 * n + 1, 2) for n in occ), len(occ), occ))
    reference = _reflection_sign(fills[0], chain_parity)
    levels = []
    for occ in fills[:count]:
        energy = sum((Fraction(2 * n + 1, 2) for n in occ), Fraction(0))
        odd = len(occ) % 2 == 1
        h = Fraction(1, 2) if odd else Fraction(0)
        levels.append(
            CftLevel(
                primary="ε" if odd else "I",
                J=int(energy - h),
                normalized_energy=energy,
                parity=_reflection_sign(occ, chain_parity) * reference,
                occupation=occ,
            )
        )
    return levels


def ising_even_ladder(count: int = 4) -> list[int]:
    """Adjacent-mode pairs {a, a+1} reached by a uniform drive: 2, 4, 6, 8, ..."""
    return [2 * a + 2 for a in range(count)]


def ising_odd_ladder(count: int = 3) -> list[int]:
    """Next-nearest pairs {a, a+2} reached by an odd-parity drive: 3, 5, 7, ..."""
    return [2 * a + 3 for a in range(count)]


# ---------------------------------------------------------------------------
# Tricritical Ising: conformal towers
# ---------------------------------------------------------------------------

TCI_WEIGHTS: dict[str, Fraction] = {
    "I": Fraction(0),
    "σ": Fraction(3, 80),
    "ε": Fraction(1, 10),
    "σ′": Fraction(7, 16),
    "ε′": Fraction(3, 5),
    "ε″": Fraction(3, 2),
}

# null-vector levels (r*s, (p'-r)(p-s)) of the c = 7/10 Kac table
_NULL_LEVELS: dict[str, tuple[int, int]] = {
    "I": (1, 12),
    "ε": (2, 9),
    "ε′": (3, 6),
    "ε″": (4, 3),
    "σ": (4, 6),
    "σ′": (2, 8),
}

# (bc, chain parity) -> towers as (primary, reflection parity of the primary state)
_TCI_TOWERS: dict[tuple[BoundaryCondition, ChainParity], tuple[tuple[str, int], ...]] = {
    (BoundaryCondition.TCI_FREE, "odd_L"): (("I", 1), ("ε″", 1)),
    (BoundaryCondition.TCI_INTERMEDIATE, "odd_L"): (("I", 1), ("ε′", 1)),
    (BoundaryCondition.TCI_FIXED, "odd_L"): (("I", 1),),
    (BoundaryCondition.TCI_FREE, "even_L"): (("I", 1), ("ε″", -1)),
    (BoundaryCondition.TCI_INTERMEDIATE, "even_L"): (("ε", 1), ("ε″", 1)),
    (BoundaryCondition.TCI_FIXED, "even_L"): (("ε″", 1),),
}


def _partitions(n: int) -> int:
    if n < 0:
        return 0
    table = [1] + [0] * n
    for part in range(1, n + 1):
        for total in range(part, n + 1):
            table[total] += table[total - part]
    return table[n]


def descendant_count(primary: str, J: int) -> int:
    """Virasoro states at level J in the irreducible module (exact for J below both nulls' sum)."""
    a, b = _NULL_LEVELS[primary]
    return _partitions(J) - _partitions(J - a) - _partitions(J - b)


def tci_levels(bc: BoundaryCondition | str, chain_parity: ChainParity, count: int = 4) -> list[CftLevel]:
    bc = BoundaryCondition(bc)
    if count < 1 or count > MAX_TCI_LEVELS:
        raise ValidationError(f"count must be in 1..{MAX_TCI_LEVELS}")
    try:
        towers = _TCI_TOWERS[(bc, chain_parity)]
    except KeyError:
        raise IllegalBoundaryError(f"{bc.value} has no TCI tower for {chain_parity}") from None
    levels = []
    for primary, p_alpha in towers:
        h = TCI_WEIGHTS[primary]
        for J in range(MAX_TCI_LEVELS + 1):
            deg = descendant_count(primary, J)
            if deg > 0:
                levels.append(CftLevel(primary, J, h + J, p_alpha * (-1) ** J, degeneracy=deg))
    levels.sort(key=lambda lv: (lv.normalized_energy, lv.primary))
    return levels[:count]


def levels_for(bc: BoundaryCondition | str, chain_parity: ChainParity, count: int) -> list[CftLevel]:
    bc = BoundaryCondition(bc)
    if bc is BoundaryCondition.ISING_FIXED_PP:
        if chain_parity != "odd_L":
            raise IllegalBoundaryError("(+,+) fixed boundaries need odd L")
        return ising_levels(chain_parity, "even_fermion", count)
    if bc is BoundaryCondition.ISING_FIXED_PM:
        if chain_parity != "even_L":
            raise IllegalBoundaryError("(+,-) fixed boundaries need even L")
        return ising_levels(chain_parity, "odd_fermion", count)
    if bc is BoundaryCondition.ISING_FREE:
        return ising_levels(chain_parity, "any", count)
    return tci_levels(bc, chain_parity, count)


def group_by_energy(levels: Sequence[CftLevel]) -> list[dict]:
    """Merge levels sharing energy and parity into table rows."""
    rows: dict[tuple[Fraction, int], dict] = {}
    for lv in levels:
        row = rows.setdefault(
            (lv.normalized_energy, lv.parity),
            {"normalized_energy": lv.normalized_energy, "parity": lv.parity, "primaries": [], "occupations": []},
        )
        if lv.primary not in row["primaries"]:
            row["primaries"].append(lv.primary)
        if lv.occupation is not None:
            row["occupations"].append(lv.occupation)
    return sorted(rows.values(), key=lambda r: (r["normalized_energy"], -r["parity"]))


def levels_frame(levels: Sequence[CftLevel]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "primary": [lv.primary for lv in levels],
            "J": [lv.J for lv in levels],
            "normalized_energy": [str(lv.normalized_energy) for lv in levels],
            "parity": [lv.parity for lv in levels],
        }
    )


def levels_to_csv(levels: Sequence[CftLevel], path: Path) -> Path:
    levels_frame(levels).to_csv(path, index=False)
    return path


# ---------------------------------------------------------------------------
# Transition matrix elements
# ---------------------------------------------------------------------------


def _sinc(x: float) -> float:
    return float(np.sinc(x / math.pi))


def sinc_matrix_element(k: float, alpha: float, a: int, b: int, L: int) -> float:
    """|<g|K_k|Gamma_a Gamma_b g>|^2 up to an overall constant, for K_k = sum_j cos(k j + alpha) n_j."""
    if a == b:
        raise ValidationError("two-fermion state needs distinct modes")
    ka = math.pi / L * (a + 0.5)
    kb = math.pi / L * (b + 0.5)
    phase = complex(math.cos(alpha), math.sin(alpha))

    def half(x: int, y: int, kx: float, ky: float) -> complex:
        coeff = (-1) ** x * phase - (-1) ** y * phase.conjugate()
        return coeff * _sinc((k - (kx - ky)) * L / 2.0)

    amplitude = 0.5 * (half(a, b, ka, kb) - half(b, a, kb, ka))
    return abs(amplitude) ** 2


def strongest_pair(k: float, alpha: float, L: int, n_modes: int) -> tuple[int, int]:
    """Mode pair (a < b) maximizing sinc_matrix_element among the lowest n_modes."""
    best = max(
        ((a, b) for a in range(n_modes) for b in range(a + 1, n_modes)),
        key=lambda ab: sinc_matrix_element(k, alpha, ab[0], ab[1], L),
    )
    return best


# ---------------------------------------------------------------------------
# Structure-factor predictions
# ---------------------------------------------------------------------------

SCALING_DIMENSIONS = {"epsilon": 1.0, "sigma": 1.0 / 8.0}


def dsf_scaling(delta_phi: float, k: float, omega: np.ndarray | float, v: float) -> np.ndarray:
    """(omega^2 - v^2 k^2)^{Delta - 1} above the light cone, zero on and below it."""
    if v <= 0:
        raise ValidationError("velocity must be positive")
    omega = np.atleast_1d(np.asarray(omega, dtype=np.float64))
    arg = omega**2 - (v * k) ** 2
    out = np.zeros_like(omega)
    above = arg > 0
    out[above] = arg[above] ** (delta_phi - 1.0)
    return out


def dsf_predictions(field: Literal["epsilon", "sigma"], k: float, omega: np.ndarray | float, v: float) -> np.ndarray:
    if field not in SCALING_DIMENSIONS:
        raise ValidationError(f"unknown field {field!r}")
    shape = dsf_scaling(SCALING_DIMENSIONS[field], k, omega, v)
    return math.pi**2 / v * shape if field == "epsilon" else shape


def dsf_comb(
    boundary: Literal["pbc", "obc"], omega: np.ndarray, v: float, L: int, broaden: float = 0.1
) -> np.ndarray:
    """(2 pi^2/v) sum_m delta(w~ - c_m), w~ = omega/(pi v/L); c_m = 2m+1 (pbc) or 2(m+1) (obc)."""
    if v <= 0:
        raise ValidationError("velocity must be positive")
    scaled = np.asarray(omega, dtype=np.float64) / (math.pi * v / L)
    top = float(scaled.max()) + 6.0 * broaden
    centers = np.arange(1.0, top + 2.0, 2.0) if boundary == "pbc" else np.arange(2.0, top + 2.0, 2.0)
    comb = np.exp(-0.5 * ((scaled[:, None] - centers[None, :]) / broaden) ** 2).sum(axis=1)
    return 2.0 * math.pi**2 / v * comb / (math.sqrt(2.0 * math.pi) * broaden)


def continuum_level_count(k: float, omega: float, v: float) -> int:
    """Two-fermion levels per unit window in w~ reached at momentum k."""
    if omega <= 0:
        return 0
    if k == 0:
        return 2
    return 1 if abs(k) < omega / v else 0


@dataclass(frozen=True)
class VelocityFit:
    v: float
    sigma: float
    slope: float
    intercept: float


def light_cone_velocity(ks: Sequence[float], thresholds: Sequence[float]) -> VelocityFit:
    """v = 2 pi |d f_th / d k| from a least-squares line."""
    ks = np.asarray(ks, dtype=np.float64)
    f = np.asarray(thresholds, dtype=np.float64)
    if ks.size < 2:
        raise ValidationError("light-cone fit needs at least 2 points")
    if ks.size > 2:
        coef, cov = np.polyfit(ks, f, 1, cov=True)
        sigma = 2.0 * math.pi * math.sqrt(max(cov[0, 0], 0.0))
    else:
        coef = np.polyfit(ks, f, 1)
        sigma = math.nan
    return VelocityFit(v=2.0 * math.pi * abs(coef[0]), sigma=sigma, slope=float(coef[0]), intercept=float(coef[1]))
