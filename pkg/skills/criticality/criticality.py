"""
criticality — locate critical detunings by finite-size scaling.

Ising: the rescaled mid-chain order parameter
    sigma_RS = <sigma_{L/2}> * sin(pi / (L + 2))^{-1/8}
is L-independent at Delta_c, so curves for L-2 and L+2 cross there.
TCI: gap ratios E_i/E_1 of the lowest levels cross for consecutive odd L.
Crossing detunings are extrapolated in 1/L.

Usage:
    base = published_params("ising_repulsive", 11)
    scan = ising_crossing_scan(base, anchors=[9, 11, 13], deltas=np.linspace(9.5, 11, 16))
    print(scan.delta_c.extrapolated, scan.delta_c.sigma)
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize

from skills.errors import NoCrossingError, TruncationError, ValidationError
from skills.hamiltonian.hamiltonian import (
    ChainParams,
    HamiltonianTerms,
    boundary_detuning_profile,
    build_terms,
    cdw_operator,
    drive_operator,
    edge_cdw_observable,
)
from skills.hilbert.hilbert import ConstrainedBasis, enumerate_basis
from skills.spectral.spectral import Spectrum, eigensolve_lowest

Mapper = Callable[[Callable, Iterable], Iterable]
Curve = tuple[np.ndarray, np.ndarray]
CROSSING_TOL = 1e-4  # in units of Omega


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossingPoint:
    L_pair: tuple[int, int]
    delta_x: float
    value_x: float

    def __post_init__(self) -> None:
        small, large = self.L_pair
        if small >= large:
            raise ValidationError(f"L pair must be ascending, got {self.L_pair}")
        if (small - large) % 2:
            raise ValidationError(f"L pair must share parity, got {self.L_pair}")

    @property
    def inverse_L(self) -> float:
        return 2.0 / sum(self.L_pair)


@dataclass(frozen=True)
class ScalingSeries:
    inverse_L: np.ndarray
    values: np.ndarray
    order: int
    extrapolated: float
    sigma: float
    coefficients: np.ndarray = field(repr=False)


def crossings_frame(crossings: Sequence[CrossingPoint]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "L_small": [c.L_pair[0] for c in crossings],
            "L_large": [c.L_pair[1] for c in crossings],
            "delta_x": [c.delta_x for c in crossings],
            "value_x": [c.value_x for c in crossings],
        }
    )


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------


def _ground_state(terms: HamiltonianTerms, delta: float | None = None, extra: np.ndarray | None = None) -> np.ndarray:
    return eigensolve_lowest(terms.assemble(delta=delta, extra_diag=extra), 1).ground_state


def mid_chain_cdw(basis: ConstrainedBasis, psi: np.ndarray) -> float:
    """<sigma> on the middle bond; even L averages the two bonds around the center."""
    L = basis.L
    if L < 2:
        raise ValidationError("mid-chain order parameter needs L >= 2")
    if L % 2:
        return cdw_operator(basis, (L - 1) // 2).expectation(psi)
    if L == 2:
        return cdw_operator(basis, 1).expectation(psi)
    return 0.5 * (cdw_operator(basis, L // 2 - 1).expectation(psi) + cdw_operator(basis, L // 2).expectation(psi))


def rescale_factor(L: int) -> float:
    return math.sin(math.pi / (L + 2)) ** (-1.0 / 8.0)


def sigma_rs(basis: ConstrainedBasis, params: ChainParams, *, terms: HamiltonianTerms | None = None) -> float:
    terms = terms if terms is not None else build_terms(basis, params)
    return mid_chain_cdw(basis, _ground_state(terms)) * rescale_factor(basis.L)


def sigma_edge(basis: ConstrainedBasis, params: ChainParams, *, terms: HamiltonianTerms | None = None) -> float:
    terms = terms if terms is not None else build_terms(basis, params)
    return edge_cdw_observable(basis).evaluate(_ground_state(terms))


def even_gaps(spectrum: Spectrum, count: int) -> np.ndarray:
    """First `count` excitation energies above the ground state in the ground-state parity sector."""
    if spectrum.parities is None:
        raise ValidationError("even-parity gaps need parity labels")
    sector = spectrum.parities[0] if spectrum.parities[0] != 0 else 1
    idx = [i for i in range(1, len(spectrum)) if spectrum.parities[i] == sector]
    if len(idx) < count:
        raise TruncationError(f"only {len(idx)} same-parity states computed, need {count}")
    return spectrum.gaps[idx[:count]]


# ---------------------------------------------------------------------------
# Crossings and extrapolation
# ---------------------------------------------------------------------------


def _first_root(x: np.ndarray, d: np.ndarray) -> tuple[int, float]:
    for i in range(x.size - 1):
        if d[i] == 0.0:
            return i, float(x[i])
        if d[i] * d[i + 1] < 0:
            return i, float(x[i] - d[i] * (x[i + 1] - x[i]) / (d[i + 1] - d[i]))
    if d[-1] == 0.0:
        return x.size - 2, float(x[-1])
    raise NoCrossingError("curves do not cross on the scanned grid")


def find_crossing(
    curve_a: Curve,
    curve_b: Curve,
    L_pair: tuple[int, int],
    *,
    reevaluate: Callable[[float], tuple[float, float]] | None = None,
    xtol: float | None = None,
) -> CrossingPoint:
    """First sign change of A - B in ascending Delta, by linear interpolation.

    With `reevaluate` (Delta -> (A, B) from fresh ED) the root is refined by bisection.
    """
    xa, ya = (np.asarray(c, dtype=np.float64) for c in curve_a)
    xb, yb = (np.asarray(c, dtype=np.float64) for c in curve_b)
    lo, hi = max(xa[0], xb[0]), min(xa[-1], xb[-1])
    x = np.union1d(xa[(xa >= lo) & (xa <= hi)], xb[(xb >= lo) & (xb <= hi)])
    if x.size < 2:
        raise NoCrossingError("curves share fewer than two grid points")
    va, vb = np.interp(x, xa, ya), np.interp(x, xb, yb)
    d = va - vb
    if np.all(d == 0.0):
        raise NoCrossingError("curves are identical; crossing is undefined")
    i, root = _first_root(x, d)
    value = float(np.interp(root, x, va))
    if reevaluate is not None and x[i] < root < x[i + 1]:

        def diff(delta: float) -> float:
            a, b = reevaluate(delta)
            return a - b

        root = float(optimize.bisect(diff, x[i], x[i + 1], xtol=xtol or 1e-6))
        value = float(np.mean(reevaluate(root)))
    return CrossingPoint(L_pair=L_pair, delta_x=root, value_x=value)


def crossing_with_level(curve: Curve, level: float) -> float:
    """First abscissa where the curve passes `level`."""
    x, y = (np.asarray(c, dtype=np.float64) for c in curve)
    return _first_root(x, y - level)[1]


def extrapolate(inverse_L: Sequence[float], values: Sequence[float], order: int = 1) -> ScalingSeries:
    """Polynomial in 1/L evaluated at 1/L = 0; sigma from the fit covariance (nan when exactly determined)."""
    if order not in (1, 2):
        raise ValidationError(f"fit order must be 1 or 2, got {order}")
    x = np.asarray(inverse_L, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if x.size < order + 1:
        raise ValidationError(f"order-{order} extrapolation needs {order + 1} points, got {x.size}")
    if x.size > order + 1:
        coef, cov = np.polyfit(x, y, order, cov=True)
        sigma = math.sqrt(max(float(cov[-1, -1]), 0.0))
    else:
        coef = np.polyfit(x, y, order)
        sigma = math.nan
    return ScalingSeries(x, y, order, float(coef[-1]), sigma, coef)


@dataclass(frozen=True)
class PowerLaw:
    exponent: float
    sigma: float
    prefactor: float


def power_law_exponent(Ls: Sequence[float], values: Sequence[float]) -> PowerLaw:
    """|value| ~ c * L^p fitted in log-log."""
    x = np.log(np.asarray(Ls, dtype=np.float64))
    y = np.log(np.abs(np.asarray(values, dtype=np.float64)))
    if x.size < 2:
        raise ValidationError("power-law fit needs at least 2 points")
    if x.size > 2:
        (slope, intercept), cov = np.polyfit(x, y, 1, cov=True)
        sigma = math.sqrt(max(float(cov[0, 0]), 0.0))
    else:
        slope, intercept = np.polyfit(x, y, 1)
        sigma = math.nan
    return PowerLaw(float(slope), sigma, math.exp(float(intercept)))


# ---------------------------------------------------------------------------
# Scans
# ---------------------------------------------------------------------------


def _at_length(base: ChainParams, L: int) -> ChainParams:
    return base.replace(L=L, local_detunings=None)


def sigma_rs_curve(base: ChainParams, L: int, deltas: Sequence[float], *, mapper: Mapper = map) -> Curve:
    basis = enumerate_basis(L)
    terms = build_terms(basis, _at_length(base, L))
    scale = rescale_factor(L)

    def point(delta: float) -> float:
        return mid_chain_cdw(basis, _ground_state(terms, float(delta))) * scale

    x = np.asarray(deltas, dtype=np.float64)
    return x, np.array(list(mapper(point, list(x))))


@dataclass
class IsingScan:
    curves: dict[int, Curve]
    crossings: list[CrossingPoint]
    delta_c: ScalingSeries
    check_drop_smallest: ScalingSeries | None = None

    def delta_c_over_omega(self, omega: float) -> float:
        return self.delta_c.extrapolated / omega


def ising_crossing_scan(
    base: ChainParams,
    anchors: Sequence[int],
    deltas: Sequence[float],
    *,
    pair_offset: int = 2,
    order: int = 2,
    refine: bool = True,
    mapper: Mapper = map,
) -> IsingScan:
    """Crossings of sigma_RS for (L - offset, L + offset) around each anchor, extrapolated in 1/L."""
    anchors = sorted(int(a) for a in anchors)
    lengths = sorted({L for a in anchors for L in (a - pair_offset, a + pair_offset)})
    curves = {L: sigma_rs_curve(base, L, deltas, mapper=mapper) for L in lengths}
    bases = {L: enumerate_basis(L) for L in lengths}
    terms = {L: build_terms(bases[L], _at_length(base, L)) for L in lengths}
    xtol = CROSSING_TOL * abs(base.omega) if base.omega else CROSSING_TOL

    crossings = []
    for a in anchors:
        small, large = a - pair_offset, a + pair_offset

        def reevaluate(delta: float, small: int = small, large: int = large) -> tuple[float, float]:
            return tuple(
                mid_chain_cdw(bases[L], _ground_state(terms[L], delta)) * rescale_factor(L) for L in (small, large)
            )

        crossings.append(
            find_crossing(
                curves[small], curves[large], (small, large), reevaluate=reevaluate if refine else None, xtol=xtol
            )
        )
    if len(crossings) < 2:
        raise ValidationError("extrapolation needs at least two crossings")
    fit_order = min(order, len(crossings) - 1)
    series = extrapolate([c.inverse_L for c in crossings], [c.delta_x for c in crossings], fit_order)
    check = None
    if len(crossings) > fit_order + 1:
        rest = crossings[1:]
        check = extrapolate([c.inverse_L for c in rest], [c.delta_x for c in rest], fit_order)
    return IsingScan(curves=curves, crossings=crossings, delta_c=series, check_drop_smallest=check)


def ratio_curves(
    base: ChainParams, L: int, deltas: Sequence[float], levels: Sequence[int], *, mapper: Mapper = map
) -> dict[int, Curve]:
    """E_i / E_1 of the lowest levels (both reflection sectors) versus Delta, for each i in levels."""
    terms, n_states = _ratio_terms(base, L, levels)

    def point(delta: float) -> np.ndarray:
        return _gap_ratios(terms, n_states, delta)

    x = np.asarray(deltas, dtype=np.float64)
    ratios = np.array(list(mapper(point, list(x))))
    return {i: (x, ratios[:, i - 1]) for i in levels}


def _ratio_terms(base: ChainParams, L: int, levels: Sequence[int]) -> tuple[HamiltonianTerms, int]:
    basis = enumerate_basis(L)
    top = max(levels)
    if basis.dim < top + 1:
        raise TruncationError(f"L={L} has only {basis.dim} states, need {top + 1}")
    return build_terms(basis, _at_length(base, L)), top + 1


def _gap_ratios(terms: HamiltonianTerms, n_states: int, delta: float) -> np.ndarray:
    """E_i / E_1 for i = 1 .. n_states - 1."""
    gaps = eigensolve_lowest(terms.assemble(delta=float(delta)), n_states, with_vectors=False).gaps[1:]
    return gaps / gaps[0]


@dataclass
class TciScan:
    curves: dict[int, dict[int, Curve]]  # L -> level -> curve
    crossings: dict[int, list[CrossingPoint]]  # level -> crossings
    delta_x: dict[int, ScalingSeries]
    ratios: dict[int, ScalingSeries]
    delta_c: float
    delta_c_sigma: float


def tci_ratio_scan(
    base: ChainParams,
    lengths: Sequence[int],
    deltas: Sequence[float],
    levels: Sequence[int] = (2, 3),
    *,
    delta_order: int = 2,
    ratio_order: int = 1,
    refine: bool = True,
    mapper: Mapper = map,
) -> TciScan:
    """Crossings of E_i/E_1 for consecutive odd L; Delta_X extrapolated quadratically, ratios linearly.

    Each crossing is refined by bisection on fresh ED to CROSSING_TOL * |Omega|.
    """
    lengths = [int(L) for L in lengths]
    if any(L % 2 == 0 for L in lengths) or lengths != sorted(lengths):
        raise ValidationError("TCI scan lengths must be odd and ascending")
    if len(set(lengths)) < 3:
        raise ValidationError("TCI scan needs at least three lengths")
    if any(i < 2 for i in levels):
        raise ValidationError("ratio levels start at 2")
    curves = {L: ratio_curves(base, L, deltas, levels, mapper=mapper) for L in lengths}
    prepared = {L: _ratio_terms(base, L, levels) for L in lengths}
    xtol = CROSSING_TOL * abs(base.omega) if base.omega else CROSSING_TOL
    crossings: dict[int, list[CrossingPoint]] = {}
    delta_x: dict[int, ScalingSeries] = {}
    ratios: dict[int, ScalingSeries] = {}
    for i in levels:
        pts = []
        for a, b in zip(lengths, lengths[1:], strict=False):

            def reevaluate(delta: float, a: int = a, b: int = b, i: int = i) -> tuple[float, float]:
                return tuple(float(_gap_ratios(*prepared[L], delta)[i - 1]) for L in (a, b))

            pts.append(
                find_crossing(curves[a][i], curves[b][i], (a, b), reevaluate=reevaluate if refine else None, xtol=xtol)
            )
        crossings[i] = pts
        inv = [p.inverse_L for p in pts]
        delta_x[i] = extrapolate(inv, [p.delta_x for p in pts], min(delta_order, len(pts) - 1))
        ratios[i] = extrapolate(inv, [p.value_x for p in pts], min(ratio_order, len(pts) - 1))
    estimates = np.array([delta_x[i].extrapolated for i in levels])
    spread = float(np.std(estimates)) if estimates.size > 1 else delta_x[levels[0]].sigma
    return TciScan(curves, crossings, delta_x, ratios, float(np.mean(estimates)), spread)


@dataclass
class EtaScan:
    etas: np.ndarray
    ratio: np.ndarray
    first_gap: np.ndarray
    sigma_edge: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"eta": self.etas, "ratio_E2_E1": self.ratio, "E1": self.first_gap, "sigma_edge": self.sigma_edge}
        )


def eta_ratio_scan(
    params: ChainParams, etas: Sequence[float], *, n_states: int = 16, mapper: Mapper = map
) -> EtaScan:
    """E_2/E_1 of the first two ground-parity excitations and sigma_edge along H_eta."""
    basis = enumerate_basis(params.L)
    terms = build_terms(basis, params.replace(eta=0.0))
    boundary = drive_operator(basis, boundary_detuning_profile(params.L, params.v2)).diagonal()
    edge = edge_cdw_observable(basis)
    n_states = min(n_states, basis.dim)

    def point(eta: float) -> tuple[float, float, float]:
        if not 0.0 <= eta <= 1.0:
            raise ValidationError(f"eta must lie in [0, 1], got {eta}")
        spec = eigensolve_lowest(terms.assemble(extra_diag=-float(eta) * boundary), n_states, basis=basis)
        gaps = even_gaps(spec, 2)
        return float(gaps[1] / gaps[0]), float(gaps[0]), edge.evaluate(spec.ground_state)

    rows = np.array(list(mapper(point, [float(e) for e in etas])))
    return EtaScan(np.asarray(etas, dtype=np.float64), rows[:, 0], rows[:, 1], rows[:, 2])
