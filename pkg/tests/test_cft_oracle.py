"""
tests/test_cft_oracle.py — Ising fillings, TCI towers and closed-form predictions.

Verifies:
  1. Ising ladders 2:4:6:8 (uniform drive) and 3:5:7 (odd drive)
  2. TCI towers per boundary condition and the exact E1 ratios 2/5 and 4/3
  3. Illegal boundary / parity combinations are rejected
  4. The sinc matrix element picks |a - b| = 2 at alpha = pi/2
  5. Structure-factor shapes and the light-cone velocity fit
"""

from __future__ import annotations

import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from skills.cft_oracle.cft_oracle import (
    BoundaryCondition,
    continuum_level_count,
    descendant_count,
    dsf_comb,
    dsf_predictions,
    dsf_scaling,
    fermion_modes,
    group_by_energy,
    ising_even_ladder,
    ising_levels,
    ising_odd_ladder,
    levels_for,
    levels_to_csv,
    light_cone_velocity,
    sinc_matrix_element,
    strongest_pair,
    tci_levels,
)
from skills.errors import IllegalBoundaryError, ValidationError

# ---------------------------------------------------------------------------
# Ising
# ---------------------------------------------------------------------------


def test_ladders() -> None:
    assert ising_even_ladder(4) == [2, 4, 6, 8]
    assert ising_odd_ladder(3) == [3, 5, 7]


def test_fixed_boundary_levels_odd_L() -> None:
    levels = levels_for(BoundaryCondition.ISING_FIXED_PP, "odd_L", 5)
    assert [lv.normalized_energy for lv in levels] == [0, 2, 3, 4, 4]
    assert levels[0].occupation == ()
    assert levels[1].occupation == (0, 1)
    assert all(len(lv.occupation) % 2 == 0 for lv in levels)


def test_fixed_boundary_ladder_is_even_parity() -> None:
    levels = ising_levels("odd_L", "even_fermion", 20)
    even = sorted({lv.normalized_energy for lv in levels[1:] if lv.parity == levels[0].parity})
    assert even[:4] == [2, 4, 6, 8]


def test_mixed_boundary_needs_even_L() -> None:
    levels = levels_for("ising_fixed_pm", "even_L", 3)
    assert levels[0].normalized_energy == Fraction(1, 2)
    with pytest.raises(IllegalBoundaryError):
        levels_for("ising_fixed_pm", "odd_L", 3)
    with pytest.raises(IllegalBoundaryError):
        levels_for("ising_fixed_pp", "even_L", 3)


def test_free_boundary_mixes_sectors() -> None:
    levels = levels_for("ising_free", "odd_L", 3)
    assert [lv.normalized_energy for lv in levels] == [0, Fraction(1, 2), Fraction(3, 2)]
    assert levels[1].primary == "ε"


def test_fermion_mode_momentum() -> None:
    modes = fermion_modes(19, 3)
    assert modes[1].momentum == pytest.approx(math.pi / 19 * 1.5)
    assert modes[0].energy(2.0) == pytest.approx(2.0 * math.pi / 38)


# ---------------------------------------------------------------------------
# TCI
# ---------------------------------------------------------------------------


def test_tci_free_tower() -> None:
    levels = levels_for("tci_free", "odd_L", 4)
    assert [lv.primary for lv in levels] == ["I", "ε″", "I", "ε″"]
    assert [lv.normalized_energy for lv in levels] == [0, Fraction(3, 2), 2, Fraction(5, 2)]
    assert [lv.parity for lv in levels] == [1, 1, 1, -1]


def test_tci_all_level_ratios() -> None:
    energies = [lv.normalized_energy for lv in tci_levels("tci_free", "odd_L", 4)]
    E1 = energies[1]
    assert energies[2] / E1 == Fraction(4, 3)
    assert energies[3] / E1 == Fraction(5, 3)


def _first_same_parity_gap(bc: str) -> Fraction:
    levels = tci_levels(bc, "odd_L", 6)
    return next(lv.normalized_energy for lv in levels[1:] if lv.parity == levels[0].parity)


def test_tci_boundary_gap_ratios_exact() -> None:
    free = _first_same_parity_gap("tci_free")
    assert _first_same_parity_gap("tci_intermediate") / free == Fraction(2, 5)
    assert _first_same_parity_gap("tci_fixed") / free == Fraction(4, 3)


def test_descendant_counts() -> None:
    assert descendant_count("I", 1) == 0
    assert descendant_count("I", 2) == 1
    assert descendant_count("ε″", 1) == 1
    assert descendant_count("ε", 3) == 2


def test_tci_count_bounds() -> None:
    with pytest.raises(ValidationError):
        tci_levels("tci_free", "odd_L", 7)
    with pytest.raises(ValidationError):
        tci_levels("tci_free", "odd_L", 0)


def test_unknown_boundary() -> None:
    with pytest.raises(ValueError):
        levels_for("tci_periodic", "odd_L", 2)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def test_level_dict_keeps_exact_fraction() -> None:
    level = levels_for("tci_free", "odd_L", 2)[1]
    record = level.to_dict()
    assert record["normalized_energy"] == "3/2"
    assert level.parity_label == "even"


def test_levels_csv(tmp_path: Path) -> None:
    path = levels_to_csv(levels_for("tci_fixed", "odd_L", 3), tmp_path / "levels.csv")
    frame = pd.read_csv(path, dtype={"normalized_energy": str})
    assert frame.columns.tolist() == ["primary", "J", "normalized_energy", "parity"]
    assert frame["normalized_energy"].tolist() == ["0", "2", "3"]


def test_group_by_energy_merges_degenerate() -> None:
    rows = group_by_energy(levels_for("ising_fixed_pp", "odd_L", 5))
    four = [r for r in rows if r["normalized_energy"] == 4]
    assert sum(len(r["occupations"]) for r in four) == 2


# ---------------------------------------------------------------------------
# Matrix elements and structure factors
# ---------------------------------------------------------------------------


def test_sinc_selects_next_nearest_pair() -> None:
    a, b = strongest_pair(math.pi / 18, math.pi / 2, 19, 6)
    assert b - a == 2


def test_sinc_vanishes_for_adjacent_modes_at_quarter_phase() -> None:
    assert sinc_matrix_element(0.2, math.pi / 2, 0, 1, 19) == pytest.approx(0.0, abs=1e-24)
    with pytest.raises(ValidationError):
        sinc_matrix_element(0.2, 0.0, 2, 2, 19)


def test_epsilon_dsf_constant_above_cone() -> None:
    values = dsf_predictions("epsilon", 0.0, np.array([0.5, 1.0, 3.0]), 2.0)
    np.testing.assert_allclose(values, math.pi**2 / 2.0)


def test_dsf_zero_inside_cone() -> None:
    values = dsf_scaling(1.0 / 8.0, 1.0, np.array([0.5, 1.0, 3.0]), 2.0)
    assert values[0] == 0.0 and values[1] == 0.0
    assert values[2] == pytest.approx((9.0 - 4.0) ** (-7.0 / 8.0))
    with pytest.raises(ValidationError):
        dsf_scaling(1.0, 0.0, 1.0, 0.0)


def test_dsf_comb_peaks() -> None:
    L, v = 10, 1.0
    unit = math.pi * v / L
    obc = dsf_comb("obc", np.array([2.0, 3.0]) * unit, v, L, broaden=0.05)
    pbc = dsf_comb("pbc", np.array([1.0, 2.0]) * unit, v, L, broaden=0.05)
    assert obc[0] > 100 * obc[1]
    assert pbc[0] > 100 * pbc[1]


def test_continuum_level_count() -> None:
    assert continuum_level_count(0.0, 1.0, 1.0) == 2
    assert continuum_level_count(0.5, 1.0, 1.0) == 1
    assert continuum_level_count(2.0, 1.0, 1.0) == 0
    assert continuum_level_count(0.5, 0.0, 1.0) == 0


def test_light_cone_velocity_exact_line() -> None:
    ks = np.array([0.0, 0.2, 0.4, 0.6])
    fit = light_cone_velocity(ks, 0.5 + 3.0 * ks)
    assert fit.v == pytest.approx(2.0 * math.pi * 3.0)
    assert fit.intercept == pytest.approx(0.5)
    assert fit.sigma == pytest.approx(0.0, abs=1e-9)


def test_light_cone_velocity_needs_two_points() -> None:
    with pytest.raises(ValidationError):
        light_cone_velocity([0.1], [1.0])
