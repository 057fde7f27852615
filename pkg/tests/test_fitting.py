"""
tests/test_fitting.py — peak, oscillation and hypothesis fits.

Verifies:
  1. Noise-free Gaussian peaks are recovered; peaks come back sorted by center
  2. Windows outside the data range and under-determined fits are rejected
  3. Damped-cosine fit recovers omega and tau; constant series have no frequency
  4. Bootstrap is reproducible for a fixed seed, independent of thread count, and needs sigma
  5. chi^2 hypothesis test with free and fixed scale; a fixed scale keeps every degree of freedom
  6. CSV import with and without a sigma column
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from harness.pool import make_mapper
from skills.errors import NoDominantFrequencyError, ValidationError
from skills.fitting.fitting import (
    bootstrap_uncertainty,
    cft_hypothesis_test,
    damped_cosine_fit,
    gaussian_peak_init,
    load_curve_csv,
    multi_gaussian_fit,
    multi_gaussian_fit_arrays,
    three_term_gaussian_fit,
)
from skills.response.response import ResponseCurve


def _two_peaks(x: np.ndarray) -> np.ndarray:
    return 0.01 + 0.5 * np.exp(-(((x - 2.8) / 0.3) ** 2)) + 0.2 * np.exp(-(((x - 5.6) / 0.4) ** 2))


# ---------------------------------------------------------------------------
# Peak fits
# ---------------------------------------------------------------------------


def test_gaussian_init_finds_both_peaks() -> None:
    x = np.linspace(0.0, 8.0, 161)
    p0 = gaussian_peak_init(x, _two_peaks(x), np.full(x.size, 1e-3), 2)
    assert p0[2] == pytest.approx(2.8, abs=0.05)
    assert p0[5] == pytest.approx(5.6, abs=0.05)


def test_two_gaussians_recovered() -> None:
    x = np.linspace(0.0, 8.0, 161)
    curve = ResponseCurve(x, _two_peaks(x), "delta_n", np.full(x.size, 1e-3))
    fit = multi_gaussian_fit(curve, 2)
    np.testing.assert_allclose(fit.centers, [2.8, 5.6], atol=1e-6)
    assert fit.peaks[0][0] == pytest.approx(0.5, rel=1e-5)
    assert fit.peaks[1][2] == pytest.approx(0.4, rel=1e-5)
    assert fit.baseline == pytest.approx(0.01, abs=1e-6)
    assert fit.chi2 < 1e-6
    assert fit.dof == 161 - 7
    assert fit.parameters.size == 7


def test_window_restricts_points() -> None:
    x = np.linspace(0.0, 8.0, 161)
    fit = multi_gaussian_fit_arrays(x, _two_peaks(x), None, 1, window=(1.5, 4.0))
    assert fit.centers[0] == pytest.approx(2.8, abs=1e-3)
    assert fit.to_dict()["chi2_label"] == "unweighted"


def test_window_outside_data() -> None:
    x = np.linspace(0.0, 8.0, 41)
    with pytest.raises(ValidationError):
        multi_gaussian_fit_arrays(x, _two_peaks(x), None, 1, window=(-1.0, 4.0))


def test_too_few_points() -> None:
    x = np.linspace(0.0, 1.0, 4)
    with pytest.raises(ValidationError):
        multi_gaussian_fit_arrays(x, np.ones(4), None, 1)


def test_init_length_checked() -> None:
    x = np.linspace(0.0, 8.0, 41)
    with pytest.raises(ValidationError):
        multi_gaussian_fit_arrays(x, _two_peaks(x), None, 2, init=np.ones(4))


def test_three_term_kernel_reduces_far_from_zero() -> None:
    x = np.linspace(4.0, 8.0, 81)
    y = 0.3 * np.exp(-(((x - 6.0) / 0.3) ** 2))
    curve = ResponseCurve(x, y, "delta_n", np.full(x.size, 1e-3))
    fit = three_term_gaussian_fit(curve, 1, phase=0.0)
    assert fit.kernel == "three_term"
    assert fit.centers[0] == pytest.approx(6.0, abs=1e-4)


def test_peak_fit_dict_shape() -> None:
    x = np.linspace(0.0, 8.0, 161)
    record = multi_gaussian_fit_arrays(x, _two_peaks(x), np.full(x.size, 1e-3), 2).to_dict()
    assert record["kind"] == "peak_fit"
    assert [p["center_MHz"] for p in record["peaks"]] == sorted(p["center_MHz"] for p in record["peaks"])


# ---------------------------------------------------------------------------
# Damped cosine
# ---------------------------------------------------------------------------


def test_damped_cosine_recovered() -> None:
    t = np.linspace(0.0, 3.0, 121)
    omega = 2.0 * math.pi * 2.83
    y = 0.4 + 0.2 * np.cos(omega * t + 0.3) * np.exp(-t / 1.5)
    fit = damped_cosine_fit(t, y, np.full(t.size, 1e-3))
    assert fit.frequency_MHz == pytest.approx(2.83, rel=1e-4)
    assert fit.tau == pytest.approx(1.5, rel=1e-3)
    assert fit.phase == pytest.approx(0.3, abs=1e-3)
    assert fit.to_dict()["tau_unbounded"] is False


def test_undamped_cosine_has_long_tau() -> None:
    t = np.linspace(0.0, 2.0, 101)
    y = 0.1 * np.cos(2.0 * math.pi * 3.0 * t)
    fit = damped_cosine_fit(t, y)
    assert fit.tau > 1e4
    assert fit.frequency_MHz == pytest.approx(3.0, rel=1e-4)


def test_constant_series_has_no_frequency() -> None:
    t = np.linspace(0.0, 1.0, 20)
    with pytest.raises(NoDominantFrequencyError):
        damped_cosine_fit(t, np.full(20, 0.5))


def test_damped_cosine_needs_samples() -> None:
    with pytest.raises(ValidationError):
        damped_cosine_fit(np.arange(5.0), np.arange(5.0))


# ---------------------------------------------------------------------------
# Bootstrap and hypothesis test
# ---------------------------------------------------------------------------


def _center_fit(x: np.ndarray, y: np.ndarray, s: np.ndarray) -> np.ndarray:
    return multi_gaussian_fit_arrays(x, y, s, 1, window=(1.5, 4.0)).centers


def test_bootstrap_reproducible() -> None:
    x = np.linspace(0.0, 8.0, 161)
    s = np.full(x.size, 5e-3)
    a = bootstrap_uncertainty(x, _two_peaks(x), s, _center_fit, 8, seed=11)
    b = bootstrap_uncertainty(x, _two_peaks(x), s, _center_fit, 8, seed=11)
    np.testing.assert_array_equal(a.sigma, b.sigma)
    assert a.n_failed == 0
    assert not a.flagged
    assert 0.0 < a.sigma[0] < 0.05


def test_bootstrap_independent_of_threads() -> None:
    x = np.linspace(0.0, 8.0, 161)
    s = np.full(x.size, 5e-3)
    serial = bootstrap_uncertainty(x, _two_peaks(x), s, _center_fit, 8, seed=11, mapper=make_mapper(1, quiet=True))
    pooled = bootstrap_uncertainty(x, _two_peaks(x), s, _center_fit, 8, seed=11, mapper=make_mapper(4, quiet=True))
    np.testing.assert_array_equal(serial.sigma, pooled.sigma)
    assert serial.n_failed == pooled.n_failed


def test_bootstrap_needs_sigma() -> None:
    x = np.linspace(0.0, 8.0, 41)
    with pytest.raises(ValidationError):
        bootstrap_uncertainty(x, _two_peaks(x), None, _center_fit, 8, seed=0)


def test_hypothesis_exact_ladder() -> None:
    test = cft_hypothesis_test([1.4, 2.8, 4.2], [0.01, 0.01, 0.02], [2, 4, 6])
    assert test.scale == pytest.approx(0.7)
    assert test.chi2 == pytest.approx(0.0, abs=1e-18)
    assert test.dof == 2


def test_hypothesis_fixed_scale() -> None:
    test = cft_hypothesis_test([1.5, 2.8], [0.1, 0.1], [2, 4], scale=0.7)
    assert test.residuals[0] == pytest.approx(1.0)
    assert test.dof == 2
    assert test.reduced_chi2 == pytest.approx(0.5)


def test_hypothesis_fixed_scale_keeps_all_dof() -> None:
    test = cft_hypothesis_test([2.0, 4.0, 6.0], [0.1, 0.1, 0.1], [2, 4, 6], scale=1.0)
    assert test.dof == 3
    assert test.chi2 == pytest.approx(0.0)
    assert test.reduced_chi2 == pytest.approx(0.0)


def test_hypothesis_validation() -> None:
    with pytest.raises(ValidationError):
        cft_hypothesis_test([1.0], [0.1], [2])
    with pytest.raises(ValidationError):
        cft_hypothesis_test([1.0, 2.0, 3.0], [0.1, 0.1, 0.1], [2, 4])
    with pytest.raises(ValidationError):
        cft_hypothesis_test([1.0, 2.0], [0.1, 0.0], [2, 4])


# ---------------------------------------------------------------------------
# CSV import
# ---------------------------------------------------------------------------


def test_load_curve_with_sigma(tmp_path: Path) -> None:
    path = tmp_path / "curve.csv"
    pd.DataFrame({"f_MHz": [2.0, 1.0], "delta_n": [0.2, 0.1], "sigma": [0.01, 0.02]}).to_csv(path, index=False)
    curve = load_curve_csv(path)
    np.testing.assert_allclose(curve.frequencies, [1.0, 2.0])
    np.testing.assert_allclose(curve.sigma, [0.02, 0.01])
    assert curve.provenance["chi2_label"] == "weighted"


def test_load_curve_value_column(tmp_path: Path) -> None:
    path = tmp_path / "curve.csv"
    pd.DataFrame({"f_MHz": [1.0, 2.0], "value": [0.1, 0.2]}).to_csv(path, index=False)
    curve = load_curve_csv(path)
    assert curve.sigma is None
    assert curve.provenance["chi2_label"] == "unweighted"


def test_load_curve_missing_column(tmp_path: Path) -> None:
    path = tmp_path / "curve.csv"
    pd.DataFrame({"freq": [1.0], "value": [0.1]}).to_csv(path, index=False)
    with pytest.raises(ValidationError):
        load_curve_csv(path)
