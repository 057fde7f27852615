"""
fitting — peak, oscillation and hypothesis fits for response curves and time series.

Kernels:
    gaussian     a0 + sum_i a_i exp(-((f - E_i)/w_i)^2)
    three_term   a0 + sum_i a_i [exp(-((f-E_i)/w_i)^2) + exp(-((f+E_i)/w_i)^2)
                                + 2 exp(-(f^2+E_i^2)/w_i^2) cos(2 phi_f)]
    damped_cos   a + b cos(omega t + phi) exp(-t/tau)

All fits are chi^2 minimizations (scipy least_squares with analytic Jacobians)
from five jittered starts drawn from a Philox stream keyed by `seed`.

Usage:
    curve = load_curve_csv(Path("spectrum.csv"))
    fit = multi_gaussian_fit(curve, n_peaks=2, window=(1.0, 6.0))
    sig = bootstrap_uncertainty(curve.frequencies, curve.values, curve.sigma,
                                lambda x, y, s: multi_gaussian_fit_arrays(x, y, s, 2).parameters, 200, seed=7)
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from scipy import optimize, signal

from skills.errors import (
    FitError,
    NoDominantFrequencyError,
    NumericalError,
    SingularCovarianceError,
    ValidationError,
)
from skills.response.response import ResponseCurve

N_STARTS = 5
COND_LIMIT = 1e14
FAILURE_BUDGET = 0.2
Mapper = Callable[[Callable, Iterable], Iterable]
Kernel = Literal["gaussian", "three_term"]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class PeakFit:
    baseline: float
    peaks: list[tuple[float, float, float]]  # (amplitude, center MHz, width MHz)
    chi2: float
    dof: int
    covariance: np.ndarray = field(repr=False)
    kernel: Kernel = "gaussian"
    weighted: bool = True

    @property
    def parameters(self) -> np.ndarray:
        return np.array([self.baseline, *(v for peak in self.peaks for v in peak)])

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def centers(self) -> np.ndarray:
        return np.array([p[1] for p in self.peaks])

    @property
    def center_sigmas(self) -> np.ndarray:
        return self.sigmas[2::3]

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    def to_dict(self) -> dict:
        s = self.sigmas
        return {
            "kind": "peak_fit",
            "kernel": self.kernel,
            "baseline": self.baseline,
            "baseline_sigma": float(s[0]),
            "peaks": [
                {
                    "amplitude": a,
                    "center_MHz": c,
                    "width_MHz": w,
                    "amplitude_sigma": float(s[1 + 3 * i]),
                    "center_sigma": float(s[2 + 3 * i]),
                    "width_sigma": float(s[3 + 3 * i]),
                }
                for i, (a, c, w) in enumerate(self.peaks)
            ],
            "chi2": self.chi2,
            "dof": self.dof,
            "chi2_label": "weighted" if self.weighted else "unweighted",
        }


@dataclass
class OscFit:
    offset: float
    amplitude: float
    omega: float  # rad/us
    phase: float
    tau: float  # us; inf when the decay rate sits on its bound
    sigmas: dict[str, float]
    chi2: float
    dof: int

    @property
    def frequency_MHz(self) -> float:
        return self.omega / (2.0 * math.pi)

    @property
    def unbounded_tau(self) -> bool:
        return math.isinf(self.tau)

    @property
    def parameters(self) -> np.ndarray:
        gamma = 0.0 if self.unbounded_tau else 1.0 / self.tau
        return np.array([self.offset, self.amplitude, self.omega, self.phase, gamma])

    def to_dict(self) -> dict:
        return {
            "kind": "osc_fit",
            "offset": self.offset,
            "amplitude": self.amplitude,
            "omega": self.omega,
            "frequency_MHz": self.frequency_MHz,
            "phase": self.phase,
            "tau_us": None if self.unbounded_tau else self.tau,
            "tau_unbounded": self.unbounded_tau,
            "sigmas": self.sigmas,
            "chi2": self.chi2,
            "dof": self.dof,
        }


# ---------------------------------------------------------------------------
# Shared least-squares machinery
# ---------------------------------------------------------------------------


def _covariance(jac: np.ndarray, chi2: float, dof: int, weighted: bool) -> np.ndarray:
    jtj = jac.T @ jac
    if not np.all(np.isfinite(jtj)) or np.linalg.cond(jtj) > COND_LIMIT:
        raise SingularCovarianceError("fit covariance is singular; parameters are not identifiable")
    cov = np.linalg.inv(jtj)
    if not weighted and dof > 0:
        cov *= chi2 / dof
    return cov


def _multistart(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    starts: Sequence[np.ndarray],
    bounds: tuple[np.ndarray, np.ndarray],
) -> optimize.OptimizeResult:
    lo, hi = bounds
    best = None
    for p0 in starts:
        p0 = np.clip(p0, lo, hi)
        try:
            res = optimize.least_squares(residual, p0, jac=jacobian, bounds=bounds, method="trf", x_scale="jac")
        except (ValueError, np.linalg.LinAlgError):
            continue
        if res.status > 0 and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        raise FitError("least-squares did not converge from any start")
    return best


def _prepare(
    x: np.ndarray, y: np.ndarray, sigma: np.ndarray | None, window: tuple[float, float] | None, n_params: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    weighted = sigma is not None
    s = np.ones_like(y) if sigma is None else np.asarray(sigma, dtype=np.float64)
    if window is not None:
        lo, hi = window
        if lo >= hi or lo < x.min() or hi > x.max():
            raise ValidationError(f"window {window} must lie inside the data range [{x.min()}, {x.max()}]")
        keep = (x >= lo) & (x <= hi)
        x, y, s = x[keep], y[keep], s[keep]
    if np.any(s <= 0):
        raise ValidationError("per-point sigma must be positive")
    if x.size <= n_params:
        raise ValidationError(f"{x.size} points cannot constrain {n_params} parameters")
    return x, y, s, weighted


# ---------------------------------------------------------------------------
# Peak kernels
# ---------------------------------------------------------------------------


def _peak_model(p: np.ndarray, x: np.ndarray, kernel: Kernel, cos2phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Model values and Jacobian (columns: baseline, then a, c, w per peak)."""
    n = (p.size - 1) // 3
    model = np.full(x.shape, p[0])
    jac = np.empty((x.size, p.size))
    jac[:, 0] = 1.0
    for i in range(n):
        a, c, w = p[1 + 3 * i : 4 + 3 * i]
        u = (x - c) / w
        g = np.exp(-(u**2))
        shape = g
        d_c = g * 2 * u / w
        d_w = g * 2 * u**2 / w
        if kernel == "three_term":
            v = (x + c) / w
            gp = np.exp(-(v**2))
            cross = 2.0 * np.exp(-(x**2 + c**2) / w**2) * cos2phi
            shape = g + gp + cross
            d_c = d_c - gp * 2 * v / w - cross * 2 * c / w**2
            d_w = d_w + gp * 2 * v**2 / w + cross * 2 * (x**2 + c**2) / w**3
        model = model + a * shape
        jac[:, 1 + 3 * i] = shape
        jac[:, 2 + 3 * i] = a * d_c
        jac[:, 3 + 3 * i] = a * d_w
    return model, jac


def gaussian_peak_init(
    x: np.ndarray, y: np.ndarray, sigma: np.ndarray | None, n_peaks: int
) -> np.ndarray:
    """Baseline = median; candidates = local maxima above baseline + 2 sigma, strongest first.

    Missing candidates are filled with evenly spaced centers. Returns [a0, a1, c1, w1, ...].
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    baseline = float(np.median(y))
    noise = float(np.median(sigma)) if sigma is not None else float(np.std(y - baseline)) * 0.1
    idx, props = signal.find_peaks(y, height=baseline + 2.0 * noise)
    order = np.argsort(-props["peak_heights"], kind="stable")[:n_peaks] if idx.size else np.array([], dtype=int)
    chosen = np.sort(idx[order])
    span = float(x[-1] - x[0])
    spacing = float(np.median(np.diff(x))) if x.size > 1 else span
    params = [baseline]
    if chosen.size:
        widths = signal.peak_widths(y, chosen, rel_height=0.5)[0] * spacing / (2.0 * math.sqrt(math.log(2.0)))
    else:
        widths = np.array([])
    for j in range(n_peaks):
        if j < chosen.size:
            k = chosen[j]
            params += [float(y[k] - baseline), float(x[k]), max(float(widths[j]), spacing)]
        else:
            c = x[0] + span * (j + 1) / (n_peaks + 1)
            params += [float(np.interp(c, x, y) - baseline), float(c), span / (4.0 * n_peaks)]
    return np.array(params)


def _peak_fit(
    x: np.ndarray,
    y: np.ndarray,
    sigma: np.ndarray | None,
    n_peaks: int,
    kernel: Kernel,
    *,
    window: tuple[float, float] | None,
    init: np.ndarray | None,
    phase: np.ndarray | float,
    seed: int,
) -> PeakFit:
    if n_peaks < 1:
        raise ValidationError("n_peaks must be >= 1")
    n_params = 1 + 3 * n_peaks
    full_x = np.asarray(x, dtype=np.float64)
    phase_arr = np.broadcast_to(np.asarray(phase, dtype=np.float64), full_x.shape)
    if window is not None:
        phase_arr = phase_arr[(full_x >= window[0]) & (full_x <= window[1])]
    x, y, s, weighted = _prepare(x, y, sigma, window, n_params)
    cos2phi = np.cos(2.0 * phase_arr)
    if init is None:
        p0 = gaussian_peak_init(x, y, s if weighted else None, n_peaks)
    else:
        p0 = np.asarray(init, dtype=np.float64)
    if p0.size != n_params:
        raise ValidationError(f"init needs {n_params} values for {n_peaks} peaks")

    lo = np.full(n_params, -np.inf)
    hi = np.full(n_params, np.inf)
    span = float(x.max() - x.min())
    lo[2::3], hi[2::3] = x.min(), x.max()
    lo[3::3], hi[3::3] = 1e-6 * span, 10.0 * span

    rng = _rng(seed)
    starts = [p0]
    for _ in range(N_STARTS - 1):
        jitter = p0.copy()
        jitter[2::3] += 0.1 * p0[3::3] * rng.standard_normal(n_peaks)
        jitter[3::3] *= rng.uniform(0.8, 1.2, n_peaks)
        starts.append(jitter)

    def residual(p: np.ndarray) -> np.ndarray:
        return (_peak_model(p, x, kernel, cos2phi)[0] - y) / s

    def jacobian(p: np.ndarray) -> np.ndarray:
        return _peak_model(p, x, kernel, cos2phi)[1] / s[:, None]

    res = _multistart(residual, jacobian, starts, (lo, hi))
    chi2 = float(np.sum(res.fun**2))
    dof = x.size - n_params
    cov = _covariance(jacobian(res.x), chi2, dof, weighted)
    p = res.x
    peaks = sorted(
        ((float(p[1 + 3 * i]), float(p[2 + 3 * i]), float(p[3 + 3 * i])) for i in range(n_peaks)),
        key=lambda pk: pk[1],
    )
    order = np.argsort(p[2::3], kind="stable")
    perm = np.concatenate([[0], *[[1 + 3 * i, 2 + 3 * i, 3 + 3 * i] for i in order]]).astype(int)
    return PeakFit(float(p[0]), peaks, chi2, dof, cov[np.ix_(perm, perm)], kernel, weighted)


def multi_gaussian_fit(
    curve: ResponseCurve,
    n_peaks: int,
    window: tuple[float, float] | None = None,
    init: np.ndarray | None = None,
    *,
    seed: int = 0,
) -> PeakFit:
    return multi_gaussian_fit_arrays(curve.frequencies, curve.values, curve.sigma, n_peaks, window, init, seed=seed)


def multi_gaussian_fit_arrays(
    x: np.ndarray,
    y: np.ndarray,
    sigma: np.ndarray | None,
    n_peaks: int,
    window: tuple[float, float] | None = None,
    init: np.ndarray | None = None,
    *,
    seed: int = 0,
) -> PeakFit:
    return _peak_fit(x, y, sigma, n_peaks, "gaussian", window=window, init=init, phase=0.0, seed=seed)


def three_term_gaussian_fit(
    curve: ResponseCurve,
    n_peaks: int,
    phase: np.ndarray | float,
    window: tuple[float, float] | None = None,
    init: np.ndarray | None = None,
    *,
    seed: int = 0,
) -> PeakFit:
    """Short-pulse kernel; `phase` is phi_f (scalar or per-point)."""
    return _peak_fit(
        curve.frequencies,
        curve.values,
        curve.sigma,
        n_peaks,
        "three_term",
        window=window,
        init=init,
        phase=phase,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Damped cosine
# ---------------------------------------------------------------------------

MIN_SAMPLES = 8


def _dominant_frequency(t: np.ndarray, y: np.ndarray) -> float:
    """Angular frequency of the largest non-DC peak of the detrended, uniformly resampled series."""
    grid = np.linspace(t[0], t[-1], t.size)
    resampled = np.interp(grid, t, y)
    detrended = signal.detrend(resampled, type="linear")
    if np.allclose(detrended, 0.0):
        raise NoDominantFrequencyError("series has no oscillating component")
    n_fft = 8 * grid.size
    power = np.abs(np.fft.rfft(detrended * np.hanning(grid.size), n_fft)) ** 2
    freqs = np.fft.rfftfreq(n_fft, d=grid[1] - grid[0])
    peak = int(np.argmax(power[1:])) + 1
    if power[peak] <= 0:
        raise NoDominantFrequencyError("no spectral peak above DC")
    return 2.0 * math.pi * float(freqs[peak])


def _osc_model(p: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b, w, phi, gamma = p
    e = np.exp(-gamma * t)
    c = np.cos(w * t + phi)
    s = np.sin(w * t + phi)
    jac = np.column_stack([np.ones_like(t), c * e, -b * t * s * e, -b * s * e, -b * t * c * e])
    return a + b * c * e, jac


def damped_cosine_fit(
    t: np.ndarray, y: np.ndarray, sigma: np.ndarray | None = None, *, seed: int = 0
) -> OscFit:
    """a + b cos(omega t + phi) e^{-t/tau}, omega initialized from the dominant Fourier peak."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if t.size < MIN_SAMPLES:
        raise ValidationError(f"damped-cosine fit needs >= {MIN_SAMPLES} samples, got {t.size}")
    t, y, s, weighted = _prepare(t, y, sigma, None, 5)
    span = float(t[-1] - t[0])
    w0 = _dominant_frequency(t, y)
    if w0 * span < 2.0 * math.pi:
        raise NoDominantFrequencyError(f"series spans {w0 * span / (2 * math.pi):.2f} periods, need >= 1")

    design = np.column_stack([np.ones_like(t), np.cos(w0 * t), np.sin(w0 * t)])
    a0, cc, ss = np.linalg.lstsq(design, y, rcond=None)[0]
    p0 = np.array([a0, math.hypot(cc, ss), w0, math.atan2(-ss, cc), 0.1 / span])

    lo = np.array([-np.inf, 0.0, 1e-9, -np.inf, 0.0])
    hi = np.array([np.inf, np.inf, np.inf, np.inf, np.inf])
    rng = _rng(seed)
    starts = [p0] + [p0 * np.array([1, 1, 1 + 0.02 * rng.standard_normal(), 1, 1]) for _ in range(N_STARTS - 1)]

    def residual(p: np.ndarray) -> np.ndarray:
        return (_osc_model(p, t)[0] - y) / s

    def jacobian(p: np.ndarray) -> np.ndarray:
        return _osc_model(p, t)[1] / s[:, None]

    res = _multistart(residual, jacobian, starts, (lo, hi))
    a, b, w, phi, gamma = res.x
    chi2 = float(np.sum(res.fun**2))
    dof = t.size - 5
    at_bound = gamma * span < 1e-6
    jac = jacobian(res.x)
    cov = _covariance(jac[:, :4] if at_bound else jac, chi2, dof, weighted)
    sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    sigmas = {"offset": float(sig[0]), "amplitude": float(sig[1]), "omega": float(sig[2]), "phase": float(sig[3])}
    sigmas["tau"] = math.inf if at_bound else float(sig[4] / gamma**2)
    phi = float(math.remainder(phi, 2.0 * math.pi))
    return OscFit(float(a), float(b), float(w), phi, math.inf if at_bound else 1.0 / gamma, sigmas, chi2, dof)


# ---------------------------------------------------------------------------
# Bootstrap and hypothesis test
# ---------------------------------------------------------------------------


@dataclass
class BootstrapResult:
    sigma: np.ndarray
    n_resamples: int
    n_failed: int

    @property
    def flagged(self) -> bool:
        return self.n_failed > FAILURE_BUDGET * self.n_resamples


def bootstrap_uncertainty(
    x: np.ndarray,
    y: np.ndarray,
    sigma: np.ndarray | None,
    fit_op: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    n_resamples: int,
    seed: int,
    *,
    mapper: Mapper = map,
) -> BootstrapResult:
    """Refit on y_j ~ Normal(y_j, sigma_j^2); resample i draws from Philox(key=seed + i)."""
    if sigma is None:
        raise ValidationError("bootstrap needs per-point sigma")
    if n_resamples < 2:
        raise ValidationError("bootstrap needs at least 2 resamples")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)

    def one(i: int) -> np.ndarray | None:
        noisy = y + sigma * _rng(seed + i).standard_normal(y.size)
        try:
            return np.asarray(fit_op(x, noisy, sigma), dtype=np.float64)
        except (NumericalError, ValidationError):
            return None

    results = list(mapper(one, range(n_resamples)))
    good = [r for r in results if r is not None]
    if len(good) < 2:
        raise FitError(f"{n_resamples - len(good)} of {n_resamples} bootstrap fits failed")
    return BootstrapResult(np.std(np.array(good), axis=0, ddof=1), n_resamples, n_resamples - len(good))


@dataclass(frozen=True)
class HypothesisTest:
    chi2: float
    dof: int
    scale: float
    residuals: np.ndarray

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof


def cft_hypothesis_test(
    centers: Sequence[float],
    sigmas: Sequence[float],
    levels: Sequence[float],
    scale: float | None = None,
) -> HypothesisTest:
    """chi^2 of fitted centers against scale * normalized levels; scale by weighted least squares."""
    f = np.asarray(centers, dtype=np.float64)
    s = np.asarray(sigmas, dtype=np.float64)
    if f.size < 2:
        raise ValidationError("hypothesis test needs at least 2 centers")
    if len(levels) < f.size:
        raise ValidationError(f"{f.size} centers but only {len(levels)} oracle levels")
    if np.any(s <= 0):
        raise ValidationError("center sigmas must be positive")
    e = np.asarray([float(v) for v in levels[: f.size]])
    dof = f.size - 1 if scale is None else f.size
    if scale is None:
        scale = float(np.sum(f * e / s**2) / np.sum(e**2 / s**2))
    residuals = (f - scale * e) / s
    return HypothesisTest(float(np.sum(residuals**2)), dof, scale, residuals)


# ---------------------------------------------------------------------------
# Import
# ---------------------------------------------------------------------------


def load_curve_csv(path: Path) -> ResponseCurve:
    """Columns f_MHz and delta_n (or value), optional sigma; unit weights when sigma is absent."""
    df = pd.read_csv(path)
    value_col = "delta_n" if "delta_n" in df.columns else "value"
    missing = {"f_MHz", value_col} - set(df.columns)
    if missing:
        raise ValidationError(f"{path}: missing columns {sorted(missing)}")
    df = df.sort_values("f_MHz", kind="stable")
    sigma = None
    if "sigma" in df.columns and df["sigma"].notna().all():
        sigma = df["sigma"].to_numpy(dtype=np.float64)
    return ResponseCurve(
        df["f_MHz"].to_numpy(dtype=np.float64),
        df[value_col].to_numpy(dtype=np.float64),
        "delta_n",
        sigma,
        {"source": str(path), "chi2_label": "weighted" if sigma is not None else "unweighted"},
    )
