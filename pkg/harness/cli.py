"""
harness/cli.py — command-line front end for the Rydberg-chain ED / CFT lab.

Entry point:  rydberg-lab [GLOBAL OPTIONS] COMMAND [OPTIONS]

Global options (before the command):
    --set key.sub=value   config override, repeatable
    --threads N           scan-point workers (default: RYDBERG_LAB_THREADS, then 1)
    --seed N              overrides the config seed
    --out DIR             artifact directory (default: RYDBERG_LAB_OUT, then ./out)

Every command writes report.json (+ CSVs, timing.json) under --out and prints a
short summary to stdout; progress goes to stderr.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.

Examples:
    rydberg-lab basis --L 19
    rydberg-lab --set chain.L=13 spectrum --config config/spectrum.yaml
    rydberg-lab oracle --model tci --bc free --parity odd --count 4
    rydberg-lab --threads 4 --out out/ising experiment --config config/ising_spectroscopy.yaml
"""

from __future__ import annotations

import functools
import json
import sys
import time
from collections.abc import Callable
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import click
import numpy as np
import pandas as pd
import pydantic
from dotenv import load_dotenv

from harness.config import LabConfig, load_config
from harness.experiments import (
    ExperimentReport,
    fit_peaks,
    jsonable,
    population_curve,
    prepare,
    quench_gaps,
    run_critical_point,
    run_dsf,
    run_experiment,
    solve_chain,
    spectrum_frame,
    validate_report,
    with_noise,
    write_bundle,
)
from skills.cft_oracle.cft_oracle import BoundaryCondition, levels_for, levels_frame, levels_to_csv
from skills.errors import NumericalError, ValidationError
from skills.fitting.fitting import (
    bootstrap_uncertainty,
    damped_cosine_fit,
    load_curve_csv,
    multi_gaussian_fit,
    multi_gaussian_fit_arrays,
    three_term_gaussian_fit,
)
from skills.hilbert.hilbert import dimension
from skills.response.response import ResponseCurve
from skills.spectral.spectral import strongest_by_parity, transition_strengths

_REPO = Path(__file__).resolve().parents[1]

# Load .env at import time so RYDBERG_LAB_* defaults are in os.environ before Click reads envvar= options.
load_dotenv(_REPO / ".env")

_SCHEMAS = _REPO / "schemas"
_BC_CHOICES = {
    "ising": {
        "fixed_pp": BoundaryCondition.ISING_FIXED_PP,
        "fixed_pm": BoundaryCondition.ISING_FIXED_PM,
        "free": BoundaryCondition.ISING_FREE,
    },
    "tci": {
        "free": BoundaryCondition.TCI_FREE,
        "intermediate": BoundaryCondition.TCI_INTERMEDIATE,
        "fixed": BoundaryCondition.TCI_FIXED,
    },
}


@dataclass(frozen=True)
class Invocation:
    overrides: tuple[str, ...]
    threads: int
    seed: int | None
    out: Path

    def config(self, path: Path, *extra: str) -> LabConfig:
        overrides = list(self.overrides) + list(extra)
        if self.seed is not None:
            overrides.append(f"seed={self.seed}")
        return load_config(path, overrides)


# ---------------------------------------------------------------------------
# Error guard and output
# ---------------------------------------------------------------------------


def guarded(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Maps invalid input to exit 2 and numerical failure to exit 3."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except pydantic.ValidationError as exc:
            click.echo(f"ERROR: invalid configuration ({exc.error_count()} problem(s))", err=True)
            for err in exc.errors():
                loc = ".".join(str(p) for p in err["loc"]) or "<root>"
                click.echo(f"  {loc}: {err['msg']}", err=True)
            sys.exit(2)
        except ValidationError as exc:
            click.echo(f"ERROR: {exc}", err=True)
            sys.exit(2)
        except NumericalError as exc:
            click.echo(f"ERROR: numerical failure ({type(exc).__name__}): {exc}", err=True)
            sys.exit(3)

    return wrapper


def _finish(inv: Invocation, report: ExperimentReport, t0: float, started: datetime) -> None:
    path = write_bundle(inv.out, report, time.perf_counter() - t0, started)
    for check in report.checks:
        mark = "PASS" if check.passed else "FAIL"
        value = "n/a" if check.value is None else f"{check.value:.6g}"
        click.echo(f"  [{mark}] {check.id}  value={value}")
    for note in report.substitutions:
        click.echo(f"  [note] {note}", err=True)
    status = "" if not report.checks else ("  all checks passed" if report.passed else "  SOME CHECKS FAILED")
    click.echo(f"{report.name}: report → {path}{status}")


def _start() -> tuple[float, datetime]:
    return time.perf_counter(), datetime.now(timezone.utc)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


@click.group()
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Config override, e.g. chain.L=13.")
@click.option(
    "--threads",
    default=1,
    envvar="RYDBERG_LAB_THREADS",
    type=click.IntRange(min=1),
    show_default=True,
    help="Worker threads for scan points (default: RYDBERG_LAB_THREADS env var, then 1).",
)
@click.option("--seed", default=None, type=int, help="Override the config seed.")
@click.option(
    "--out",
    default="out",
    envvar="RYDBERG_LAB_OUT",
    type=click.Path(file_okay=False, path_type=Path),
    show_default=True,
    help="Artifact directory (default: RYDBERG_LAB_OUT env var, then ./out).",
)
@click.pass_context
def cli(ctx: click.Context, overrides: tuple[str, ...], threads: int, seed: int | None, out: Path) -> None:
    """rydberg-lab — exact diagonalization, dynamics and CFT checks for Rydberg chains."""
    ctx.obj = Invocation(overrides=overrides, threads=threads, seed=seed, out=out)


_config_option = click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="YAML config, or a report.json whose embedded config is rerun.",
)


@cli.command()
@click.option("--L", "L", required=True, type=click.IntRange(min=1), help="Number of sites.")
@click.pass_obj
@guarded
def basis(inv: Invocation, L: int) -> None:
    """Blockade-constrained Hilbert-space dimension d(L)."""
    t0, started = _start()
    d = dimension(L)
    click.echo(f"dimension {d}")
    report = ExperimentReport("basis", {"L": L}, results={"L": L, "dimension": d})
    _finish(inv, report, t0, started)


@cli.command()
@_config_option
@click.pass_obj
@guarded
def spectrum(inv: Invocation, config_path: Path) -> None:
    """Lowest eigenpairs with reflection-parity labels."""
    t0, started = _start()
    cfg = inv.config(config_path)
    chain = solve_chain(cfg.chain, cfg.n_states)
    spec = chain.spectrum
    report = ExperimentReport("spectrum", cfg.model_dump(mode="json"))
    report.results.update(
        L=cfg.chain.L,
        dimension=chain.basis.dim,
        energies=spec.energies,
        gaps_MHz=spec.gaps,
        parities=spec.parities,
        ambiguous=spec.ambiguous,
        max_residual=spec.max_residual,
    )
    report.frames["spectrum"] = spectrum_frame(spec)
    if len(spec) > 1:
        click.echo(f"E1 = {spec.gaps[1]:.6f} MHz  (L={cfg.chain.L}, {len(spec)} states)")
    _finish(inv, report, t0, started)


@cli.command()
@_config_option
@click.option("--count", default=4, show_default=True, type=click.IntRange(min=1), help="Strongest lines per parity.")
@click.pass_obj
@guarded
def transitions(inv: Invocation, config_path: Path, count: int) -> None:
    """|<g|K|e>|^2 for the configured drive profile, split by parity."""
    t0, started = _start()
    cfg = inv.config(config_path)
    chain = solve_chain(cfg.chain, cfg.n_states)
    table = transition_strengths(chain.spectrum, chain.drive(cfg.drive_weights(cfg.chain.L)))
    report = ExperimentReport("transitions", cfg.model_dump(mode="json"))
    for label, parity in (("ground_sector", chain.ground_sector), ("opposite_sector", -chain.ground_sector)):
        top = strongest_by_parity(table, parity, count)
        report.results[label] = {"gaps_MHz": top.gaps, "strengths": top.strengths, "indices": top.indices}
        click.echo(f"  {label}: " + ", ".join(f"{g:.4f} MHz ({s:.3g})" for g, s in zip(top.gaps, top.strengths)))
    report.results["completeness_residual"] = table.completeness_residual()
    report.frames["transitions"] = table.to_frame()
    report.frames["spectrum"] = spectrum_frame(chain.spectrum, table)
    _finish(inv, report, t0, started)


@cli.command()
@_config_option
@click.pass_obj
@guarded
def sweep(inv: Invocation, config_path: Path) -> None:
    """Adiabatic preparation from all-|0> to the configured detuning."""
    t0, started = _start()
    cfg = inv.config(config_path)
    chain = solve_chain(cfg.chain, 1)
    prep = prepare(cfg, chain)
    report = ExperimentReport("sweep", cfg.model_dump(mode="json"))
    report.results.update(
        L=cfg.chain.L,
        fidelity=prep.fidelity,
        ground_energy=prep.ground_energy,
        duration_us=prep.sweep.duration,
        segments=[s.label for s in prep.sweep.segments],
    )
    click.echo(f"fidelity {prep.fidelity:.6f}")
    _finish(inv, report, t0, started)


@cli.command()
@_config_option
@click.pass_obj
@guarded
def modulate(inv: Invocation, config_path: Path) -> None:
    """Modulation-ramp-probe spectrum delta_n(f), optionally peak-fitted."""
    t0, started = _start()
    cfg = inv.config(config_path)
    pulse = cfg.require_pulse()
    chain = solve_chain(cfg.chain, cfg.n_states)
    K = chain.drive(pulse.weights_for(cfg.chain.L))
    curve = population_curve(cfg, chain, K, pulse, cfg.scan.axis("frequencies"), inv.threads)
    curve = with_noise(curve, cfg.analysis.noise, cfg.seed)
    report = ExperimentReport("modulate", cfg.model_dump(mode="json"))
    report.frames["curve"] = curve.to_frame()
    if cfg.analysis.fit != "none":
        fit, sigmas, extra = fit_peaks(cfg, curve, pulse, cfg.analysis.n_peaks, inv.threads)
        report.results.update(fit=fit.to_dict(), center_sigmas_MHz=sigmas, **extra)
        click.echo("centers (MHz): " + ", ".join(f"{c:.4f}" for c in fit.centers))
    _finish(inv, report, t0, started)


@cli.command()
@_config_option
@click.pass_obj
@guarded
def dsf(inv: Invocation, config_path: Path) -> None:
    """Dynamical structure factor S(k, f) per configured chain length."""
    t0, started = _start()
    report = run_dsf(inv.config(config_path), inv.threads)
    _finish(inv, report, t0, started)


@cli.command("locate-ising")
@_config_option
@click.pass_obj
@guarded
def locate_ising(inv: Invocation, config_path: Path) -> None:
    """Delta_c from sigma_RS curve crossings extrapolated in 1/L."""
    t0, started = _start()
    report = run_critical_point(inv.config(config_path, "analysis.model=ising"), inv.threads)
    click.echo(f"Delta_c / Omega = {report.results['delta_c_over_omega']:.6f}")
    _finish(inv, report, t0, started)


@cli.command("locate-tci")
@_config_option
@click.pass_obj
@guarded
def locate_tci(inv: Invocation, config_path: Path) -> None:
    """Delta_c from gap-ratio crossings for consecutive odd L."""
    t0, started = _start()
    report = run_critical_point(inv.config(config_path, "analysis.model=tci"), inv.threads)
    click.echo(f"Delta_c / Omega = {report.results['delta_c_over_omega']:.6f}")
    _finish(inv, report, t0, started)


@cli.command()
@_config_option
@click.pass_obj
@guarded
def quench(inv: Invocation, config_path: Path) -> None:
    """Quench to Delta_c and fit the oscillation of sum_i <sigma_i>(t)."""
    t0, started = _start()
    cfg = inv.config(config_path)
    if cfg.quench is None:
        raise ValidationError("config is missing a quench section")
    report = ExperimentReport("quench", cfg.model_dump(mode="json"))
    report.results["quench"] = quench_gaps(cfg, report, inv.threads)
    _finish(inv, report, t0, started)


@cli.command()
@click.option("--model", required=True, type=click.Choice(["ising", "tci"]), help="Critical theory.")
@click.option(
    "--bc",
    required=True,
    type=click.Choice(["free", "fixed", "intermediate", "fixed_pp", "fixed_pm"]),
    help="Boundary condition (ising: free, fixed_pp, fixed_pm; tci: free, intermediate, fixed).",
)
@click.option("--parity", required=True, type=click.Choice(["odd", "even"]), help="Parity of the chain length L.")
@click.option("--count", default=4, show_default=True, type=click.IntRange(min=1), help="Number of levels.")
@click.option(
    "--csv",
    "csv_path",
    default=None,
    type=click.Path(dir_okay=False, path_type=Path),
    help="Also write the levels here.",
)
@click.pass_obj
@guarded
def oracle(inv: Invocation, model: str, bc: str, parity: str, count: int, csv_path: Path | None) -> None:
    """Normalized CFT finite-size levels E L / (pi v) for a boundary condition."""
    t0, started = _start()
    if bc not in _BC_CHOICES[model]:
        raise ValidationError(f"--bc {bc} is not defined for {model}; choose from {sorted(_BC_CHOICES[model])}")
    levels = levels_for(_BC_CHOICES[model][bc], f"{parity}_L", count)
    for lv in levels:
        click.echo(f"  {lv.primary:<3} J={lv.J}  E={lv.normalized_energy}  parity={lv.parity_label}")
    click.echo("normalized energies: " + ", ".join(str(lv.normalized_energy) for lv in levels))
    if csv_path is not None:
        levels_to_csv(levels, csv_path)
    report = ExperimentReport(
        "oracle",
        {"model": model, "bc": bc, "parity": parity, "count": count},
        results={"levels": [lv.to_dict() for lv in levels]},
    )
    report.frames["levels"] = levels_frame(levels)
    _finish(inv, report, t0, started)


@cli.command()
@_config_option
@click.pass_obj
@guarded
def experiment(inv: Invocation, config_path: Path) -> None:
    """Run a named experiment pipeline end to end."""
    t0, started = _start()
    cfg = inv.config(config_path)
    click.echo(f"\nrydberg-lab: experiment={cfg.experiment} name={cfg.name} threads={inv.threads}", err=True)
    report = run_experiment(cfg, inv.threads)
    _finish(inv, report, t0, started)


@cli.command()
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option(
    "--kind",
    default="gaussian",
    show_default=True,
    type=click.Choice(["gaussian", "three_term", "damped_cosine"]),
    help="Peak kernel for spectra (f_MHz, delta_n[, sigma]) or damped cosine for series (t_us, value[, sigma]).",
)
@click.option("--n-peaks", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--window", nargs=2, type=float, default=None, help="Fit window LO HI in MHz.")
@click.option("--phase", default=0.0, show_default=True, type=float, help="phi_f for the three-term kernel.")
@click.option("--bootstrap", default=0, show_default=True, type=click.IntRange(min=0), help="Resamples (needs sigma).")
@click.pass_obj
@guarded
def fit(
    inv: Invocation,
    csv_path: Path,
    kind: str,
    n_peaks: int,
    window: tuple[float, float] | None,
    phase: float,
    bootstrap: int,
) -> None:
    """Fit an imported curve and write fit.json (schema-validated)."""
    t0, started = _start()
    seed = inv.seed or 0
    window = tuple(window) if window else None
    if kind == "damped_cosine":
        df = pd.read_csv(csv_path)
        value_col = next((c for c in ("value", "delta_n") if c in df.columns), None)
        if "t_us" not in df.columns or value_col is None:
            raise ValidationError(f"{csv_path}: need columns t_us and value")
        sigma = df["sigma"].to_numpy(dtype=np.float64) if "sigma" in df.columns else None
        record = damped_cosine_fit(
            df["t_us"].to_numpy(dtype=np.float64), df[value_col].to_numpy(dtype=np.float64), sigma, seed=seed
        ).to_dict()
        schema = _SCHEMAS / "osc_fit_schema.json"
        click.echo(f"frequency {record['frequency_MHz']:.6f} MHz")
    else:
        curve = load_curve_csv(csv_path)
        if kind == "three_term":
            result = three_term_gaussian_fit(curve, n_peaks, phase, window, seed=seed)
        else:
            result = multi_gaussian_fit(curve, n_peaks, window, seed=seed)
        record = result.to_dict()
        if bootstrap:

            def refit(x: np.ndarray, y: np.ndarray, s: np.ndarray) -> np.ndarray:
                if kind == "three_term":
                    resample = ResponseCurve(x, y, "delta_n", s)
                    refitted = three_term_gaussian_fit(resample, n_peaks, phase, window, result.parameters, seed=seed)
                    return refitted.parameters
                return multi_gaussian_fit_arrays(x, y, s, n_peaks, window, result.parameters, seed=seed).parameters

            boot = bootstrap_uncertainty(curve.frequencies, curve.values, curve.sigma, refit, bootstrap, seed)
            record["bootstrap"] = {"center_sigmas": boot.sigma[2::3], "failed": boot.n_failed, "flagged": boot.flagged}
        schema = _SCHEMAS / "peak_fit_schema.json"
        click.echo("centers (MHz): " + ", ".join(f"{c:.4f}" for c in result.centers))
    record = jsonable(record)
    validate_report(record, schema)
    inv.out.mkdir(parents=True, exist_ok=True)
    (inv.out / "fit.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    report = ExperimentReport("fit", {"csv": str(csv_path), "kind": kind, "n_peaks": n_peaks}, results={"fit": record})
    _finish(inv, report, t0, started)


if __name__ == "__main__":
    cli()
