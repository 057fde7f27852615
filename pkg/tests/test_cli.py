"""
tests/test_cli.py — rydberg-lab command surface.

Verifies:
  1. basis prints d(19) = 10946 and writes report.json under --out
  2. oracle prints the TCI free tower and rejects undefined boundaries (exit 2)
  3. Invalid configs exit 2; numerical failures exit 3
  4. --set overrides and RYDBERG_LAB_OUT reach the command
  5. fit writes a schema-valid fit.json for peak and damped-cosine imports
  6. experiment dispatches to the pipeline and reports check results
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner
from pytest_mock import MockerFixture

from harness.cli import cli
from harness.experiments import ExperimentReport, relative_check
from skills.errors import NoCrossingError

_REPO = Path(__file__).parent.parent


def _invoke(*args: str, env: dict[str, str] | None = None):
    return CliRunner().invoke(cli, list(args), env=env)


# ---------------------------------------------------------------------------
# basis / oracle
# ---------------------------------------------------------------------------


def test_basis_dimension(tmp_path: Path) -> None:
    result = _invoke("--out", str(tmp_path), "basis", "--L", "19")
    assert result.exit_code == 0, result.output
    assert "dimension 10946" in result.output
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["results"]["dimension"] == 10946
    assert (tmp_path / "timing.json").exists()


def test_out_from_environment(tmp_path: Path) -> None:
    result = _invoke("basis", "--L", "3", env={"RYDBERG_LAB_OUT": str(tmp_path / "env_out")})
    assert result.exit_code == 0, result.output
    assert (tmp_path / "env_out" / "report.json").exists()


def test_oracle_tci_free(tmp_path: Path) -> None:
    csv = tmp_path / "levels.csv"
    result = _invoke(
        "--out", str(tmp_path), "oracle", "--model", "tci", "--bc", "free", "--parity", "odd", "--csv", str(csv)
    )
    assert result.exit_code == 0, result.output
    assert "normalized energies: 0, 3/2, 2, 5/2" in result.output
    assert pd.read_csv(csv).shape[0] == 4


def test_oracle_rejects_undefined_boundary(tmp_path: Path) -> None:
    result = _invoke("--out", str(tmp_path), "oracle", "--model", "ising", "--bc", "intermediate", "--parity", "odd")
    assert result.exit_code == 2
    assert "ERROR" in result.output


def test_oracle_illegal_parity(tmp_path: Path) -> None:
    result = _invoke("--out", str(tmp_path), "oracle", "--model", "ising", "--bc", "fixed_pp", "--parity", "even")
    assert result.exit_code == 2
    assert "need odd L" in result.output


# ---------------------------------------------------------------------------
# config-driven commands
# ---------------------------------------------------------------------------


def test_invalid_config_exits_2(tmp_path: Path) -> None:
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("chain: {L: 5, omega: 1.0}\nunknown_section: 1\n")
    result = _invoke("--out", str(tmp_path / "out"), "spectrum", "--config", str(cfg))
    assert result.exit_code == 2
    assert "invalid configuration" in result.output
    assert "unknown_section" in result.output


def test_spectrum_with_override(tmp_path: Path) -> None:
    spectrum_yaml = str(_REPO / "config" / "spectrum.yaml")
    overrides = ("--set", "chain.L=7", "--set", "chain.delta=8.8")
    result = _invoke("--out", str(tmp_path), *overrides, "spectrum", "--config", spectrum_yaml)
    assert result.exit_code == 0, result.output
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["results"]["L"] == 7
    assert payload["results"]["dimension"] == 34
    assert payload["results"]["gaps_MHz"][1] == pytest.approx(2.83, rel=0.03)
    assert (tmp_path / "spectrum.csv").exists()


def test_numerical_failure_exits_3(tmp_path: Path, mocker: MockerFixture) -> None:
    mocker.patch("harness.cli.run_dsf", side_effect=NoCrossingError("curves do not cross"))
    result = _invoke("--out", str(tmp_path), "dsf", "--config", str(_REPO / "config" / "dsf.yaml"))
    assert result.exit_code == 3
    assert "numerical failure (NoCrossingError)" in result.output


def test_experiment_dispatch(tmp_path: Path, mocker: MockerFixture) -> None:
    report = ExperimentReport("tci_boundary", {"chain": {"L": 13}})
    report.checks.append(relative_check("ratio_E2_E1_free_boundary", 1.34, 4 / 3, 0.05))
    run = mocker.patch("harness.cli.run_experiment", return_value=report)
    result = _invoke(
        "--out", str(tmp_path), "--threads", "3", "experiment", "--config", str(_REPO / "config" / "tci_boundary.yaml")
    )
    assert result.exit_code == 0, result.output
    assert run.call_args.args[1] == 3
    assert run.call_args.args[0].experiment == "tci_boundary"
    assert "[PASS] ratio_E2_E1_free_boundary" in result.output
    assert "all checks passed" in result.output


def test_experiment_without_name_exits_2(tmp_path: Path) -> None:
    result = _invoke("--out", str(tmp_path), "experiment", "--config", str(_REPO / "config" / "gap_L7.yaml"))
    assert result.exit_code == 2


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def test_fit_gaussian_csv(tmp_path: Path) -> None:
    f = np.linspace(0.5, 6.0, 111)
    values = 0.002 + 0.05 * np.exp(-(((f - 2.83) / 0.3) ** 2))
    csv = tmp_path / "curve.csv"
    pd.DataFrame({"f_MHz": f, "delta_n": values, "sigma": np.full(f.size, 1e-4)}).to_csv(csv, index=False)
    result = _invoke("--out", str(tmp_path / "out"), "fit", "--csv", str(csv), "--n-peaks", "1")
    assert result.exit_code == 0, result.output
    record = json.loads((tmp_path / "out" / "fit.json").read_text())
    assert record["kind"] == "peak_fit"
    assert math.isclose(record["peaks"][0]["center_MHz"], 2.83, abs_tol=1e-4)
    assert "centers (MHz): 2.8300" in result.output


def test_fit_bootstrap_needs_sigma(tmp_path: Path) -> None:
    f = np.linspace(0.5, 6.0, 56)
    csv = tmp_path / "curve.csv"
    pd.DataFrame({"f_MHz": f, "value": np.exp(-(((f - 3.0) / 0.4) ** 2))}).to_csv(csv, index=False)
    result = _invoke("--out", str(tmp_path / "out"), "fit", "--csv", str(csv), "--bootstrap", "10")
    assert result.exit_code == 2
    assert "sigma" in result.output


def test_fit_damped_cosine_csv(tmp_path: Path) -> None:
    t = np.linspace(0.0, 3.0, 121)
    values = 0.3 + 0.1 * np.cos(2 * math.pi * 2.0 * t) * np.exp(-t / 2.0)
    csv = tmp_path / "series.csv"
    pd.DataFrame({"t_us": t, "value": values}).to_csv(csv, index=False)
    result = _invoke("--out", str(tmp_path / "out"), "fit", "--csv", str(csv), "--kind", "damped_cosine")
    assert result.exit_code == 0, result.output
    record = json.loads((tmp_path / "out" / "fit.json").read_text())
    assert record["kind"] == "osc_fit"
    assert math.isclose(record["frequency_MHz"], 2.0, rel_tol=1e-4)
