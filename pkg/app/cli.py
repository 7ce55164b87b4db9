"""Command-line entry point: ``python -m app.cli <command>``"""

import json
import logging
from pathlib import Path
from typing import Callable, List, Optional, Type, TypeVar

import numpy as np
import typer
from pydantic import BaseModel, ValidationError
from rich.console import Console
from rich.table import Table

from app.core.exceptions import SupercorrError
from app.repositories.band import BandRepository
from app.repositories.report import ReportRepository
from app.repositories.state import StateRepository
from app.schemas.dielectric import DielectricRequest
from app.schemas.lattice import LatticeSpec, MadelungMethod
from app.schemas.scf import SCFRunConfig
from app.schemas.study import StudyConfig
from app.services.fields import source_from_spec
from app.services.geometry import LatticeGeometry
from app.services.lattice_sums import (
    RadialCutoff,
    RiemannReport,
    correction_constant,
    madelung,
    rate_exponential,
    rate_singular,
    rate_sobolev,
)
from app.services.scf import defect_energy, solve_periodic
from app.services.study import periodic_dielectric, run_study
from app.utils.safe_block import safe_block

logger = logging.getLogger(__name__)

cli = typer.Typer(help="Finite-size corrections for charged defects in supercell rHF.", no_args_is_help=True)
console = Console()

CUBIC = "1 0 0 0 1 0 0 0 1"
ConfigT = TypeVar("ConfigT", bound=BaseModel)


@cli.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log per-iteration details")):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _numbers(text: str, count: int, what: str) -> List[float]:
    try:
        values = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise typer.BadParameter(f"{what} must be numbers")
    if len(values) != count:
        raise typer.BadParameter(f"{what} needs {count} numbers, got {len(values)}")
    return values


def _geometry(text: str) -> LatticeGeometry:
    try:
        return LatticeSpec(lattice=_numbers(text, 9, "lattice")).geometry()
    except ValidationError as e:
        raise typer.BadParameter(e.errors()[0]["msg"])


def _load(path: Path, model: Type[ConfigT]) -> ConfigT:
    try:
        return model.model_validate_json(path.read_text())
    except ValidationError as e:
        console.print(f"[red]Invalid configuration {path}:[/red]\n{e}")
        raise typer.Exit(code=2)


def _run(action: Callable[[], None]):
    """Report library errors in red and exit non-zero"""
    try:
        action()
    except SupercorrError as e:
        console.print(f"[red]{type(e).__name__}:[/red] {e}")
        raise typer.Exit(code=1)


@cli.command("madelung")
def madelung_command(
    lattice: str = typer.Option(CUBIC, help="Nine numbers, rows a1 a2 a3"),
    method: MadelungMethod = typer.Option(MadelungMethod.EWALD),
):
    """Madelung constant m and its shifted variant m'"""

    def action():
        geometry = _geometry(lattice)
        methods = ["ewald", "direct_multipole"] if method == MadelungMethod.BOTH else [method.value]
        table = Table(title="Madelung constant")
        for column in ("method", "m", "m'", "est. error"):
            table.add_column(column)
        for name in methods:
            result = madelung(geometry, name)
            table.add_row(result.method, f"{result.m:.14f}", f"{result.m_prime:.14f}", f"{result.est_error:.1e}")
        console.print(table)

    _run(action)


@cli.command("alpha")
def alpha_command(
    lattice: str = typer.Option(CUBIC, help="Nine numbers, rows a1 a2 a3"),
    m: str = typer.Option(CUBIC, "--m", help="Nine numbers of the dielectric matrix, row-major"),
):
    """Correction constant a(M)"""

    def action():
        geometry = _geometry(lattice)
        M = np.array(_numbers(m, 9, "M")).reshape(3, 3)
        result = correction_constant(geometry, M)
        console.print(f"a(M) = [bold]{result.a:.14f}[/bold]  (est. error {result.est_error:.1e})")

    _run(action)


def _save_series(out: Path, name: str, report: RiemannReport, fitted: List[float]):
    with safe_block(f"{name} series CSV"):
        ReportRepository.save_series_csv(out / f"{name}.csv", report.L_values, report.values, report.errors, fitted)


@cli.command("riemann-suite")
def riemann_suite_command(
    out: Path = typer.Option(Path("riemann"), help="Directory for the CSV series"),
    lattice: str = typer.Option(CUBIC, help="Nine numbers, rows a1 a2 a3"),
):
    """Exponential, singular and algebraic Riemann-sum rates"""

    def action():
        geometry = _geometry(lattice)
        out.mkdir(parents=True, exist_ok=True)
        table = Table(title="Riemann-sum convergence")
        for column in ("suite", "measured", "expected"):
            table.add_column(column)

        def smooth(k):
            return np.exp(np.sum(np.cos(k @ geometry.direct), axis=1))

        expo = rate_exponential(smooth, range(2, 11), geometry)
        fitted = [expo.errors[0] * np.exp(-expo.rate * (L - expo.L_values[0])) for L in expo.L_values]
        _save_series(out, "exponential", expo, fitted)
        table.add_row("exp(sum cos)", f"rate {expo.rate:.4f} (R^2 {expo.r_squared:.4f})", "exponential")

        def gaussian(q):
            return np.exp(-np.sum(q * q, axis=1))

        cutoff = RadialCutoff.for_geometry(geometry)
        singular = rate_singular(gaussian, np.eye(3), [4, 6, 8, 10, 12, 16], geometry, cutoff=cutoff)
        _save_series(out, "singular", singular, [singular.expected_coefficient / L for L in singular.L_values])
        table.add_row(
            "g(q)/|q|^2",
            f"1/L coefficient {singular.coefficient:.8f}",
            f"a g(0) = {singular.expected_coefficient:.8f}",
        )

        sobolev = rate_sobolev([4, 6, 8, 10, 12, 16], geometry, power=1.0, cutoff=cutoff)
        fitted = [sobolev.errors[0] * (sobolev.L_values[0] / L) ** sobolev.rate for L in sobolev.L_values]
        _save_series(out, "sobolev", sobolev, fitted)
        table.add_row("|q| Psi(q)", f"rate {sobolev.rate:.3f}", "4.0")
        console.print(table)
        console.print(f"Series written to {out}")

    _run(action)


@cli.command("dielectric")
def dielectric_command(config: Path = typer.Option(..., exists=True, dir_okay=False, help="JSON configuration")):
    """Macroscopic dielectric matrix M(0), M1(0) and epsilon as JSON"""
    request = _load(config, DielectricRequest)

    def action():
        geometry = request.geometry()
        mu = source_from_spec("periodic_nuclear", geometry, request.mu_per)
        data, bands = periodic_dielectric(
            geometry, mu, request.electrons_per_cell, request.cutoff, request.P, request.response_cutoff, request.periodic_L
        )
        payload = {
            "M_zero": np.real(data.M_zero).tolist(),
            "M1_zero": np.real(data.M1_zero).tolist(),
            "epsilon": data.epsilon,
            "isotropic_cubic": data.isotropic_cubic,
            "fermi_level": bands.fermi.fermi_level,
            "gap": bands.fermi.gap,
        }
        console.print_json(json.dumps(payload))

    _run(action)


@cli.command("scf")
def scf_command(
    config: Path = typer.Option(..., exists=True, dir_okay=False, help="JSON configuration"),
    L: int = typer.Option(1, "--L", min=1, help="Supercell size"),
    out: Optional[Path] = typer.Option(None, help="JSON dump of the periodic state"),
    bands_csv: Optional[Path] = typer.Option(None, help="CSV dump of the band energies"),
):
    """Periodic ground state, plus the defect energy when the configuration has nu"""
    run = _load(config, SCFRunConfig)

    def action():
        geometry = run.geometry()
        mu = source_from_spec("periodic_nuclear", geometry, run.mu_per)
        cfg = run.solver_config(L)
        periodic, bands = solve_periodic(mu, L, cfg)
        console.print(
            f"Periodic L={L}: I = {periodic.energy:.12f}, eps_F = {periodic.fermi_level:.8f}, "
            f"gap = {periodic.gap:.6f}, iterations = {len(periodic.trace)}"
        )
        if out is not None:
            with safe_block("state dump"):
                StateRepository.save_state(out, periodic)
        if bands_csv is not None:
            with safe_block("band dump"):
                BandRepository.save_band_csv(bands_csv, bands)
        if run.nu is not None:
            nu = source_from_spec("defect", geometry, run.nu)
            energy = defect_energy(mu, nu, L, cfg, periodic=periodic)
            console.print(f"Defect L={L}: J = [bold]{energy.J:.12f}[/bold]")
            for name, value in energy.parts.as_dict().items():
                console.print(f"  {name:>8}: {value:.12f}")

    _run(action)


@cli.command("defect-study")
def defect_study_command(
    config: Path = typer.Option(..., exists=True, dir_okay=False, help="JSON study configuration"),
    out: Path = typer.Option(Path("report"), help="Output directory"),
):
    """L-ladder of defect energies with the 1/L fit and the predicted slope"""
    study = _load(config, StudyConfig)

    def action():
        reports = run_study(study)
        ReportRepository.save_report(out / "report.json", study, reports)
        with safe_block("ladder CSV"):
            ReportRepository.save_ladder_csv(out / "ladder.csv", reports)
        with safe_block("constants CSV"):
            ReportRepository.save_constants_csv(out / "constants.csv", reports[0])

        table = Table(title="1/L fits")
        for column in ("pipeline", "intercept", "slope", "predicted", "deviation", "residual exp."):
            table.add_column(column)
        for report in reports:
            style = "green" if report.relative_deviation <= study.tolerances.fit else "yellow"
            table.add_row(
                report.pipeline,
                f"{report.intercept:.10f}",
                f"{report.slope:.8f}",
                f"{report.predicted_slope:.8f}",
                f"[{style}]{report.relative_deviation:.2%}[/{style}]",
                f"{report.residual_exponent:.2f}",
            )
        console.print(table)
        console.print(f"Report written to {out}")

    _run(action)


if __name__ == "__main__":
    cli()
