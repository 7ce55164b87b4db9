"""L-ladders for the defect energy, their 1/L fits and the predicted slope.

Sign convention: J^L = J + s / L + ... with s = 2 pi a q^2 / |Gamma|. The quadratic
pipeline records J - J^L restricted to its quadratic part, so its predicted
slope is -s.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import RankDeficiencyError
from app.schemas.scf import SCFConfig
from app.schemas.study import (
    ConvergenceReport,
    LadderEntry,
    Pipeline,
    Provenance,
    RemainderModel,
    StudyConfig,
)
from app.services.bands import BandStructure, diagonalize_grid, find_fermi
from app.services.fields import SourceDensity, source_from_spec
from app.services.fitting import linear_least_squares, power_law_exponent
from app.services.geometry import LatticeGeometry, kpoint_grid
from app.services.lattice_sums import correction_constant, madelung_ewald
from app.services.response import (
    DielectricData,
    continuum_average,
    dielectric_matrix,
    quadratic_energy_difference,
)
from app.services.scf import GroundState, defect_energy, linear_defect_term, solve_periodic

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InverseLFit:
    intercept: float
    slope: float
    residual_exponent: float
    residuals: np.ndarray
    condition_number: float


def fit_inverse_L(values: Sequence[float], Ls: Sequence[int]) -> InverseLFit:
    """Least squares on {1, 1/L}, then a log-log exponent for the residuals"""
    Ls = np.asarray(Ls, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(np.unique(Ls)) < 3:
        raise RankDeficiencyError("fit needs at least three distinct L", distinct=len(np.unique(Ls)))
    fit = linear_least_squares(np.column_stack([np.ones_like(Ls), 1.0 / Ls]), values)
    scale = max(float(np.max(np.abs(values), initial=0.0)), 1e-300)
    exponent, _ = power_law_exponent(Ls, fit.residuals, floor=1e-12 * scale)
    return InverseLFit(
        intercept=float(fit.coefficients[0]),
        slope=float(fit.coefficients[1]),
        residual_exponent=exponent,
        residuals=fit.residuals,
        condition_number=fit.condition_number,
    )


def predicted_slope(geometry: LatticeGeometry, charge: float, M: np.ndarray) -> Tuple[float, float]:
    """(s, a) with s = 2 pi a q^2 / |Gamma| and a the correction constant of M"""
    a = correction_constant(geometry, np.real(M)).a
    return 2.0 * np.pi * a * charge**2 / geometry.cell_volume, a


def successive_difference_ratio(raw: Sequence[float], corrected: Sequence[float]) -> float:
    """|raw_{n} - raw_{n-1}| / |corrected_{n} - corrected_{n-1}| at the largest L"""
    if len(raw) < 2:
        return float("nan")
    top = abs(raw[-1] - raw[-2])
    bottom = abs(corrected[-1] - corrected[-2])
    return float("inf") if bottom == 0.0 else top / bottom


def fit_remainder_model(
    ts: Sequence[float],
    scaled_values: Sequence[float],
    linear_term: float,
    nu_norm: float,
    Ls: Sequence[int] = (),
    ladder_residuals: Sequence[float] = (),
) -> RemainderModel:
    """Fit J(t nu) - t * linear ~ c2 t^2 + c3 (t |nu|)^3 and the ladder residual ~ c |nu|^2 / L^3 + floor"""
    model = RemainderModel(nu_norm=nu_norm)
    ts = np.asarray(ts, dtype=float)
    if len(ts) >= 2:
        nonlinear = np.asarray(scaled_values, dtype=float) - ts * linear_term
        fit = linear_least_squares(np.column_stack([ts**2, (ts * nu_norm) ** 3]), nonlinear)
        model.quadratic_coefficient = float(fit.coefficients[0])
        model.cubic_coefficient = float(fit.coefficients[1])
    if len(Ls) >= 2:
        Ls = np.asarray(Ls, dtype=float)
        fit = linear_least_squares(np.column_stack([nu_norm**2 / Ls**3, np.ones_like(Ls)]), np.abs(ladder_residuals))
        model.inverse_cube_coefficient = float(fit.coefficients[0])
        model.exponential_floor = float(abs(fit.coefficients[1]))
    return model


@dataclass
class StudyInputs:
    geometry: LatticeGeometry
    mu: SourceDensity
    nu: SourceDensity
    scf: SCFConfig


def study_inputs(cfg: StudyConfig) -> StudyInputs:
    geometry = cfg.geometry()
    mu = source_from_spec("periodic_nuclear", geometry, cfg.mu_per)
    nu = source_from_spec("defect", geometry, cfg.nu)
    nu.check_support()
    scf_cfg = SCFConfig(cutoff=cfg.cutoff, tol=cfg.tolerances.scf, mixing=cfg.mixing)
    return StudyInputs(geometry=geometry, mu=mu, nu=nu, scf=scf_cfg)


def response_bands(cfg: StudyConfig, inputs: StudyInputs, periodic: Optional[GroundState] = None) -> Tuple[GroundState, BandStructure]:
    """Converged periodic potential rediagonalized on the response grid Lambda_P"""
    if periodic is None:
        periodic, _ = solve_periodic(inputs.mu, cfg.periodic_L, inputs.scf)
    bands = diagonalize_grid(periodic.potential, kpoint_grid(inputs.geometry, cfg.response_grid_P), cfg.cutoff)
    find_fermi(bands, cfg.electrons_per_cell, inputs.scf.gap_tol)
    return periodic, bands


def _provenance(
    cfg: StudyConfig,
    inputs: StudyInputs,
    dielectric: DielectricData,
    a: float,
    linear_term: Optional[float],
) -> Provenance:
    geometry = inputs.geometry
    madelung = madelung_ewald(geometry) if geometry.is_cubic else None
    return Provenance(
        lattice=geometry.rows(),
        charge=inputs.nu.charge,
        cell_volume=geometry.cell_volume,
        M_zero=np.real(dielectric.M_zero).tolist(),
        M1_zero=np.real(dielectric.M1_zero).tolist(),
        epsilon=dielectric.epsilon,
        a=a,
        madelung=madelung.m if madelung else None,
        madelung_shifted=madelung.m_prime if madelung else None,
        linear_term=linear_term,
        response_grid_P=cfg.response_grid_P,
    )


def _report(
    pipeline: Pipeline,
    Ls: List[int],
    values: List[float],
    slope_prediction: float,
    provenance: Provenance,
) -> ConvergenceReport:
    fit = fit_inverse_L(values, Ls)
    corrected = [v - slope_prediction / L for v, L in zip(values, Ls)]
    corrected_fit = linear_least_squares(np.column_stack([np.ones(len(Ls))]), corrected)
    scale = max(float(np.max(np.abs(values), initial=0.0)), 1e-300)
    deviation = abs(fit.slope - slope_prediction) / max(abs(slope_prediction), scale)
    entries = [
        LadderEntry(L=L, value=v, corrected_value=c, fitted=fit.intercept + fit.slope / L, residual=float(r))
        for L, v, c, r in zip(Ls, values, corrected, fit.residuals)
    ]
    logger.info(f"{pipeline.value}: slope={fit.slope:.8e}, predicted={slope_prediction:.8e}, deviation={deviation:.3%}")
    return ConvergenceReport(
        pipeline=pipeline.value,
        entries=entries,
        intercept=fit.intercept,
        slope=fit.slope,
        predicted_slope=slope_prediction,
        relative_deviation=deviation,
        residual_exponent=fit.residual_exponent,
        condition_number=fit.condition_number,
        corrected_intercept=float(corrected_fit.coefficients[0]),
        difference_ratio=successive_difference_ratio(values, corrected),
        provenance=provenance,
    )


def run_quadratic_study(cfg: StudyConfig) -> ConvergenceReport:
    inputs = study_inputs(cfg)
    periodic, bands = response_bands(cfg, inputs)
    grid = kpoint_grid(inputs.geometry, cfg.response_grid_P)
    dielectric = dielectric_matrix(bands, grid, cfg.response_cutoff)
    s, a = predicted_slope(inputs.geometry, inputs.nu.charge, dielectric.M_zero)
    inner = kpoint_grid(inputs.geometry, cfg.response_inner_grid) if cfg.response_inner_grid else None
    average = continuum_average(bands, inputs.nu, grid, dielectric.M_zero, cfg.response_cutoff, inner)
    values = []
    for L in cfg.L_ladder:
        value = quadratic_energy_difference(
            bands, inputs.nu, L, grid, dielectric.M_zero, cfg.response_cutoff, average=average
        )
        logger.info(f"Quadratic ladder L={L}: {value:.10e}")
        values.append(value)
    linear_term = linear_defect_term(periodic.potential, inputs.nu)
    return _report(
        Pipeline.QUADRATIC_RESPONSE,
        cfg.L_ladder,
        values,
        -s,
        _provenance(cfg, inputs, dielectric, a, linear_term),
    )


def run_scf_study(cfg: StudyConfig) -> ConvergenceReport:
    inputs = study_inputs(cfg)
    values: List[float] = []
    last: Optional[GroundState] = None
    for L in cfg.L_ladder:
        periodic, _ = solve_periodic(inputs.mu, L, inputs.scf)
        energy = defect_energy(inputs.mu, inputs.nu, L, inputs.scf, periodic=periodic)
        logger.info(f"SCF ladder L={L}: J={energy.J:.12f} (occupied {energy.state.num_occupied})")
        values.append(energy.J)
        last = periodic

    _, bands = response_bands(cfg, inputs, last)
    grid = kpoint_grid(inputs.geometry, cfg.response_grid_P)
    dielectric = dielectric_matrix(bands, grid, cfg.response_cutoff)
    s, a = predicted_slope(inputs.geometry, inputs.nu.charge, dielectric.M_zero)
    linear_term = linear_defect_term(last.potential, inputs.nu)
    report = _report(Pipeline.FULL_SCF, cfg.L_ladder, values, s, _provenance(cfg, inputs, dielectric, a, linear_term))

    if len(cfg.t_scaling) >= 2:
        L0 = cfg.L_ladder[0]
        periodic, _ = solve_periodic(inputs.mu, L0, inputs.scf)
        scaled = [defect_energy(inputs.mu, inputs.nu.scaled(t), L0, inputs.scf, periodic=periodic).J for t in cfg.t_scaling]
        report.remainder = fit_remainder_model(
            cfg.t_scaling,
            scaled,
            linear_defect_term(periodic.potential, inputs.nu),
            inputs.nu.l2_norm(4.0 * cfg.cutoff),
            cfg.L_ladder,
            [e.residual for e in report.entries],
        )
    return report


def run_study(cfg: StudyConfig) -> List[ConvergenceReport]:
    reports = []
    if cfg.pipeline in (Pipeline.QUADRATIC_RESPONSE, Pipeline.BOTH):
        reports.append(run_quadratic_study(cfg))
    if cfg.pipeline in (Pipeline.FULL_SCF, Pipeline.BOTH):
        reports.append(run_scf_study(cfg))
    return reports


def periodic_dielectric(
    geometry: LatticeGeometry,
    mu: SourceDensity,
    electrons_per_cell: int,
    cutoff: float,
    P: int,
    response_cutoff: float,
    periodic_L: Optional[int] = None,
) -> Tuple[DielectricData, BandStructure]:
    """Periodic SCF on Lambda_{periodic_L} (default Lambda_P), rediagonalization on Lambda_P and M(0)"""
    scf_cfg = SCFConfig(cutoff=cutoff)
    periodic, _ = solve_periodic(mu, P if periodic_L is None else periodic_L, scf_cfg)
    grid = kpoint_grid(geometry, P)
    bands = diagonalize_grid(periodic.potential, grid, cutoff)
    find_fermi(bands, electrons_per_cell, scf_cfg.gap_tol)
    return dielectric_matrix(bands, grid, response_cutoff), bands
