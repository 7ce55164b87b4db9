"""Least-squares and extrapolation helpers shared by the lattice-sum and study code."""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from app.core.exceptions import RankDeficiencyError

logger = logging.getLogger(__name__)

# Residuals below this fraction of the data scale are treated as exact.
NOISE_FLOOR = 1e-12


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    condition_number: float


def linear_least_squares(design: np.ndarray, values: Sequence[float]) -> LinearFit:
    """Ordinary least squares with a rank check"""
    design = np.asarray(design, dtype=float)
    values = np.asarray(values, dtype=float)
    coeffs, _, rank, sing = np.linalg.lstsq(design, values, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficiencyError("design matrix is rank deficient", rank=int(rank), columns=design.shape[1])
    cond = float(sing[0] / sing[-1]) if sing[-1] > 0 else float("inf")
    return LinearFit(coefficients=coeffs, residuals=values - design @ coeffs, condition_number=cond)


def power_law_exponent(x: Sequence[float], y: Sequence[float], floor: float = None) -> Tuple[float, float]:
    """Fit |y| ~ C x^{-p}; returns (p, R^2).

    Points at the noise floor are dropped; with fewer than two points left the
    decay is reported as infinite.
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if floor is None:
        floor = NOISE_FLOOR * max(float(np.max(y, initial=0.0)), 1.0)
    keep = y > floor
    if keep.sum() < 2:
        return float("inf"), 1.0
    lx, ly = np.log(x[keep]), np.log(y[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(-slope), r_squared(ly, slope * lx + intercept)


def log_linear_rate(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """Fit |y| ~ C exp(-alpha x); returns (alpha, R^2). Exact zeros are skipped."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    keep = y > 0.0
    if keep.sum() < 2:
        return float("inf"), 1.0
    ly = np.log(y[keep])
    slope, intercept = np.polyfit(x[keep], ly, 1)
    return float(-slope), r_squared(ly, slope * x[keep] + intercept)


def r_squared(observed: np.ndarray, predicted: np.ndarray) -> float:
    ss_res = float(np.sum((observed - predicted) ** 2))
    ss_tot = float(np.sum((observed - np.mean(observed)) ** 2))
    return 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot


def richardson(values: Sequence[float], sizes: Sequence[float], powers: Sequence[float]) -> Tuple[float, float]:
    """Extrapolate v(s) = v_inf + sum_j c_j s^{-p_j} to s -> infinity.

    Uses as many powers as there are extra points; returns (v_inf, estimated error)
    where the error compares against the extrapolation with one power fewer.
    """
    values = np.asarray(values, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    n = len(values)
    if n < 2 or len(powers) < n - 1:
        raise RankDeficiencyError("Richardson needs at least two values and n-1 powers", n=n)

    def solve(m: int) -> float:
        v, s = values[-m:], sizes[-m:]
        design = np.column_stack([np.ones(m)] + [s ** (-p) for p in powers[: m - 1]])
        return float(np.linalg.solve(design, v)[0])

    best = solve(n)
    previous = solve(n - 1) if n > 2 else float(values[-1])
    return best, abs(best - previous)
