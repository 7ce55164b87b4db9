import numpy as np
import pytest

from app.core.exceptions import RankDeficiencyError
from app.services.fitting import (
    linear_least_squares,
    log_linear_rate,
    power_law_exponent,
    r_squared,
    richardson,
)


class TestLeastSquares:
    """Test group for the least-squares helpers."""

    def test_exact_recovery(self):
        """Success: noiseless data are reproduced"""
        L = np.array([2.0, 3.0, 4.0, 6.0])
        fit = linear_least_squares(np.column_stack([np.ones(4), 1 / L]), 1.5 - 0.7 / L)
        assert fit.coefficients == pytest.approx([1.5, -0.7])
        assert np.max(np.abs(fit.residuals)) < 1e-14
        assert fit.condition_number > 1.0

    def test_rank_deficient(self):
        """Fail: two identical columns"""
        design = np.column_stack([np.ones(3), np.ones(3)])
        with pytest.raises(RankDeficiencyError):
            linear_least_squares(design, [1.0, 2.0, 3.0])

    def test_r_squared(self):
        """Success: perfect prediction has R^2 = 1"""
        y = np.array([1.0, 2.0, 4.0])
        assert r_squared(y, y) == 1.0


class TestRates:
    """Test group for decay-rate fits."""

    def test_power_law(self):
        """Success: y = 3 x^-2 gives p = 2"""
        x = np.array([2.0, 4.0, 8.0, 16.0])
        p, r2 = power_law_exponent(x, 3 * x**-2.0)
        assert p == pytest.approx(2.0)
        assert r2 == pytest.approx(1.0)

    def test_power_law_noise_floor(self):
        """Success: residuals at the noise floor mean faster than any power"""
        p, _ = power_law_exponent([2.0, 4.0, 8.0], [1e-15, 0.0, 1e-16])
        assert p == float("inf")

    def test_log_linear(self):
        """Success: y = exp(-0.8 x) gives alpha = 0.8"""
        x = np.arange(1, 8, dtype=float)
        alpha, r2 = log_linear_rate(x, np.exp(-0.8 * x))
        assert alpha == pytest.approx(0.8)
        assert r2 == pytest.approx(1.0)


class TestRichardson:
    """Test group for Richardson extrapolation."""

    def test_exact_for_model(self):
        """Success: v(s) = 1 + 2 s^-3 + 3 s^-5 is extrapolated exactly from three sizes"""
        s = np.array([33.0, 65.0, 129.0])
        value, err = richardson(1 + 2 * s**-3 + 3 * s**-5, s, powers=[3.0, 5.0])
        assert value == pytest.approx(1.0, abs=1e-13)
        assert err < 1e-6

    def test_too_few_powers(self):
        """Fail: three values but a single power"""
        with pytest.raises(RankDeficiencyError):
            richardson([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], powers=[3.0])
