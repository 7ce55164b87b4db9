import numpy as np
import pytest

from app.core.exceptions import DomainError, InvalidSizeError, NonFiniteValueError
from app.services.geometry import LatticeGeometry, cubic_point_group
from app.services.lattice_sums import (
    RadialCutoff,
    angular_inverse_form,
    bz_inverse_square_average,
    correction_constant,
    madelung,
    madelung_direct,
    madelung_ewald,
    multipole_bound,
    multipole_remainder,
    rate_exponential,
    rate_singular,
    rate_sobolev,
    riemann_sums,
)

SIMPLE_CUBIC_MADELUNG = -2.8372974794806
TETRAGONAL = LatticeGeometry(np.diag([1.0, 1.0, 1.5]))
SHEARED = LatticeGeometry(np.array([[1.0, 0.3, 0.1], [0.0, 1.0, -0.2], [0.0, 0.0, 1.2]]))
ANISOTROPIC = np.array([[2.0, 0.3, 0.0], [0.3, 1.5, 0.1], [0.0, 0.1, 1.2]])


class TestMadelung:
    """Test group for the Madelung constant."""

    def test_ewald_simple_cubic(self, unit_cube):
        """Success: simple cubic golden value"""
        assert madelung_ewald(unit_cube).m == pytest.approx(SIMPLE_CUBIC_MADELUNG, abs=1e-8)

    def test_direct_agrees_with_ewald(self, unit_cube):
        """Success: the multipole-accelerated direct sum matches the Ewald split"""
        direct = madelung_direct(unit_cube)
        assert direct.m == pytest.approx(madelung_ewald(unit_cube).m, abs=1e-8)
        assert direct.est_error < 1e-8

    def test_scaling(self):
        """Success: m(c Lambda) = m(Lambda) / c"""
        m1 = madelung_ewald(LatticeGeometry.cubic(1.0)).m
        m2 = madelung_ewald(LatticeGeometry.cubic(2.0)).m
        assert m2 == pytest.approx(m1 / 2, rel=1e-12)

    def test_shifted_variant(self, unit_cube):
        """Success: m' - m = pi / 2 for the unit cube"""
        result = madelung(unit_cube, "ewald")
        assert result.m_prime - result.m == pytest.approx(np.pi / 2)

    @pytest.mark.parametrize("geometry", [TETRAGONAL, SHEARED], ids=["tetragonal", "sheared"])
    def test_direct_agrees_with_ewald_off_cubic(self, geometry):
        """Success: both methods agree on lattices without cubic symmetry"""
        direct = madelung_direct(geometry, tol=1e-6)
        assert direct.m == pytest.approx(madelung_ewald(geometry).m, abs=1e-6)

    def test_unknown_method(self, unit_cube):
        """Fail: unknown method name"""
        with pytest.raises(DomainError):
            madelung(unit_cube, "brute_force")


class TestCorrectionConstant:
    """Test group for the correction constant a(M)."""

    def test_isotropic_identity(self, unit_cube):
        """Success: a(I) = -2 pi^2 m / |Gamma*|"""
        a = correction_constant(unit_cube, np.eye(3)).a
        expected = -2 * np.pi**2 * madelung_ewald(unit_cube).m / unit_cube.bz_volume
        assert abs(a - expected) / abs(a) <= 1e-6

    def test_homogeneity(self, unit_cube):
        """Success: a(2 I) = a(I) / 2"""
        a1 = correction_constant(unit_cube, np.eye(3)).a
        a2 = correction_constant(unit_cube, 2 * np.eye(3)).a
        assert a2 == pytest.approx(a1 / 2, rel=1e-10)

    @pytest.mark.parametrize(
        "M",
        [
            np.diag([1.0, 1.0, -1.0]),
            np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
            np.eye(2),
        ],
    )
    def test_invalid_matrix(self, unit_cube, M):
        """Fail: indefinite, non-Hermitian or wrongly shaped M"""
        with pytest.raises(DomainError):
            correction_constant(unit_cube, M)

    def test_point_group_invariance(self, unit_cube):
        """Success: a(U^T M U) = a(M) for every rotation of the cube"""
        a = correction_constant(unit_cube, ANISOTROPIC).a
        for U in cubic_point_group()[::7]:
            rotated = U.T @ ANISOTROPIC @ U
            assert correction_constant(unit_cube, rotated).a == pytest.approx(a, rel=1e-8)

    @pytest.mark.slow
    def test_anisotropic_against_riemann_ladder(self, unit_cube):
        """Success: a(diag(1, 1, 2)) is the 1/L coefficient of the brute-force Riemann error"""
        M = np.diag([1.0, 1.0, 2.0])
        a = correction_constant(unit_cube, M).a
        report = rate_singular(
            lambda q: np.ones(len(q)), M, [8, 12, 16, 24, 32, 48, 64], unit_cube, cutoff=RadialCutoff(6.0), a=a
        )
        assert abs(report.coefficient - a) / abs(a) < 1e-3
        assert a != pytest.approx(correction_constant(unit_cube, np.eye(3)).a, rel=1e-2)

    def test_multipole_remainder_decay(self, unit_cube):
        """Success: |F_1(k, q)| |k|^4 / |q|^2 stays bounded far from the origin"""
        assert multipole_bound(unit_cube) < 20.0
        k = np.array([[40 * np.pi, 0.0, 0.0]])
        q = np.array([[0.3, 0.2, -0.1]])
        assert abs(multipole_remainder(k, q)[0]) < 1e-5

    def test_bz_average_of_inverse_square(self, unit_cube):
        """Success: the face rule integrates the singular average to quadrature accuracy"""
        coarse = bz_inverse_square_average(unit_cube.reciprocal, order=16)
        fine = bz_inverse_square_average(unit_cube.reciprocal, order=32)
        assert coarse == pytest.approx(fine, rel=1e-10)

    def test_angular_form_identity(self):
        """Success: the sphere integral of 1 / |w|^2 is 4 pi"""
        assert angular_inverse_form(np.eye(3)) == pytest.approx(4 * np.pi)


class TestRiemannSums:
    """Test group for Riemann sums and their convergence rates."""

    def _gaussian(self, q):
        return np.exp(-np.sum(q * q, axis=1))

    def test_zero_function(self, unit_cube):
        """Success: f = 0 gives zero in every mode"""

        def zero(q):
            return np.zeros(len(q))

        for mode in ("integral", "sum", "sum0"):
            assert riemann_sums(zero, 3.0, mode, unit_cube, radius=5.0) == 0.0

    def test_origin_term(self, unit_cube):
        """Success: I_lam - I_lam^0 = f(0) / lam^3"""
        for lam in (2.0, 5.0):
            full = riemann_sums(self._gaussian, lam, "sum", unit_cube, radius=8.0)
            punctured = riemann_sums(self._gaussian, lam, "sum0", unit_cube, radius=8.0)
            assert full - punctured == pytest.approx(1.0 / lam**3, rel=1e-12)

    def test_gaussian_closed_form(self, unit_cube):
        """Success: the Riemann sum of a Gaussian matches pi^{3/2} / |Gamma*| super-polynomially"""
        exact = riemann_sums(self._gaussian, 1.0, "integral", unit_cube, radius=8.0, integral=np.pi**1.5)
        assert exact == pytest.approx(np.pi**1.5 / unit_cube.bz_volume)
        assert abs(riemann_sums(self._gaussian, 12, "sum", unit_cube, radius=8.0) - exact) < 1e-12

    def test_ball_quadrature(self, unit_cube):
        """Success: spherical product quadrature reproduces the Gaussian integral"""
        value = riemann_sums(self._gaussian, 1.0, "integral", unit_cube, radius=8.0)
        assert value == pytest.approx(np.pi**1.5 / unit_cube.bz_volume, rel=1e-10)

    def test_nonfinite(self, unit_cube):
        """Fail: 1 / |q|^2 at the origin"""

        def coulomb(q):
            with np.errstate(divide="ignore"):
                return 1.0 / np.sum(q * q, axis=1)

        with pytest.raises(NonFiniteValueError):
            riemann_sums(coulomb, 4.0, "sum", unit_cube, radius=1.0)

    def test_bad_lambda(self, unit_cube):
        """Fail: non-positive scaling"""
        with pytest.raises(InvalidSizeError):
            riemann_sums(self._gaussian, 0.0, "sum", unit_cube, radius=1.0)

    def test_exponential_rate(self, unit_cube):
        """Success: analytic periodic integrand converges exponentially"""

        def f(k):
            return np.exp(np.cos(k[:, 0]))

        report = rate_exponential(f, range(2, 11), unit_cube)
        assert all(b < a for a, b in zip(report.errors, report.errors[1:]))
        assert report.r_squared >= 0.99
        assert report.rate > 1.0
        assert report.errors[-1] < 1e-9 * np.exp(1.0)

    def test_sobolev_rate(self, unit_cube):
        """Success: |q| Psi(q) converges like L^-4 once the smooth part is resolved"""
        report = rate_sobolev([16, 24, 32, 48, 64], unit_cube, power=1.0, cutoff=RadialCutoff(8.0))
        assert 3.5 <= report.rate <= 4.5

    @pytest.mark.slow
    def test_singular_rate(self, unit_cube):
        """Success: the 1/L coefficient of the singular Riemann error is a(I)"""

        def one(q):
            return np.ones(len(q))

        report = rate_singular(one, np.eye(3), [8, 12, 16, 24, 32, 48, 64], unit_cube, cutoff=RadialCutoff(6.0))
        a = correction_constant(unit_cube, np.eye(3)).a
        assert report.expected_coefficient == pytest.approx(a)
        assert abs(report.coefficient - a) / abs(a) < 1e-3
        assert report.residual_exponent >= 2.5

    def test_singular_needs_screening(self, unit_cube):
        """Fail: M below the identity"""
        with pytest.raises(DomainError):
            rate_singular(lambda q: np.ones(len(q)), 0.5 * np.eye(3), [4, 8, 12], unit_cube)

    def test_ladder_must_increase(self, unit_cube):
        """Fail: unsorted ladder"""
        with pytest.raises(InvalidSizeError):
            rate_sobolev([8, 4, 12], unit_cube)

    def test_cutoff_profile(self, unit_cube):
        """Success: psi is 1 on [0, r/2], 0 beyond r and non-increasing"""
        psi = RadialCutoff.for_geometry(unit_cube)
        s = np.linspace(0.0, 1.2 * psi.radius, 200)
        values = psi(s)
        assert np.all(values[s <= psi.radius / 2] == 1.0)
        assert np.all(values[s >= psi.radius] == 0.0)
        assert np.all(np.diff(values) <= 1e-15)

    def test_single_mode_aliasing(self, unit_cube):
        """Success: cos(2 pi m . x) with m = (3, 0, 0) is resolved by every grid except L = 3"""

        def mode(q):
            frac = unit_cube.to_fractional(q)
            return np.cos(2 * np.pi * 3 * frac[:, 0])

        report = rate_exponential(mode, range(2, 8), unit_cube, reference=0.0)
        errors = dict(zip(report.L_values, report.errors))
        assert errors[3] == pytest.approx(1.0, abs=1e-12)
        assert all(errors[L] < 1e-12 for L in errors if L != 3)

    def test_odd_integrand_has_no_singular_term(self, unit_cube):
        """Success: g(q) = q_1 cancels on the symmetric grid and in the integral"""
        report = rate_singular(
            lambda q: q[:, 0], np.eye(3), [8, 12, 16, 24], unit_cube, cutoff=RadialCutoff(6.0), a=1.0
        )
        assert report.expected_coefficient == 0.0
        assert abs(report.coefficient) < 1e-10

    def test_smooth_integrand_has_no_singular_term(self, unit_cube):
        """Success: g(q) = |q|^2 exp(-|q|^2) cancels the pole and the error decays super-polynomially"""

        def g(q):
            q2 = np.sum(q * q, axis=1)
            return q2 * np.exp(-q2)

        report = rate_singular(g, np.eye(3), [12, 16, 24, 32], unit_cube, cutoff=RadialCutoff(12.0), a=1.0)
        assert abs(report.coefficient) < 1e-8
