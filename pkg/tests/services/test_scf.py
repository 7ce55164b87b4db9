import numpy as np
import pytest

from app.core.exceptions import DomainError, MetallicIterationError
from app.repositories.field import FieldRepository
from app.repositories.state import StateRepository
from app.schemas.scf import MixingConfig, SCFConfig
from app.services.bands import diagonalize_grid, find_fermi
from app.services.fields import Gaussian, PeriodicField, PlaneWaveBasis, lift_to_supercell
from app.services.geometry import kpoint_grid
from app.services.scf import (
    AndersonMixer,
    defect_energy,
    density_minimum,
    grand_canonical_energy,
    linear_defect_term,
    periodic_source,
    solve_defect,
    solve_periodic,
)

SCF_CUTOFF = 8.0


@pytest.fixture(scope="module")
def scf_config():
    return SCFConfig(cutoff=SCF_CUTOFF, tol=1e-9, max_iter=300, mixing=MixingConfig(alpha=0.5, anderson_depth=6))


@pytest.fixture(scope="module")
def periodic_L2(scf_nuclei, scf_config):
    return solve_periodic(scf_nuclei, 2, scf_config)


def _mean_coefficient(field: PeriodicField) -> complex:
    zero = field.basis.lookup(np.zeros((1, 3), dtype=int))[0]
    return field.coeffs[zero]


def _zero_mean_perturbation(basis: PlaneWaveBasis, norm: float, seed: int = 0) -> PeriodicField:
    """Random real-space-real field with vanishing mean and the given coefficient norm"""
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=basis.size) + 1j * rng.normal(size=basis.size)
    coeffs = 0.5 * (coeffs + np.conj(coeffs[basis.lookup(-basis.miller)]))
    coeffs[basis.lookup(np.zeros((1, 3), dtype=int))[0]] = 0.0
    return PeriodicField(basis, norm * coeffs / np.linalg.norm(coeffs), real=True)


class TestAndersonMixer:
    """Test group for the density mixer."""

    def test_linear_step(self):
        """Success: depth 0 is plain linear mixing"""
        mixer = AndersonMixer(alpha=0.3, depth=0)
        x = np.array([1.0, 2.0])
        out = np.array([2.0, 0.0])
        assert np.allclose(mixer.step(x, out), x + 0.3 * (out - x))

    def test_first_step_is_linear(self):
        """Success: with one stored iterate Anderson mixing falls back to a linear step"""
        mixer = AndersonMixer(alpha=0.5, depth=4)
        x = np.zeros(3)
        out = np.ones(3)
        assert np.allclose(mixer.step(x, out), 0.5 * np.ones(3))

    def test_converges_on_linear_contraction(self):
        """Success: Anderson acceleration reaches the fixed point of an affine contraction"""
        A = np.diag([0.5, 0.2, -0.3])
        b = np.array([1.0, -2.0, 0.5])
        fixed = np.linalg.solve(np.eye(3) - A, b)
        mixer = AndersonMixer(alpha=0.5, depth=2)
        x = np.zeros(3)
        for _ in range(30):
            x = mixer.step(x, A @ x + b)
        assert np.linalg.norm(x - fixed) < 1e-8

    def test_reset(self):
        """Success: reset clears the history"""
        mixer = AndersonMixer(alpha=0.5, depth=2)
        mixer.step(np.zeros(2), np.ones(2))
        mixer.step(np.ones(2), np.ones(2) * 1.5)
        mixer.reset()
        assert np.allclose(mixer.step(np.zeros(2), np.ones(2)), 0.5 * np.ones(2))


class TestLinearDefectTerm:
    """Test group for -int V0 nu."""

    def test_constant_potential(self, cube, charged_nu):
        """Success: a constant potential gives minus its value times the defect charge"""
        basis = PlaneWaveBasis(cube, 10.0)
        coeffs = np.zeros(basis.size, dtype=complex)
        coeffs[basis.lookup(np.zeros((1, 3), dtype=int))[0]] = 1.0
        V0 = PeriodicField(basis, coeffs, real=True)
        assert linear_defect_term(V0, charged_nu) == pytest.approx(-0.1 / np.sqrt(cube.cell_volume), rel=1e-10)

    def test_supercell_potential(self, cube, charged_nu):
        """Fail: V0 must live on the unit cell"""
        V0 = PeriodicField.zeros(PlaneWaveBasis(cube, 10.0, L=2))
        with pytest.raises(DomainError):
            linear_defect_term(V0, charged_nu)


class TestSolverInputs:
    """Test group for input checks of the self-consistent solvers."""

    def test_periodic_needs_nuclear_density(self, charged_nu):
        """Fail: a defect density is not a periodic nuclear density"""
        with pytest.raises(DomainError):
            solve_periodic(charged_nu, 1)

    def test_fractional_nuclear_charge(self, cube):
        """Fail: the nuclear charge per cell must be an integer"""
        mu = periodic_source(cube, gaussians=[Gaussian((0.0, 0.0, 0.0), 0.3, 1.5)])
        with pytest.raises(DomainError):
            solve_periodic(mu, 1)

    def test_defect_support_exceeds_supercell(self, scf_nuclei, charged_nu):
        """Fail: L smaller than the defect support"""
        with pytest.raises(DomainError):
            solve_defect(scf_nuclei, charged_nu, 1, fermi_level=0.0)

    def test_defect_kind(self, scf_nuclei):
        """Fail: the defect argument must be a defect density"""
        with pytest.raises(DomainError):
            solve_defect(scf_nuclei, scf_nuclei, 2, fermi_level=0.0)


class TestPeriodicSolve:
    """Test group for the periodic ground state on Lambda_2."""

    def test_periodic_converged(self, scf_nuclei, scf_config, periodic_L2):
        """Success: converged, gapped and neutral"""
        state, bands = periodic_L2
        assert state.residual <= scf_config.tol
        assert state.gap is not None and state.gap > scf_config.gap_tol
        assert state.num_occupied == 8
        vol = scf_nuclei.geometry.cell_volume
        assert np.real(_mean_coefficient(state.density)) * np.sqrt(vol) == pytest.approx(1.0, abs=1e-8)
        assert bands.fermi.num_occupied == 1

    def test_density_nonnegative(self, periodic_L2):
        """Success: the density is nonnegative on a real-space grid"""
        state, _ = periodic_L2
        assert density_minimum(state) > -1e-6

    def test_gap_persists_on_finer_grid(self, scf_config, periodic_L2):
        """Success: the converged potential keeps its gap within 10% on Lambda_4"""
        state, _ = periodic_L2
        finer = diagonalize_grid(state.potential, kpoint_grid(state.potential.basis.geometry, 4), scf_config.cutoff)
        gap = find_fermi(finer, 1, scf_config.gap_tol).gap
        assert abs(gap - state.gap) <= 0.1 * state.gap

    def test_grand_canonical_is_minimal(self, periodic_L2):
        """Success: a zero-mean perturbation of the density raises the energy at second order"""
        state, _ = periodic_L2
        delta = _zero_mean_perturbation(state.density.basis, 1e-4)
        change = grand_canonical_energy(state, state.density + delta) - state.energy
        assert change >= -1e-9
        assert abs(change) < 1e-6

    def test_grand_canonical_is_quadratic(self, periodic_L2):
        """Success: doubling the perturbation roughly quadruples the energy change"""
        state, _ = periodic_L2
        small = grand_canonical_energy(state, state.density + _zero_mean_perturbation(state.density.basis, 1e-3))
        large = grand_canonical_energy(state, state.density + _zero_mean_perturbation(state.density.basis, 2e-3))
        ratio = (large - state.energy) / (small - state.energy)
        assert 3.0 < ratio < 5.0

    def test_state_dump(self, tmp_path, periodic_L2):
        """Success: the state dump keeps energies, the trace and the density"""
        state, _ = periodic_L2
        path = StateRepository.save_state(tmp_path / "state.json", state)
        dump = StateRepository.load_state(path)
        assert dump.kind == "periodic"
        assert dump.energy == pytest.approx(state.energy)
        assert len(dump.trace) == len(state.trace)
        density = FieldRepository.from_model(dump.density)
        assert np.allclose(density.coeffs, state.density.coeffs, rtol=0, atol=1e-15)

    def test_metallic_converged_state(self, cube):
        """Fail: a nearly uniform background leaves free-electron bands that overlap"""
        mu = periodic_source(cube, gaussians=[Gaussian((0.0, 0.0, 0.0), 2.0, 1.0)])
        cfg = SCFConfig(cutoff=SCF_CUTOFF, tol=10.0, max_iter=5)
        with pytest.raises(MetallicIterationError):
            solve_periodic(mu, 2, cfg)


@pytest.mark.slow
class TestSelfConsistentField:
    """Test group for supercell ground states and defect energies."""

    def test_periodic_matches_supercell(self, scf_nuclei, scf_config, periodic_L2):
        """Success: the Bloch solve on Lambda_2 and the full supercell solve agree"""
        state, _ = periodic_L2
        supercell = solve_defect(scf_nuclei, None, 2, state.fermi_level, scf_config, start=state.density)
        assert supercell.num_occupied == state.num_occupied
        assert supercell.energy == pytest.approx(state.energy, rel=1e-7, abs=1e-7)
        lifted = lift_to_supercell(state.density, supercell.density.basis)
        assert np.max(np.abs(lifted.coeffs - supercell.density.coeffs)) < 1e-6

    def test_zero_defect(self, scf_nuclei, charged_nu, scf_config, periodic_L2):
        """Success: a vanishing defect costs no energy"""
        state, _ = periodic_L2
        energy = defect_energy(scf_nuclei, charged_nu.scaled(0.0), 2, scf_config, periodic=state)
        assert energy.J == pytest.approx(0.0, abs=1e-8)
        assert energy.charge_conserved

    def test_charged_defect(self, scf_nuclei, charged_nu, scf_config, periodic_L2):
        """Success: the defect energy is the difference of the energy parts and keeps the electron count"""
        state, _ = periodic_L2
        energy = defect_energy(scf_nuclei, charged_nu, 2, scf_config, periodic=state)
        assert energy.charge_conserved
        assert energy.parts.total == pytest.approx(energy.J, abs=1e-10)

    def test_scaled_defect_is_quadratic_beyond_linear(self, scf_nuclei, charged_nu, scf_config, periodic_L2):
        """Success: J(t nu) minus its linear part scales like t^2"""
        state, _ = periodic_L2
        linear = linear_defect_term(state.potential, charged_nu)
        remainder = {}
        for t in (1.0, 0.5, 0.25):
            J = defect_energy(scf_nuclei, charged_nu.scaled(t), 2, scf_config, periodic=state).J
            remainder[t] = J - t * linear
        assert remainder[1.0] != pytest.approx(0.0, abs=1e-8)
        assert remainder[0.5] / remainder[0.25] == pytest.approx(4.0, rel=0.1)
