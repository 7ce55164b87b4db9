"""Grand-canonical supercell reduced Hartree-Fock.

The defect-free problem is solved fiber by fiber on Lambda_L; the defect problem
on the full supercell basis with the Fermi level frozen from the defect-free run.
Energies follow

    I = 1/2 Tr(-Laplace gamma) + 1/2 D_L(rho - mu, rho - mu) - eps_F Tr(gamma).

Orbital bases use the cutoff E_c; densities and potentials use 4 E_c, which holds
every difference of two orbital wavevectors.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from app.core.exceptions import (
    DefectTooStrongError,
    DomainError,
    MetallicIterationError,
    MetallicSystemError,
    NonConvergenceError,
)
from app.schemas.scf import MixingConfig, SCFConfig
from app.services.bands import (
    BandStructure,
    FermiData,
    assemble_fiber,
    diagonalize,
    find_fermi,
    potential_lookup,
)
from app.services.fields import (
    PeriodicField,
    PlaneWaveBasis,
    SourceDensity,
    coulomb_form,
    green_convolve,
    lift_to_supercell,
)
from app.services.geometry import LatticeGeometry, kpoint_grid

logger = logging.getLogger(__name__)

DENSITY_CUTOFF_FACTOR = 4.0
# occupied levels closer than this to eps_F make the occupation ill-defined
AUFBAU_MARGIN = 1e-8


@dataclass
class EnergyParts:
    kinetic: float
    coulomb: float
    fermi: float

    @property
    def total(self) -> float:
        return self.kinetic + self.coulomb + self.fermi

    def as_dict(self) -> Dict[str, float]:
        return {"kinetic": self.kinetic, "coulomb": self.coulomb, "fermi": self.fermi, "total": self.total}

    def __sub__(self, other: "EnergyParts") -> "EnergyParts":
        return EnergyParts(self.kinetic - other.kinetic, self.coulomb - other.coulomb, self.fermi - other.fermi)


@dataclass
class Iteration:
    iteration: int
    residual: float
    fermi_level: float
    energy: float


@dataclass
class GroundState:
    kind: str
    L: int
    cutoff: float
    density: PeriodicField
    potential: PeriodicField
    fermi_level: float
    num_occupied: int
    parts: EnergyParts
    gap: Optional[float]
    trace: List[Iteration]
    problem: "_Problem" = field(repr=False, default=None)

    @property
    def energy(self) -> float:
        return self.parts.total

    @property
    def residual(self) -> float:
        return self.trace[-1].residual if self.trace else 0.0


@dataclass
class DefectEnergy:
    L: int
    J: float
    parts: EnergyParts
    reference: GroundState
    state: GroundState

    @property
    def charge_conserved(self) -> bool:
        return self.reference.num_occupied == self.state.num_occupied


@dataclass
class _Response:
    """One application of rho -> density of 1(H[rho] < eps_F)"""

    density: PeriodicField
    potential: PeriodicField
    parts: EnergyParts
    fermi_level: float
    num_occupied: int
    gap: Optional[float]
    bands: Optional[BandStructure] = None


def _pair_index(miller: np.ndarray, density_basis: PlaneWaveBasis) -> np.ndarray:
    """Density-basis position of miller[i] - miller[j] for every orbital pair"""
    diff = miller[:, None, :] - miller[None, :, :]
    idx = density_basis.lookup(diff)
    if np.any(idx < 0):
        raise DomainError("density basis does not hold all orbital differences")
    return idx


def _accumulate_density(orbitals: np.ndarray, pairs: np.ndarray, out: np.ndarray, weight: float):
    """out[G] += weight * sum_{i - j = G} sum_n c_n[i] conj(c_n[j])"""
    D = orbitals @ orbitals.conj().T
    np.add.at(out, pairs.reshape(-1), weight * D.reshape(-1))


def _kinetic(orbitals: np.ndarray, norms: np.ndarray) -> float:
    return float(0.5 * np.sum(norms[:, None] ** 2 * np.abs(orbitals) ** 2))


def _band_filling(bands: BandStructure, N: int) -> FermiData:
    """Lowest N bands on every fiber, eps_F between the extreme edges; the gap may be negative"""
    tops = np.array([f.eigenvalues[N - 1] for f in bands.fibers]) if N > 0 else np.array([-np.inf])
    bottoms = np.array([f.eigenvalues[N] for f in bands.fibers])
    top, bottom = float(tops.max()), float(bottoms.min())
    level = 0.5 * (top + bottom) if N > 0 else bottom - 1.0
    fermi = FermiData(fermi_level=level, num_occupied=N, gap=bottom - top, grid=bands.grid)
    bands.fermi = fermi
    return fermi


class _Problem:
    """A fixed-point map with its density basis and nuclear density"""

    L: int
    cutoff: float
    density_basis: PlaneWaveBasis
    nuclear: PeriodicField
    kind: str
    coulomb_scale: float = 1.0

    def potential(self, density: PeriodicField) -> PeriodicField:
        return green_convolve(density - self.nuclear)

    def coulomb(self, density: PeriodicField) -> float:
        diff = density - self.nuclear
        return 0.5 * self.coulomb_scale * coulomb_form(diff, diff)

    def respond(self, density: PeriodicField, iteration: int = 0) -> _Response:
        raise NotImplementedError

    def accept(self, out: _Response, iteration: int):
        """Checks on a converged iterate"""


class _BlochProblem(_Problem):
    """Gamma-periodic problem on Lambda_L; energies are totals over the supercell"""

    kind = "periodic"

    def __init__(self, mu: SourceDensity, L: int, cfg: SCFConfig):
        geometry = mu.geometry
        self.L = L
        self.cutoff = cfg.cutoff
        self.gap_tol = cfg.gap_tol
        self.grid = kpoint_grid(geometry, L)
        self.density_basis = PlaneWaveBasis(geometry, DENSITY_CUTOFF_FACTOR * cfg.cutoff)
        self.nuclear = mu.field(self.density_basis)
        self.electrons = mu.charge
        self.coulomb_scale = float(L**3)
        self._pairs: Dict[int, np.ndarray] = {}

    def respond(self, density: PeriodicField, iteration: int = 0) -> _Response:
        V = self.potential(density)
        fibers = [diagonalize(assemble_fiber(V, q, self.cutoff)) for q in self.grid.fractional]
        bands = BandStructure(grid=self.grid, fibers=fibers, V0=V, cutoff=self.cutoff)
        try:
            fermi = find_fermi(bands, self.electrons, self.gap_tol)
        except MetallicSystemError as e:
            # intermediate iterates may touch; only the converged state must be gapped
            fermi = _band_filling(bands, int(round(self.electrons)))
            logger.warning(f"Iteration {iteration}: {e}; filling the lowest {fermi.num_occupied} bands per fiber")

        N = fermi.num_occupied
        vol = self.density_basis.geometry.cell_volume
        coeffs = np.zeros(self.density_basis.size, dtype=complex)
        kinetic = 0.0
        for i, fiber in enumerate(fibers):
            if i not in self._pairs:
                self._pairs[i] = _pair_index(fiber.basis.miller, self.density_basis)
            occ = fiber.eigenvectors[:, :N]
            _accumulate_density(occ, self._pairs[i], coeffs, 1.0 / (np.sqrt(vol) * len(fibers)))
            kinetic += _kinetic(occ, fiber.basis.norms)
        rho = PeriodicField(self.density_basis, 0.5 * (coeffs + np.conj(coeffs[self._mirror])), real=True)
        parts = EnergyParts(
            kinetic=kinetic,
            coulomb=self.coulomb(rho),
            fermi=-fermi.fermi_level * self.L**3 * N,
        )
        return _Response(rho, V, parts, fermi.fermi_level, self.L**3 * N, fermi.gap, bands)

    def accept(self, out: _Response, iteration: int):
        if out.gap is None or out.gap <= self.gap_tol:
            raise MetallicIterationError(
                "gap closed at the converged periodic density",
                iteration=iteration,
                gap=out.gap,
                fermi_level=out.fermi_level,
            )

    @property
    def _mirror(self) -> np.ndarray:
        return self.density_basis.lookup(-self.density_basis.miller)


class _SupercellProblem(_Problem):
    """Problem on the full Gamma_L basis with a frozen Fermi level"""

    kind = "defect"

    def __init__(
        self,
        mu: SourceDensity,
        nu: Optional[SourceDensity],
        L: int,
        fermi_level: float,
        target_count: int,
        cfg: SCFConfig,
    ):
        geometry = mu.geometry
        self.L = L
        self.cutoff = cfg.cutoff
        self.fermi_level = float(fermi_level)
        self.target_count = int(target_count)
        self.basis = PlaneWaveBasis(geometry, cfg.cutoff, L=L)
        self.density_basis = PlaneWaveBasis(geometry, DENSITY_CUTOFF_FACTOR * cfg.cutoff, L=L)
        nuclear = mu.field(self.density_basis)
        if nu is not None:
            nuclear = nuclear + nu.field(self.density_basis)
        self.nuclear = nuclear
        self._pairs = _pair_index(self.basis.miller, self.density_basis)
        self._mirror = self.density_basis.lookup(-self.density_basis.miller)

    def hamiltonian(self, V: PeriodicField) -> np.ndarray:
        H = potential_lookup(V, self.basis.miller[:, None, :] - self.basis.miller[None, :, :]).astype(complex)
        H[np.diag_indices(self.basis.size)] += 0.5 * self.basis.norms**2
        return H

    def respond(self, density: PeriodicField, iteration: int = 0) -> _Response:
        V = self.potential(density)
        vals, vecs = scipy.linalg.eigh(self.hamiltonian(V))
        occ_mask = vals < self.fermi_level
        count = int(occ_mask.sum())
        if count != self.target_count:
            raise DefectTooStrongError(
                "occupied count differs from the defect-free count",
                iteration=iteration,
                occupied=count,
                expected=self.target_count,
            )
        margin = float(np.min(np.abs(vals - self.fermi_level)))
        if margin < AUFBAU_MARGIN:
            raise DefectTooStrongError("an eigenvalue sits at the Fermi level", iteration=iteration, margin=margin)
        occ = vecs[:, occ_mask]
        coeffs = np.zeros(self.density_basis.size, dtype=complex)
        _accumulate_density(occ, self._pairs, coeffs, 1.0 / np.sqrt(self.density_basis.volume))
        rho = PeriodicField(self.density_basis, 0.5 * (coeffs + np.conj(coeffs[self._mirror])), real=True)
        parts = EnergyParts(
            kinetic=_kinetic(occ, self.basis.norms),
            coulomb=self.coulomb(rho),
            fermi=-self.fermi_level * count,
        )
        top = vals[count - 1] if count else -np.inf
        bottom = vals[count] if count < len(vals) else np.inf
        return _Response(rho, V, parts, self.fermi_level, count, float(bottom - top))


class AndersonMixer:
    """Anderson acceleration for x = F(x) on real vectors.

    x_next = x + a r - (dX + a dR) beta, beta = argmin |r - dR beta|;
    falls back to linear mixing until two iterates are stored.
    """

    def __init__(self, alpha: float, depth: int, regularization: float = 1e-12):
        self.alpha = alpha
        self.depth = depth
        self.regularization = regularization
        self._x: Deque[np.ndarray] = deque(maxlen=depth + 1)
        self._r: Deque[np.ndarray] = deque(maxlen=depth + 1)

    def reset(self):
        self._x.clear()
        self._r.clear()

    def step(self, x_in: np.ndarray, x_out: np.ndarray) -> np.ndarray:
        r = x_out - x_in
        if self.depth == 0:
            return x_in + self.alpha * r
        self._x.append(x_in.copy())
        self._r.append(r.copy())
        if len(self._x) < 2:
            return x_in + self.alpha * r
        dX = np.diff(np.stack(self._x, axis=1), axis=1)
        dR = np.diff(np.stack(self._r, axis=1), axis=1)
        gram = dR.T @ dR + self.regularization * np.eye(dR.shape[1])
        beta = np.linalg.solve(gram, dR.T @ r)
        return x_in + self.alpha * r - (dX + self.alpha * dR) @ beta


def _to_real(c: np.ndarray) -> np.ndarray:
    return np.concatenate([c.real, c.imag])


def _from_real(x: np.ndarray) -> np.ndarray:
    n = len(x) // 2
    return x[:n] + 1j * x[n:]


def _iterate(problem: _Problem, start: PeriodicField, cfg: SCFConfig) -> Tuple[_Response, List[Iteration]]:
    mixing: MixingConfig = cfg.mixing
    mixer = AndersonMixer(mixing.alpha, mixing.anderson_depth)
    rho = start
    trace: List[Iteration] = []
    logger.info(f"SCF start ({problem.kind}, L={problem.L}, cutoff={problem.cutoff}, mixing={mixing.scheme.value})")
    for it in range(1, cfg.max_iter + 1):
        out = problem.respond(rho, it)
        residual = float(np.linalg.norm(out.density.coeffs - rho.coeffs))
        trace.append(Iteration(it, residual, out.fermi_level, out.parts.total))
        logger.debug(f"iteration {it}: residual={residual:.3e}, energy={out.parts.total:.12f}")
        if residual <= cfg.tol:
            problem.accept(out, it)
            logger.info(f"SCF converged in {it} iterations (energy {out.parts.total:.12f})")
            return out, trace
        mixed = _from_real(mixer.step(_to_real(rho.coeffs), _to_real(out.density.coeffs)))
        rho = rho.with_coeffs(mixed)
    raise NonConvergenceError(
        "self-consistent iteration did not converge",
        kind=problem.kind,
        iterations=cfg.max_iter,
        residual=trace[-1].residual,
    )


def _state(problem: _Problem, out: _Response, trace: List[Iteration]) -> GroundState:
    return GroundState(
        kind=problem.kind,
        L=problem.L,
        cutoff=problem.cutoff,
        density=out.density,
        potential=out.potential,
        fermi_level=out.fermi_level,
        num_occupied=out.num_occupied,
        parts=out.parts,
        gap=out.gap,
        trace=trace,
        problem=problem,
    )


def _electron_count(mu: SourceDensity) -> int:
    N = int(round(mu.charge))
    if abs(N - mu.charge) > 1e-9 or N < 0:
        raise DomainError("nuclear charge per cell must be a non-negative integer", charge=mu.charge)
    return N


def solve_periodic(
    mu: SourceDensity,
    L: int,
    cfg: Optional[SCFConfig] = None,
    start: Optional[PeriodicField] = None,
) -> Tuple[GroundState, BandStructure]:
    """Defect-free ground state on Lambda_L; the density is a unit-cell field"""
    cfg = SCFConfig() if cfg is None else cfg
    if mu.kind != "periodic_nuclear":
        raise DomainError("periodic solve needs a periodic nuclear density", kind=mu.kind)
    _electron_count(mu)
    problem = _BlochProblem(mu, L, cfg)
    if start is None:
        # empty start: the first potential is the bare -mu * G
        start = PeriodicField.zeros(problem.density_basis)
    out, trace = _iterate(problem, start, cfg)
    bands = out.bands
    logger.info(f"Periodic state L={L}: eps_F={out.fermi_level:.8f}, gap={out.gap:.6f}")
    return _state(problem, out, trace), bands


def solve_defect(
    mu: SourceDensity,
    nu: Optional[SourceDensity],
    L: int,
    fermi_level: float,
    cfg: Optional[SCFConfig] = None,
    start: Optional[PeriodicField] = None,
    target_count: Optional[int] = None,
) -> GroundState:
    """Supercell ground state of mu + nu with all levels below the frozen eps_F occupied"""
    cfg = SCFConfig() if cfg is None else cfg
    N = _electron_count(mu)
    if nu is not None:
        if nu.kind != "defect":
            raise DomainError("defect density must have kind 'defect'", kind=nu.kind)
        if L < nu.support_L:
            raise DomainError("supercell smaller than the defect support", L=L, support_L=nu.support_L)
        nu.check_support()
    target = L**3 * N if target_count is None else target_count
    problem = _SupercellProblem(mu, nu, L, fermi_level, target, cfg)
    if start is None:
        start = problem.nuclear - (nu.field(problem.density_basis) if nu is not None else PeriodicField.zeros(problem.density_basis))
    elif not start.basis.same_as(problem.density_basis):
        start = lift_to_supercell(start, problem.density_basis) if start.basis.L == 1 else start.transfer(problem.density_basis)
    out, trace = _iterate(problem, start, cfg)
    return _state(problem, out, trace)


def defect_energy(
    mu: SourceDensity,
    nu: SourceDensity,
    L: int,
    cfg: Optional[SCFConfig] = None,
    periodic: Optional[GroundState] = None,
) -> DefectEnergy:
    """J = I(mu + nu) - I(mu), both from the supercell solver with the same eps_F"""
    cfg = SCFConfig() if cfg is None else cfg
    if periodic is None:
        periodic, _ = solve_periodic(mu, L, cfg)
    reference = solve_defect(mu, None, L, periodic.fermi_level, cfg, start=periodic.density)
    state = solve_defect(mu, nu, L, periodic.fermi_level, cfg, start=reference.density)
    J = state.energy - reference.energy
    logger.info(f"Defect energy L={L}: J={J:.12f}")
    return DefectEnergy(L=L, J=J, parts=state.parts - reference.parts, reference=reference, state=state)


def linear_defect_term(V0: PeriodicField, nu: SourceDensity) -> float:
    """-int V0 nu for a unit-cell potential V0 and a compactly supported nu"""
    if V0.basis.L != 1 or V0.basis.is_shifted:
        raise DomainError("linear term needs a unit-cell potential")
    geometry = V0.basis.geometry
    L = nu.support_L
    basis_L = PlaneWaveBasis(geometry, V0.basis.cutoff, L=L)
    lifted = lift_to_supercell(V0, basis_L)
    return -float(np.real(np.vdot(lifted.coeffs, nu.field(basis_L).coeffs)))


def grand_canonical_energy(state: GroundState, density: PeriodicField) -> float:
    """Energy of the lowest levels of H[density], re-evaluated without iterating at the state's eps_F"""
    if state.problem is None:
        raise DomainError("state carries no problem definition")
    out = state.problem.respond(density)
    return out.parts.kinetic + out.parts.coulomb - state.fermi_level * out.num_occupied


def density_minimum(state: GroundState, samples: int = 8) -> float:
    """Smallest real-space density value on a uniform grid of the cell"""
    axis = (np.arange(samples) / samples) - 0.5
    frac = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3) * state.density.basis.L
    points = state.density.basis.geometry.direct_to_cartesian(frac)
    return float(np.min(state.density.evaluate(points)))


def periodic_source(geometry: LatticeGeometry, gaussians=(), bumps=()) -> SourceDensity:
    return SourceDensity(kind="periodic_nuclear", geometry=geometry, gaussians=tuple(gaussians), bumps=tuple(bumps))
