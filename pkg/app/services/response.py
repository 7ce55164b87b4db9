"""Sum-over-states linear response of the periodic insulator.

Transition elements between the fibers at q' and q' - q are coefficient-shifted
inner products in the plane-wave basis:

    T[k, n, m] = <u_{n,q'}, e_k u_{m,q'-q}>,   e_k = |Gamma|^{-1/2} exp(i k.x),

and the Coulomb-weighted response on the modes k + q reads

    L_q[k, k'] = 8 pi / (|k+q| |k'+q|) * avg_{q'} sum_{n<=N<m} conj(T[k]) T[k'] / (e_m - e_n).

The factor 8 pi collects both time-reversed transition classes, which is what a
finite-field perturbation of the supercell Hamiltonian reproduces.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from app.core.config import settings
from app.core.exceptions import DomainError, ExcludedPointError, InvalidSizeError, SingularModeError
from app.services.bands import BandStructure, BlochFiber
from app.services.fields import SQRT_FOUR_PI, PeriodicField, PlaneWaveBasis, SourceDensity
from app.services.geometry import (
    KGrid,
    LatticeGeometry,
    field_stabilizer,
    fold_fractional,
    is_isotropic_cubic,
    kpoint_grid,
)
from app.services.lattice_sums import RadialCutoff, angular_inverse_form

logger = logging.getLogger(__name__)

_SINGULAR_K = 1e-12
_HERMITIAN_TOL = 1e-10


@dataclass
class ResponseMatrix:
    q_frac: np.ndarray
    modes: np.ndarray
    wavevectors: np.ndarray
    matrix: np.ndarray
    bz_grid: KGrid

    @property
    def weights(self) -> np.ndarray:
        """sqrt(4 pi) / |k + q| for every mode"""
        return SQRT_FOUR_PI / np.linalg.norm(self.wavevectors, axis=1)

    @property
    def size(self) -> int:
        return len(self.modes)

    def resolvent_apply(self, v: np.ndarray) -> np.ndarray:
        """(1 + L_q)^{-1} v by a Hermitian positive-definite solve"""
        if self.size == 0:
            return np.zeros(0, dtype=complex)
        return scipy.linalg.solve(np.eye(self.size) + self.matrix, v, assume_a="pos")

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0))


@dataclass
class DielectricData:
    M1_zero: np.ndarray
    b_zero: List[PeriodicField]
    L_zero: ResponseMatrix
    M_zero: np.ndarray
    epsilon: Optional[float] = None
    isotropic_cubic: bool = False


@dataclass(frozen=True)
class QuadraticDefectValue:
    q_frac: Tuple[float, float, float]
    value: float


def response_basis(bands: BandStructure, response_cutoff: float = None) -> PlaneWaveBasis:
    """Unit-cell reciprocal lattice vectors k with 1/2 |k|^2 <= response_cutoff"""
    response_cutoff = settings.response_cutoff if response_cutoff is None else response_cutoff
    return PlaneWaveBasis(bands.geometry, response_cutoff)


def default_bz_grid(bands: BandStructure, bz_grid: Optional[KGrid] = None) -> KGrid:
    return kpoint_grid(bands.geometry, settings.response_grid_p) if bz_grid is None else bz_grid


def _fiber_pair(bands: BandStructure, qp_frac: np.ndarray, q_frac: np.ndarray) -> Tuple[BlochFiber, BlochFiber, np.ndarray]:
    """Fibers at q' and q' - q with the Miller offset relabeling the second onto the first"""
    fiber_a, shift_a = bands.fiber_at(qp_frac)
    fiber_b, shift_b = bands.fiber_at(np.asarray(qp_frac) - np.asarray(q_frac))
    bands.check_gap(fiber_a)
    bands.check_gap(fiber_b)
    return fiber_a, fiber_b, shift_b - shift_a


def transition_elements(fiber_a: BlochFiber, fiber_b: BlochFiber, offset: np.ndarray, modes: np.ndarray, N: int) -> np.ndarray:
    """T[k, n, m] for occupied n of fiber_a and unoccupied m of fiber_b"""
    occ = fiber_a.eigenvectors[:, :N]
    unocc = fiber_b.eigenvectors[:, N:]
    padded = np.vstack([unocc, np.zeros((1, unocc.shape[1]), dtype=unocc.dtype)])
    targets = fiber_a.basis.miller[None, :, :] - modes[:, None, :] + offset
    idx = fiber_b.basis.lookup(targets)
    idx[idx < 0] = unocc.shape[0]
    vol = fiber_a.basis.geometry.cell_volume
    return np.einsum("an,gam->gnm", occ.conj(), padded[idx]) / np.sqrt(vol)


def _denominators(fiber_a: BlochFiber, fiber_b: BlochFiber, N: int) -> np.ndarray:
    return fiber_b.eigenvalues[N:][None, :] - fiber_a.eigenvalues[:N][:, None]


def momentum_elements(fiber: BlochFiber, N: int) -> np.ndarray:
    """P[j, n, m] = <u_n, (-i grad + q)_j u_m> for occupied n, unoccupied m"""
    occ = fiber.eigenvectors[:, :N]
    unocc = fiber.eigenvectors[:, N:]
    kvec = fiber.kinetic_vectors()
    return np.einsum("an,aj,am->jnm", occ.conj(), kvec, unocc)


def build_response_matrix(
    bands: BandStructure,
    q_frac: np.ndarray,
    bz_grid: Optional[KGrid] = None,
    zero_mean: bool = False,
    response_cutoff: float = None,
) -> ResponseMatrix:
    """L_q on the modes k + q of the response basis (k = 0 dropped when zero_mean)"""
    bz_grid = default_bz_grid(bands, bz_grid)
    q_frac = np.asarray(q_frac, dtype=float)
    basis = response_basis(bands, response_cutoff)
    modes = basis.miller
    if zero_mean:
        modes = modes[np.any(modes != 0, axis=1)]
    kq = bands.geometry.to_cartesian(modes + q_frac)
    norms = np.linalg.norm(kq, axis=1)
    if np.any(norms < _SINGULAR_K):
        raise SingularModeError("response mode with |k + q| = 0", q_frac=tuple(q_frac))

    N = bands.num_occupied
    acc = np.zeros((len(modes), len(modes)), dtype=complex)
    for qp in bz_grid.fractional:
        fiber_a, fiber_b, offset = _fiber_pair(bands, qp, q_frac)
        T = transition_elements(fiber_a, fiber_b, offset, modes, N)
        acc += np.einsum("gnm,hnm->gh", T.conj(), T / _denominators(fiber_a, fiber_b, N))
    matrix = 2.0 * (SQRT_FOUR_PI**2) * acc / len(bz_grid) / np.outer(norms, norms)
    defect = float(np.max(np.abs(matrix - matrix.conj().T), initial=0.0))
    if defect > _HERMITIAN_TOL * max(1.0, float(np.max(np.abs(matrix), initial=0.0))):
        logger.warning(f"Response matrix at q={q_frac} off Hermitian by {defect:.2e}")
    matrix = 0.5 * (matrix + matrix.conj().T)
    logger.debug(f"Response matrix at q={q_frac}: {len(modes)} modes, {len(bz_grid)} q' points")
    return ResponseMatrix(q_frac=q_frac, modes=modes, wavevectors=kq, matrix=matrix, bz_grid=bz_grid)


def m1_zero(bands: BandStructure, bz_grid: Optional[KGrid] = None) -> np.ndarray:
    """(8 pi / |Gamma|) avg sum_{n<=N<m} conj(P_j) P_k / (e_m - e_n)^3"""
    bz_grid = default_bz_grid(bands, bz_grid)
    N = bands.num_occupied
    acc = np.zeros((3, 3), dtype=complex)
    for qp in bz_grid.fractional:
        fiber, _ = bands.fiber_at(qp)
        bands.check_gap(fiber)
        P = momentum_elements(fiber, N)
        delta = _denominators(fiber, fiber, N)
        acc += np.einsum("jnm,knm->jk", P.conj(), P / delta**3)
    M1 = 8.0 * np.pi / bands.geometry.cell_volume * acc / len(bz_grid)
    return 0.5 * (M1 + M1.conj().T)


def b_zero(
    bands: BandStructure,
    bz_grid: Optional[KGrid] = None,
    response_cutoff: float = None,
) -> List[PeriodicField]:
    """The three components of b(0) as zero-mean fields on the response basis.

    The pairing is fixed by the head row of the response matrix:
    L_q[0, k] ~ (q / |q|) . b(k) as q -> 0.
    """
    bz_grid = default_bz_grid(bands, bz_grid)
    basis = response_basis(bands, response_cutoff)
    nonzero = np.any(basis.miller != 0, axis=1)
    modes = basis.miller[nonzero]
    N = bands.num_occupied
    acc = np.zeros((3, len(modes)), dtype=complex)
    for qp in bz_grid.fractional:
        fiber, _ = bands.fiber_at(qp)
        bands.check_gap(fiber)
        P = momentum_elements(fiber, N)
        T = transition_elements(fiber, fiber, np.zeros(3, dtype=int), modes, N)
        delta = _denominators(fiber, fiber, N)
        acc += np.einsum("jnm,gnm->jg", P.conj(), T / delta**2)
    norms = basis.norms[nonzero]
    values = -2.0 * SQRT_FOUR_PI**2 / np.sqrt(bands.geometry.cell_volume) * acc / len(bz_grid) / norms
    fields = []
    for j in range(3):
        coeffs = np.zeros(basis.size, dtype=complex)
        coeffs[nonzero] = values[j]
        fields.append(PeriodicField(basis, coeffs))
    return fields


def schur_dielectric(M1: np.ndarray, b: np.ndarray, L0: np.ndarray) -> np.ndarray:
    """M = I + M1 - b (1 + L0)^{-1} b^*, with b given as a 3 x n array of mode values"""
    if b.shape[1] == 0:
        M = np.eye(3) + M1
    else:
        solved = scipy.linalg.solve(np.eye(L0.shape[0]) + L0, b.conj().T, assume_a="pos")
        M = np.eye(3) + M1 - b @ solved
    return 0.5 * (M + M.conj().T)


def dielectric_matrix(
    bands: BandStructure,
    bz_grid: Optional[KGrid] = None,
    response_cutoff: float = None,
) -> DielectricData:
    bz_grid = default_bz_grid(bands, bz_grid)
    M1 = m1_zero(bands, bz_grid)
    b_fields = b_zero(bands, bz_grid, response_cutoff)
    L0 = build_response_matrix(bands, np.zeros(3), bz_grid, zero_mean=True, response_cutoff=response_cutoff)
    nonzero = np.any(b_fields[0].basis.miller != 0, axis=1)
    b = np.stack([f.coeffs[nonzero] for f in b_fields])
    try:
        M = schur_dielectric(M1, b, L0.matrix)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise DomainError(f"1 + L_0 is not positive definite: {e}")

    flag = is_isotropic_cubic(bands.geometry, bands.V0)
    epsilon = float(np.real(np.trace(M)) / 3.0) if flag.is_isotropic_cubic else None
    logger.info(f"Dielectric matrix diagonal {np.real(np.diag(M))}" + (f", epsilon={epsilon:.8f}" if epsilon else ""))
    return DielectricData(
        M1_zero=M1,
        b_zero=b_fields,
        L_zero=L0,
        M_zero=M,
        epsilon=epsilon,
        isotropic_cubic=flag.is_isotropic_cubic,
    )


def coulomb_weighted_defect(bands: BandStructure, nu: SourceDensity, response: ResponseMatrix) -> np.ndarray:
    """(sqrt v_c)_q nu_q on the response modes: sqrt(4 pi) nu^(k+q) / (|Gamma|^{1/2} |k+q|)"""
    transform = nu.transform(response.wavevectors)
    return response.weights * transform / np.sqrt(bands.geometry.cell_volume)


def quadratic_defect_value(
    bands: BandStructure,
    nu: SourceDensity,
    q_frac: np.ndarray,
    bz_grid: Optional[KGrid] = None,
    response_cutoff: float = None,
) -> QuadraticDefectValue:
    """F(q) = <(1 + L_q)^{-1} v, v> with v = (sqrt v_c)_q nu_q"""
    q_frac = np.asarray(q_frac, dtype=float)
    folded, _ = fold_fractional(q_frac)
    if np.all(np.abs(folded) < _SINGULAR_K):
        raise ExcludedPointError("F is not evaluated at q = 0", q_frac=tuple(q_frac))
    response = build_response_matrix(bands, q_frac, bz_grid, response_cutoff=response_cutoff)
    v = coulomb_weighted_defect(bands, nu, response)
    value = float(np.real(np.vdot(v, response.resolvent_apply(v))))
    return QuadraticDefectValue(q_frac=tuple(float(x) for x in q_frac), value=value)


def _grid_key(frac: np.ndarray, L: int) -> Tuple[int, int, int]:
    folded, _ = fold_fractional(frac)
    return tuple(int(v) for v in np.rint(folded * L))


def defect_symmetry(bands: BandStructure, nu: SourceDensity, tol: float = 1e-10) -> List[np.ndarray]:
    """Cubic operations S (on fractional coordinates) fixing both V0 and nu, hence F(S q) = F(q)"""
    ops = field_stabilizer(bands.geometry, bands.V0, tol)
    if not ops:
        return []
    rng = np.random.default_rng(0)
    samples = rng.uniform(-2.0, 2.0, size=(16, 3))
    geometry = bands.geometry
    base = nu.transform(geometry.to_cartesian(samples))
    scale = max(float(np.max(np.abs(base))), 1e-300)
    kept = [S for S in ops if np.max(np.abs(nu.transform(geometry.to_cartesian(samples @ S.T)) - base)) <= tol * scale]
    logger.debug(f"Defect symmetry: {len(kept)} of {len(ops)} lattice operations")
    return kept


def reference_inner_grid(geometry: LatticeGeometry, P: int, cap: int = None) -> KGrid:
    """Inner q' grid for the continuum average of F over Lambda_P.

    L_q is a smooth periodic average over q', so a coarse inner grid is enough; a
    divisor of P keeps every q' - q on Lambda_P. Without a usable divisor the
    reference grid itself is used.
    """
    cap = settings.response_inner_grid if cap is None else cap
    K = max(d for d in range(1, min(P, cap) + 1) if P % d == 0)
    if K < min(P, cap) // 2:
        K = P
    return kpoint_grid(geometry, K)


def riemann_defect_sum(
    bands: BandStructure,
    nu: SourceDensity,
    grid: KGrid,
    response_cutoff: float = None,
    inner_grid: Optional[KGrid] = None,
    symmetry: Optional[List[np.ndarray]] = None,
) -> Tuple[float, Dict[Tuple[int, int, int], float]]:
    """L^{-3} sum over grid \\ {0} of F(Q), with L_Q averaged over ``inner_grid`` (default: grid).

    F(-Q) = F(Q) for a real potential and a real defect, and F(S Q) = F(Q) for every
    operation in ``symmetry`` (default: defect_symmetry), so each orbit is built once.
    """
    inner_grid = grid if inner_grid is None else inner_grid
    ops = defect_symmetry(bands, nu) if symmetry is None else list(symmetry)
    ops = [np.eye(3, dtype=int)] + ops
    ops = ops + [-S for S in ops]
    values: Dict[Tuple[int, int, int], float] = {}
    evaluated = 0
    for Q, idx in zip(grid.fractional, grid.indices):
        if not np.any(idx):
            continue
        key = _grid_key(Q, grid.L)
        if key in values:
            continue
        value = quadratic_defect_value(bands, nu, Q, inner_grid, response_cutoff).value
        evaluated += 1
        for S in ops:
            values[_grid_key(S @ Q, grid.L)] = value
    total = float(sum(values[_grid_key(Q, grid.L)] for Q, idx in zip(grid.fractional, grid.indices) if np.any(idx)))
    logger.debug(f"Riemann defect sum L={grid.L}: {evaluated} of {len(grid) - 1} points built (inner L={inner_grid.L})")
    return total / len(grid), values


def continuum_average(
    bands: BandStructure,
    nu: SourceDensity,
    bz_grid: Optional[KGrid] = None,
    dielectric: Optional[np.ndarray] = None,
    response_cutoff: float = None,
    inner_grid: Optional[KGrid] = None,
) -> float:
    """avg F over the Brillouin zone.

    The outer quadrature runs over ``bz_grid`` with the leading singularity
    F_sing(q) = (4 pi charge^2 / |Gamma|) psi(|q|) / (q^T M q) subtracted on the grid
    and added back analytically; L_q is averaged over ``inner_grid``.
    """
    bz_grid = default_bz_grid(bands, bz_grid)
    geometry = bands.geometry
    inner_grid = reference_inner_grid(geometry, bz_grid.L) if inner_grid is None else inner_grid
    reference_sum, _ = riemann_defect_sum(bands, nu, bz_grid, response_cutoff, inner_grid)

    strength = 4.0 * np.pi * nu.charge**2 / geometry.cell_volume
    correction = 0.0
    if strength > 0.0:
        if dielectric is None:
            dielectric = dielectric_matrix(bands, bz_grid, response_cutoff).M_zero
        M = np.real(np.asarray(dielectric))
        cutoff = RadialCutoff.for_geometry(geometry)
        q = bz_grid.cartesian[np.any(bz_grid.indices != 0, axis=1)]
        singular = strength * cutoff(np.linalg.norm(q, axis=1)) / np.einsum("ij,jk,ik->i", q, M, q)
        exact = strength / geometry.bz_volume * cutoff.radial_moment(0.0) * angular_inverse_form(M)
        correction = exact - float(np.sum(singular)) / len(bz_grid)
    logger.info(f"Continuum average of F on Lambda_{bz_grid.L} (inner Lambda_{inner_grid.L}): {reference_sum + correction:.10e}")
    return reference_sum + correction


def quadratic_energy_difference(
    bands: BandStructure,
    nu: SourceDensity,
    L: int,
    bz_grid: Optional[KGrid] = None,
    dielectric: Optional[np.ndarray] = None,
    response_cutoff: float = None,
    average: Optional[float] = None,
) -> float:
    """1/2 (L^{-3} sum_{Lambda_L \\ 0} F^L - avg F); pass ``average`` to reuse continuum_average"""
    if L < 2:
        raise InvalidSizeError("supercell multiplier must be at least 2", L=L)
    bz_grid = default_bz_grid(bands, bz_grid)
    if bz_grid.L <= L:
        raise InvalidSizeError("reference grid must be finer than Lambda_L", L=L, reference=bz_grid.L)

    supercell_sum, _ = riemann_defect_sum(bands, nu, kpoint_grid(bands.geometry, L), response_cutoff)
    if average is None:
        average = continuum_average(bands, nu, bz_grid, dielectric, response_cutoff)
    value = 0.5 * (supercell_sum - average)
    logger.info(f"Quadratic energy difference L={L}: {value:.10e}")
    return value


def finite_field_column(
    bands: BandStructure,
    q_frac: np.ndarray,
    mode: np.ndarray,
    L: int,
    t: float = 1e-4,
    response_cutoff: float = None,
) -> np.ndarray:
    """Column k of L_q from two-sided density differences of the perturbed supercell.

    The supercell Hamiltonian is assembled in the Bloch basis of Lambda_L from the
    unit-cell fibers; the perturbation is t sqrt(4 pi)/|k+q| (e_{k+q} + c.c.).
    Entries follow the mode ordering of build_response_matrix on Lambda_L.
    """
    geometry = bands.geometry
    q_frac = np.asarray(q_frac, dtype=float)
    if not np.allclose(q_frac * L, np.rint(q_frac * L), atol=1e-9):
        raise DomainError("q must lie on Lambda_L", q_frac=tuple(q_frac), L=L)
    if np.allclose(2.0 * q_frac, np.rint(2.0 * q_frac), atol=1e-9):
        raise DomainError("finite-field column needs 2q outside the reciprocal lattice", q_frac=tuple(q_frac))

    grid = kpoint_grid(geometry, L)
    fibers = [bands.fiber_at(Q)[0] for Q in grid.fractional]
    offsets = np.concatenate([[0], np.cumsum([f.num_bands for f in fibers])])
    H0 = scipy.linalg.block_diag(*[f.matrix for f in fibers])

    def shift_operator(k_miller: np.ndarray) -> np.ndarray:
        """P[(Q1, G1), (Q2, G2)] = 1 when G1 + Q1 = G2 + Q2 + k + q"""
        P = np.zeros(H0.shape)
        for j2, fiber in enumerate(fibers):
            folded, s = fold_fractional(grid.fractional[j2] + q_frac)
            j1 = grid.index_of(folded)
            pos = fibers[j1].basis.lookup(fiber.basis.miller + k_miller + s)
            ok = pos >= 0
            P[offsets[j1] + pos[ok], offsets[j2] + np.flatnonzero(ok)] = 1.0
        return P

    response = response_basis(bands, response_cutoff)
    k_miller = np.asarray(mode, dtype=int)
    if response.lookup(k_miller[None, :])[0] < 0:
        raise DomainError("perturbing mode is not in the response basis", mode=tuple(k_miller))
    weight = SQRT_FOUR_PI / np.linalg.norm(geometry.to_cartesian(k_miller + q_frac))
    vol = geometry.cell_volume
    P_source = shift_operator(k_miller)
    perturbation = weight / np.sqrt(vol) * (P_source + P_source.T)
    readouts = [shift_operator(m) for m in response.miller]
    target = L**3 * bands.num_occupied

    def density_values(strength: float) -> np.ndarray:
        vals, vecs = scipy.linalg.eigh(H0 + strength * perturbation)
        occ = vals < bands.fermi.fermi_level
        if int(occ.sum()) != target:
            raise DomainError("perturbation closes the gap", occupied=int(occ.sum()), expected=target)
        C = vecs[:, occ]
        D = C @ C.conj().T
        return np.array([np.sum(P * D) for P in readouts]) / np.sqrt(vol)

    diff = (density_values(t) - density_values(-t)) / (2.0 * t)
    mode_weights = SQRT_FOUR_PI / np.linalg.norm(geometry.to_cartesian(response.miller + q_frac), axis=1)
    return -mode_weights * diff / L**3
