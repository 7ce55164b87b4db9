"""Bloch fibers of the periodic mean-field Hamiltonian, their spectra and the Fermi level.

Each fiber H_q = 1/2 |-i grad + q|^2 + V0 is written in its own unit-cell basis
{G : 1/2 |G + q|^2 <= cutoff}, so a supercell basis decomposes exactly into the
fibers of Lambda_L and fibers at q and q + m are relabelings of each other.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from app.core.config import settings
from app.core.exceptions import CutoffTooSmallError, DomainError, EigensolverError, MetallicSystemError
from app.services.fields import PeriodicField, PlaneWaveBasis
from app.services.geometry import KGrid, LatticeGeometry, fold_fractional

logger = logging.getLogger(__name__)

_RESIDUAL_TOL = 1e-10


@dataclass
class BlochFiber:
    q_frac: np.ndarray
    basis: PlaneWaveBasis
    matrix: np.ndarray
    eigenvalues: Optional[np.ndarray] = None
    eigenvectors: Optional[np.ndarray] = None

    @property
    def q(self) -> np.ndarray:
        return self.basis.geometry.to_cartesian(self.q_frac)

    @property
    def num_bands(self) -> int:
        return self.basis.size

    def kinetic_vectors(self) -> np.ndarray:
        """Cartesian G + q for every basis mode"""
        return self.basis.wavevectors


@dataclass(frozen=True)
class FermiData:
    fermi_level: float
    num_occupied: int
    gap: float
    grid: KGrid


def potential_lookup(V0: PeriodicField, miller_diff: np.ndarray, tol: float = None) -> np.ndarray:
    """|Gamma|^{-1/2} c_{G-G'}(V0) for an array of index differences"""
    tol = settings.coefficient_tol if tol is None else tol
    pos = V0.basis.lookup(miller_diff)
    missing = pos < 0
    if np.any(missing):
        norms = V0.basis.norms
        outer = norms >= 0.9 * norms.max() if norms.size else np.zeros(0, dtype=bool)
        edge = float(np.max(np.abs(V0.coeffs[outer]), initial=0.0))
        scale = max(float(np.max(np.abs(V0.coeffs), initial=0.0)), 1e-300)
        if edge > tol * scale:
            raise CutoffTooSmallError(
                "potential coefficients needed beyond the stored range",
                edge_coefficient=edge,
                potential_cutoff=V0.basis.cutoff,
            )
    vals = np.where(missing, 0.0, V0.coeffs[np.maximum(pos, 0)])
    return vals / np.sqrt(V0.basis.geometry.cell_volume * V0.basis.L**3)


def assemble_fiber(V0: PeriodicField, q_frac: np.ndarray, cutoff: float) -> BlochFiber:
    """Matrix of H_q in the fiber basis: 1/2 |G+q|^2 delta + |Gamma|^{-1/2} c_{G-G'}(V0)"""
    if V0.basis.L != 1 or V0.basis.is_shifted:
        raise DomainError("fiber potential must be a unit-cell field")
    if not V0.real:
        raise DomainError("fiber potential must be real-valued")
    q_frac = np.asarray(q_frac, dtype=float)
    basis = PlaneWaveBasis.for_fiber(V0.basis.geometry, cutoff, q_frac)
    diff = basis.miller[:, None, :] - basis.miller[None, :, :]
    matrix = potential_lookup(V0, diff).astype(complex)
    matrix[np.diag_indices(basis.size)] += 0.5 * basis.norms**2
    return BlochFiber(q_frac=q_frac, basis=basis, matrix=matrix)


def diagonalize(fiber: BlochFiber) -> BlochFiber:
    """Dense Hermitian diagonalization; all bands within the cutoff are kept"""
    try:
        vals, vecs = scipy.linalg.eigh(fiber.matrix)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigensolverError(f"eigensolver failed: {e}", q_frac=tuple(fiber.q_frac))
    residual = np.linalg.norm(fiber.matrix @ vecs - vecs * vals, axis=0)
    scale = max(1.0, float(np.max(np.abs(vals), initial=0.0)))
    if residual.size and residual.max() > _RESIDUAL_TOL * scale:
        raise EigensolverError("eigen-residual above tolerance", q_frac=tuple(fiber.q_frac), residual=float(residual.max()))
    fiber.eigenvalues = vals
    fiber.eigenvectors = vecs
    return fiber


def _key(q_frac: np.ndarray) -> Tuple[int, int, int]:
    return tuple(int(v) for v in np.rint(np.asarray(q_frac) * 1e9))


class FiberCache:
    """Diagonalized fibers keyed by folded q; safe for concurrent get-or-build"""

    def __init__(self, V0: PeriodicField, cutoff: float):
        self.V0 = V0
        self.cutoff = float(cutoff)
        self._fibers: Dict[Tuple[int, int, int], BlochFiber] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._fibers)

    def put(self, fiber: BlochFiber):
        with self._lock:
            self._fibers.setdefault(_key(fiber.q_frac), fiber)

    def get(self, q_frac: np.ndarray) -> Tuple[BlochFiber, np.ndarray]:
        """Fiber at the folded point and the integer shift m with q = fold(q) + m"""
        folded, shift = fold_fractional(q_frac)
        key = _key(folded)
        with self._lock:
            fiber = self._fibers.get(key)
        if fiber is None:
            fiber = diagonalize(assemble_fiber(self.V0, folded, self.cutoff))
            with self._lock:
                fiber = self._fibers.setdefault(key, fiber)
        return fiber, shift


@dataclass
class BandStructure:
    grid: KGrid
    fibers: List[BlochFiber]
    V0: PeriodicField
    cutoff: float
    fermi: Optional[FermiData] = None
    cache: FiberCache = field(default=None, repr=False)

    def __post_init__(self):
        if self.cache is None:
            self.cache = FiberCache(self.V0, self.cutoff)
            for fiber in self.fibers:
                self.cache.put(fiber)

    @property
    def geometry(self) -> LatticeGeometry:
        return self.V0.basis.geometry

    @property
    def num_occupied(self) -> int:
        if self.fermi is None:
            raise DomainError("Fermi level not located yet")
        return self.fermi.num_occupied

    def fiber_at(self, q_frac: np.ndarray) -> Tuple[BlochFiber, np.ndarray]:
        return self.cache.get(q_frac)

    def band_energy(self) -> float:
        """Occupied band energy per unit cell"""
        N = self.num_occupied
        return float(sum(np.sum(f.eigenvalues[:N]) for f in self.fibers) / len(self.fibers))

    def check_gap(self, fiber: BlochFiber):
        """The fiber must respect the gap of the located Fermi level"""
        N, fermi = self.num_occupied, self.fermi
        lo = fiber.eigenvalues[N - 1] if N > 0 else -np.inf
        hi = fiber.eigenvalues[N] if fiber.num_bands > N else np.inf
        if not (lo < fermi.fermi_level < hi):
            raise MetallicSystemError(
                "shifted fiber violates the gap",
                q_frac=tuple(fiber.q_frac),
                top_occupied=float(lo),
                bottom_unoccupied=float(hi),
            )


def diagonalize_grid(V0: PeriodicField, grid: KGrid, cutoff: float = None) -> BandStructure:
    cutoff = settings.default_cutoff if cutoff is None else cutoff
    fibers = [diagonalize(assemble_fiber(V0, q, cutoff)) for q in grid.fractional]
    logger.info(f"Diagonalized {len(fibers)} fibers (L={grid.L}, cutoff={cutoff})")
    return BandStructure(grid=grid, fibers=fibers, V0=V0, cutoff=cutoff)


def find_fermi(bands: BandStructure, electrons_per_cell: float, gap_tol: float = None) -> FermiData:
    """Midgap Fermi level for N = electrons_per_cell occupied bands"""
    gap_tol = settings.gap_tol if gap_tol is None else gap_tol
    N = int(round(electrons_per_cell))
    if abs(N - electrons_per_cell) > 1e-9 or N < 0:
        raise DomainError("electron count per cell must be a non-negative integer", electrons=electrons_per_cell)
    if any(f.num_bands <= N for f in bands.fibers):
        raise CutoffTooSmallError("basis too small for the requested band count", N=N)

    bottoms = np.array([f.eigenvalues[N] for f in bands.fibers])
    if N == 0:
        # empty system: any level below the lowest band
        fermi = FermiData(float(bottoms.min() - 1.0), 0, float("inf"), bands.grid)
        bands.fermi = fermi
        return fermi

    tops = np.array([f.eigenvalues[N - 1] for f in bands.fibers])
    top, bottom = float(tops.max()), float(bottoms.min())
    gap = bottom - top
    if gap <= gap_tol:
        raise MetallicSystemError(
            "no gap between occupied and unoccupied bands",
            gap=gap,
            q_top=tuple(bands.grid.fractional[int(tops.argmax())]),
            q_bottom=tuple(bands.grid.fractional[int(bottoms.argmin())]),
        )
    fermi = FermiData(fermi_level=0.5 * (top + bottom), num_occupied=N, gap=gap, grid=bands.grid)
    if gap < 10 * gap_tol:
        logger.warning(f"Gap {gap:.3e} is close to the tolerance {gap_tol:.1e}")
    bands.fermi = fermi
    return fermi


def band_rows(bands: BandStructure) -> List[Tuple[float, float, float, int, float]]:
    """Rows (q_frac1, q_frac2, q_frac3, n, energy) for the band dump"""
    rows = []
    for fiber in bands.fibers:
        for n, e in enumerate(fiber.eigenvalues, start=1):
            rows.append((*(float(x) for x in fiber.q_frac), n, float(e)))
    return rows
