"""Bravais lattices, reciprocal lattices, Brillouin zones and supercell k-grids.

Point sets are held in fractional coordinates; Cartesian arrays are produced at
the boundary. The unit cell and the Brillouin zone are the half-open cells
``[-1/2, 1/2)^3`` in fractional coordinates of their respective bases.
"""

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Sequence, Tuple

import numpy as np

from app.core.exceptions import DegenerateLatticeError, InvalidSizeError

logger = logging.getLogger(__name__)

# Ties at +1/2 fold to -1/2; points within this distance of the tie count as ties.
_FOLD_EPS = 1e-12

S1 = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=int)
S2 = np.diag([-1, 1, 1]).astype(int)


def reciprocal(direct: np.ndarray) -> np.ndarray:
    """Reciprocal basis (columns) with a_k . b_l = 2 pi delta_kl"""
    direct = np.asarray(direct, dtype=float)
    if direct.shape != (3, 3):
        raise DegenerateLatticeError("basis must be 3x3", shape=direct.shape)
    det = np.linalg.det(direct)
    scale = np.prod(np.linalg.norm(direct, axis=0))
    if scale == 0.0 or abs(det) <= 1e-12 * scale:
        raise DegenerateLatticeError("basis vectors are linearly dependent", det=det)
    return 2.0 * np.pi * np.linalg.inv(direct).T


@dataclass(frozen=True)
class LatticeGeometry:
    """Direct lattice (columns a1, a2, a3) with its dual"""

    direct: np.ndarray
    reciprocal: np.ndarray = field(init=False)
    cell_volume: float = field(init=False)
    bz_volume: float = field(init=False)

    def __post_init__(self):
        direct = np.array(self.direct, dtype=float)
        rec = reciprocal(direct)
        direct.setflags(write=False)
        rec.setflags(write=False)
        object.__setattr__(self, "direct", direct)
        object.__setattr__(self, "reciprocal", rec)
        object.__setattr__(self, "cell_volume", float(abs(np.linalg.det(direct))))
        object.__setattr__(self, "bz_volume", float(abs(np.linalg.det(rec))))

    @classmethod
    def from_rows(cls, values: Sequence[float]) -> "LatticeGeometry":
        """Build from nine numbers, row-major: a1, then a2, then a3"""
        arr = np.asarray(values, dtype=float)
        if arr.size != 9:
            raise DegenerateLatticeError("lattice needs nine numbers", size=arr.size)
        return cls(arr.reshape(3, 3).T)

    @classmethod
    def cubic(cls, a: float = 1.0) -> "LatticeGeometry":
        return cls(a * np.eye(3))

    def rows(self) -> list:
        return [float(x) for x in self.direct.T.reshape(-1)]

    @cached_property
    def reciprocal_inverse(self) -> np.ndarray:
        return np.linalg.inv(self.reciprocal)

    def to_cartesian(self, frac: np.ndarray) -> np.ndarray:
        """Fractional reciprocal coordinates to Cartesian wavevectors"""
        return np.asarray(frac, dtype=float) @ self.reciprocal.T

    def to_fractional(self, k: np.ndarray) -> np.ndarray:
        return np.asarray(k, dtype=float) @ self.reciprocal_inverse.T

    def direct_to_cartesian(self, frac: np.ndarray) -> np.ndarray:
        return np.asarray(frac, dtype=float) @ self.direct.T

    @cached_property
    def is_cubic(self) -> bool:
        gram = self.direct.T @ self.direct
        return bool(np.allclose(gram, gram[0, 0] * np.eye(3), rtol=1e-12, atol=0.0))

    @cached_property
    def bz_inradius(self) -> float:
        """Distance from the origin to the nearest face of the Brillouin zone cell"""
        b = self.reciprocal
        dists = []
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            normal = np.cross(b[:, j], b[:, k])
            dists.append(0.5 * self.bz_volume / np.linalg.norm(normal))
        return float(min(dists))

    @cached_property
    def cell_second_moment(self) -> float:
        """Integral of |x|^2 over the unit cell"""
        return self.cell_volume * float(np.trace(self.direct.T @ self.direct)) / 12.0


@dataclass(frozen=True)
class KGrid:
    """The L^3 points of Lambda_L in the half-open Brillouin zone"""

    L: int
    indices: np.ndarray
    geometry: LatticeGeometry

    @property
    def fractional(self) -> np.ndarray:
        return self.indices / self.L

    @property
    def cartesian(self) -> np.ndarray:
        return self.geometry.to_cartesian(self.fractional)

    def __len__(self) -> int:
        return len(self.indices)

    def index_of(self, frac: np.ndarray) -> int:
        """Position of a (folded) fractional point in the grid"""
        scaled = np.asarray(frac, dtype=float) * self.L
        idx = np.rint(scaled).astype(int)
        if np.max(np.abs(scaled - idx)) > 1e-9:
            raise InvalidSizeError("point is off the grid", frac=tuple(frac), L=self.L)
        hits = np.flatnonzero(np.all(self.indices == idx, axis=1))
        if hits.size == 0:
            raise InvalidSizeError("point is not on the grid", frac=tuple(frac))
        return int(hits[0])


def kpoint_grid(geometry: LatticeGeometry, L: int) -> KGrid:
    """Lambda_L: index triples in {(-L+eta)/2, ..., (L+eta)/2 - 1}, eta = L mod 2"""
    if not isinstance(L, (int, np.integer)) or L <= 0:
        raise InvalidSizeError("L must be a positive integer", L=L)
    eta = L % 2
    lo = (-L + eta) // 2
    axis = np.arange(lo, lo + L)
    mesh = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    indices = mesh.reshape(-1, 3)
    logger.debug(f"k-grid L={L}: {len(indices)} points")
    return KGrid(L=int(L), indices=indices, geometry=geometry)


def fold_fractional(frac: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split fractional points into (cell part in [-1/2,1/2), integer shift)"""
    frac = np.asarray(frac, dtype=float)
    shift = np.floor(frac + 0.5 + _FOLD_EPS)
    return frac - shift, shift.astype(int)


def fold_to_bz(geometry: LatticeGeometry, k: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """k = q + m with q in the half-open Brillouin zone and m a reciprocal lattice vector"""
    q_frac, m_int = fold_fractional(geometry.to_fractional(k))
    return geometry.to_cartesian(q_frac), geometry.to_cartesian(m_int)


@dataclass(frozen=True)
class CubicSymmetryFlag:
    is_isotropic_cubic: bool
    generators: Tuple[np.ndarray, np.ndarray] = (S1, S2)
    max_deviation: float = 0.0


def is_isotropic_cubic(geometry: LatticeGeometry, field, tol: float = 1e-10) -> CubicSymmetryFlag:
    """Check invariance of a periodic field under the generators S1 and S2.

    The field's Fourier coefficients are compared at k and S k; S acts on
    Miller indices, which coincides with the Cartesian action on a cubic lattice.
    """
    if not geometry.is_cubic:
        return CubicSymmetryFlag(is_isotropic_cubic=False, max_deviation=float("inf"))
    basis = field.basis
    worst = 0.0
    for gen in (S1, S2):
        mapped = basis.miller @ gen.T
        pos = basis.lookup(mapped)
        if np.any(pos < 0):
            return CubicSymmetryFlag(is_isotropic_cubic=False, max_deviation=float("inf"))
        worst = max(worst, float(np.max(np.abs(field.coeffs[pos] - field.coeffs), initial=0.0)))
    scale = max(float(np.max(np.abs(field.coeffs), initial=0.0)), 1.0)
    return CubicSymmetryFlag(is_isotropic_cubic=worst <= tol * scale, max_deviation=worst)


def cubic_point_group() -> List[np.ndarray]:
    """The 48 signed permutations, acting on Miller indices and fractional coordinates"""
    ops = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            S = np.zeros((3, 3), dtype=int)
            S[np.arange(3), perm] = signs
            ops.append(S)
    return ops


def field_stabilizer(geometry: LatticeGeometry, field, tol: float = 1e-10) -> List[np.ndarray]:
    """Cubic operations leaving a periodic field invariant; empty off the simple cubic lattice"""
    if not geometry.is_cubic:
        return []
    basis = field.basis
    scale = max(float(np.max(np.abs(field.coeffs), initial=0.0)), 1.0)
    kept = []
    for S in cubic_point_group():
        pos = basis.lookup(basis.miller @ S.T)
        if np.any(pos < 0):
            continue
        if np.max(np.abs(field.coeffs[pos] - field.coeffs), initial=0.0) <= tol * scale:
            kept.append(S)
    return kept
