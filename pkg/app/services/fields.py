"""Periodic fields in plane-wave representation and the periodic Coulomb operators.

Coefficients are the normalized Fourier coefficients
``c_k = |Gamma_L|^{-1/2} int_{Gamma_L} f(x) exp(-i k.x) dx`` so that
``f(x) = |Gamma_L|^{-1/2} sum_k c_k exp(i k.x)`` and Parseval holds without weights.
The constant of the periodic Green kernel is fixed to zero, so every Coulomb
operator drops the k = 0 mode.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erfc

from app.core.config import settings
from app.core.exceptions import BasisMismatchError, DomainError
from app.services.geometry import LatticeGeometry

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi
SQRT_FOUR_PI = np.sqrt(FOUR_PI)
_ZERO_K = 1e-12


class PlaneWaveBasis:
    """Wavevectors k = (n / L + shift) in reciprocal fractional coordinates with 1/2 |k|^2 <= cutoff.

    ``L`` is the supercell multiplier; ``shift`` is a Bloch offset in unit-cell
    fractional coordinates (zero except for Bloch fibers).
    """

    def __init__(
        self,
        geometry: LatticeGeometry,
        cutoff: float,
        L: int = 1,
        shift: Optional[Sequence[float]] = None,
    ):
        if cutoff <= 0:
            raise DomainError("cutoff must be positive", cutoff=cutoff)
        self.geometry = geometry
        self.cutoff = float(cutoff)
        self.L = int(L)
        self.shift = np.zeros(3) if shift is None else np.asarray(shift, dtype=float)

        kmax = np.sqrt(2.0 * self.cutoff)
        lengths = np.linalg.norm(geometry.direct, axis=0)
        bound = np.ceil(self.L * (kmax * lengths / (2.0 * np.pi) + np.abs(self.shift))).astype(int) + 1
        axes = [np.arange(-b, b + 1) for b in bound]
        cand = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        kvec = geometry.to_cartesian(cand / self.L + self.shift)
        k2 = np.einsum("ij,ij->i", kvec, kvec)
        keep = 0.5 * k2 <= self.cutoff * (1.0 + 1e-12)
        cand, k2 = cand[keep], k2[keep]
        order = np.lexsort((cand[:, 2], cand[:, 1], cand[:, 0], np.round(k2, 10)))
        self.miller = cand[order]
        self.wavevectors = geometry.to_cartesian(self.miller / self.L + self.shift)
        self.norms = np.linalg.norm(self.wavevectors, axis=1)

        self._offset = int(np.max(np.abs(self.miller), initial=0)) + 1
        side = 2 * self._offset + 1
        self._table = -np.ones((side, side, side), dtype=int)
        o = self._offset
        self._table[self.miller[:, 0] + o, self.miller[:, 1] + o, self.miller[:, 2] + o] = np.arange(self.size)

    @classmethod
    def for_fiber(cls, geometry: LatticeGeometry, cutoff: float, q_frac: Sequence[float]) -> "PlaneWaveBasis":
        """Unit-cell basis of the fiber at q: modes G with 1/2 |G + q|^2 <= cutoff"""
        return cls(geometry, cutoff, L=1, shift=q_frac)

    @property
    def size(self) -> int:
        return len(self.miller)

    @property
    def volume(self) -> float:
        return self.geometry.cell_volume * self.L**3

    @property
    def is_shifted(self) -> bool:
        return bool(np.any(self.shift != 0.0))

    @cached_property
    def index_zero(self) -> int:
        return int(self.lookup(np.zeros((1, 3), dtype=int))[0])

    def lookup(self, miller: np.ndarray) -> np.ndarray:
        """Positions of integer triples in this basis, -1 when absent"""
        miller = np.asarray(miller, dtype=int)
        flat = miller.reshape(-1, 3)
        o = self._offset
        inside = np.all(np.abs(flat) <= o, axis=1)
        out = -np.ones(len(flat), dtype=int)
        sel = flat[inside] + o
        out[inside] = self._table[sel[:, 0], sel[:, 1], sel[:, 2]]
        return out.reshape(miller.shape[:-1])

    def same_as(self, other: "PlaneWaveBasis") -> bool:
        return (
            self is other
            or (
                self.L == other.L
                and self.cutoff == other.cutoff
                and np.array_equal(self.shift, other.shift)
                and np.array_equal(self.geometry.direct, other.geometry.direct)
            )
        )

    def describe(self) -> dict:
        return {
            "lattice": self.geometry.rows(),
            "L": self.L,
            "cutoff": self.cutoff,
            "shift": [float(s) for s in self.shift],
        }

    def __repr__(self) -> str:
        return f"PlaneWaveBasis(L={self.L}, cutoff={self.cutoff}, size={self.size})"


@dataclass
class PeriodicField:
    basis: PlaneWaveBasis
    coeffs: np.ndarray
    real: bool = False

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.basis.size,):
            raise BasisMismatchError(
                "coefficient count does not match basis",
                expected=self.basis.size,
                got=self.coeffs.shape,
            )
        if self.real and not self.basis.is_shifted:
            mirror = self.basis.lookup(-self.basis.miller)
            dev = np.max(np.abs(self.coeffs[mirror] - np.conj(self.coeffs)), initial=0.0)
            scale = max(np.max(np.abs(self.coeffs), initial=0.0), 1.0)
            if dev > 1e-10 * scale:
                raise DomainError("real field violates c_{-k} = conj(c_k)", deviation=float(dev))

    @classmethod
    def zeros(cls, basis: PlaneWaveBasis, real: bool = True) -> "PeriodicField":
        return cls(basis, np.zeros(basis.size, dtype=complex), real=real)

    @classmethod
    def mode(cls, basis: PlaneWaveBasis, miller: Sequence[int]) -> "PeriodicField":
        """The normalized plane wave e_k"""
        pos = int(basis.lookup(np.asarray([miller]))[0])
        if pos < 0:
            raise BasisMismatchError("mode not in basis", miller=tuple(miller))
        coeffs = np.zeros(basis.size, dtype=complex)
        coeffs[pos] = 1.0
        return cls(basis, coeffs)

    @property
    def mean_coefficient(self) -> complex:
        pos = self.basis.index_zero
        return complex(self.coeffs[pos]) if pos >= 0 else 0j

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def inner(self, other: "PeriodicField") -> complex:
        """L2 inner product, antilinear in self"""
        _check_same(self, other)
        return complex(np.vdot(self.coeffs, other.coeffs))

    def integral(self) -> complex:
        return np.sqrt(self.basis.volume) * self.mean_coefficient

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Values at Cartesian points"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        phase = np.exp(1j * points @ self.basis.wavevectors.T)
        values = phase @ self.coeffs / np.sqrt(self.basis.volume)
        return values.real if self.real else values

    def with_coeffs(self, coeffs: np.ndarray, real: Optional[bool] = None) -> "PeriodicField":
        return PeriodicField(self.basis, coeffs, real=self.real if real is None else real)

    def transfer(self, basis: PlaneWaveBasis) -> "PeriodicField":
        """Same function on another basis of the same cell; modes absent from self are zero"""
        if basis.L != self.basis.L or not np.array_equal(basis.shift, self.basis.shift):
            raise BasisMismatchError("transfer needs the same cell and shift")
        pos = self.basis.lookup(basis.miller)
        coeffs = np.where(pos >= 0, self.coeffs[np.maximum(pos, 0)], 0.0)
        return PeriodicField(basis, coeffs, real=self.real)

    def __add__(self, other: "PeriodicField") -> "PeriodicField":
        _check_same(self, other)
        return PeriodicField(self.basis, self.coeffs + other.coeffs, real=self.real and other.real)

    def __sub__(self, other: "PeriodicField") -> "PeriodicField":
        _check_same(self, other)
        return PeriodicField(self.basis, self.coeffs - other.coeffs, real=self.real and other.real)

    def __mul__(self, scalar: float) -> "PeriodicField":
        real = self.real and np.isrealobj(scalar)
        return PeriodicField(self.basis, self.coeffs * scalar, real=real)

    __rmul__ = __mul__

    def __neg__(self) -> "PeriodicField":
        return self * -1.0


def _check_same(f: PeriodicField, g: PeriodicField):
    if not f.basis.same_as(g.basis):
        raise BasisMismatchError("fields live on different bases", left=repr(f.basis), right=repr(g.basis))


def _nonzero_modes(basis: PlaneWaveBasis) -> np.ndarray:
    return basis.norms > _ZERO_K


def coulomb_form(f: PeriodicField, g: PeriodicField, basis: Optional[PlaneWaveBasis] = None):
    """D_L(f, g) = 4 pi sum_{k != 0} conj(c_k f) c_k g / |k|^2"""
    _check_same(f, g)
    if basis is not None and not basis.same_as(f.basis):
        raise BasisMismatchError("fields are not on the requested basis")
    mask = _nonzero_modes(f.basis)
    value = FOUR_PI * np.sum(np.conj(f.coeffs[mask]) * g.coeffs[mask] / f.basis.norms[mask] ** 2)
    if f.real and g.real:
        return float(value.real)
    return complex(value)


def green_convolve(f: PeriodicField, basis: Optional[PlaneWaveBasis] = None) -> PeriodicField:
    """f * G_L: multiply k != 0 coefficients by 4 pi / |k|^2, drop k = 0"""
    if basis is not None and not basis.same_as(f.basis):
        raise BasisMismatchError("field is not on the requested basis")
    mask = _nonzero_modes(f.basis)
    out = np.zeros_like(f.coeffs)
    out[mask] = FOUR_PI * f.coeffs[mask] / f.basis.norms[mask] ** 2
    return f.with_coeffs(out)


def sqrt_vc_apply(f: PeriodicField, basis: Optional[PlaneWaveBasis] = None) -> PeriodicField:
    """Square root of the periodic Coulomb operator: sqrt(4 pi) / |k| on k != 0"""
    if basis is not None and not basis.same_as(f.basis):
        raise BasisMismatchError("field is not on the requested basis")
    mask = _nonzero_modes(f.basis)
    out = np.zeros_like(f.coeffs)
    out[mask] = SQRT_FOUR_PI * f.coeffs[mask] / f.basis.norms[mask]
    return f.with_coeffs(out)


def coulomb_norms(f: PeriodicField, mean_tol: float = 1e-12) -> Tuple[float, float]:
    """(Coulomb norm, dual Beppo-Levi norm); the second needs a zero-mean field"""
    mask = _nonzero_modes(f.basis)
    c = np.abs(f.coeffs[mask]) ** 2
    k2 = f.basis.norms[mask] ** 2
    if abs(f.mean_coefficient) > mean_tol * max(1.0, f.l2_norm()):
        raise DomainError("dual Coulomb norm needs a zero-mean field", mean=abs(f.mean_coefficient))
    return float(np.sqrt(FOUR_PI * np.sum(c / k2))), float(np.sqrt(np.sum(c * k2) / FOUR_PI))


@dataclass(frozen=True)
class Gaussian:
    center_frac: Tuple[float, float, float]
    sigma: float
    weight: float


@dataclass(frozen=True)
class Bump:
    """Radial bump exp(1 - 1 / (1 - r^2 / R^2)) scaled to total weight"""

    center_frac: Tuple[float, float, float]
    radius: float
    weight: float


def _bump_profile(r: np.ndarray, radius: float) -> np.ndarray:
    t2 = np.clip((r / radius) ** 2, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        vals = np.exp(1.0 - 1.0 / (1.0 - t2))
    return np.where(t2 < 1.0, vals, 0.0)


def _bump_radial_transform(kn: np.ndarray, radius: float, order: int = 96) -> np.ndarray:
    """4 pi int_0^R b(r) r^2 sinc(k r) dr by Gauss-Legendre, normalized to 1 at k = 0"""
    x, w = np.polynomial.legendre.leggauss(order)
    r = 0.5 * radius * (x + 1.0)
    w = 0.5 * radius * w
    prof = _bump_profile(r, radius) * r**2 * w
    total = np.sum(prof)
    kr = np.outer(kn, r)
    return (np.sinc(kr / np.pi) @ prof) / total


@dataclass(frozen=True)
class SourceDensity:
    """Nuclear density mu_per (Gamma-periodic) or defect density nu (compact support)"""

    kind: Literal["periodic_nuclear", "defect"]
    geometry: LatticeGeometry
    gaussians: Tuple[Gaussian, ...] = ()
    bumps: Tuple[Bump, ...] = ()
    support_L: int = 1

    @property
    def charge(self) -> float:
        """Total charge per cell for mu_per, total charge of nu"""
        return float(sum(g.weight for g in self.gaussians) + sum(b.weight for b in self.bumps))

    def scaled(self, t: float) -> "SourceDensity":
        return SourceDensity(
            kind=self.kind,
            geometry=self.geometry,
            gaussians=tuple(Gaussian(g.center_frac, g.sigma, t * g.weight) for g in self.gaussians),
            bumps=tuple(Bump(b.center_frac, b.radius, t * b.weight) for b in self.bumps),
            support_L=self.support_L,
        )

    def transform(self, k: np.ndarray) -> np.ndarray:
        """Whole-space transform int f(x) exp(-i k.x) dx of one cell's worth of density"""
        k = np.atleast_2d(np.asarray(k, dtype=float))
        k2 = np.einsum("ij,ij->i", k, k)
        out = np.zeros(len(k), dtype=complex)
        for g in self.gaussians:
            c = self.geometry.direct_to_cartesian(g.center_frac)
            out += g.weight * np.exp(-1j * k @ c - 0.5 * g.sigma**2 * k2)
        for b in self.bumps:
            c = self.geometry.direct_to_cartesian(b.center_frac)
            out += b.weight * np.exp(-1j * k @ c) * _bump_radial_transform(np.sqrt(k2), b.radius)
        return out

    def check_support(self, tol: float = None):
        """nu must vanish (to tol for Gaussians) outside support_L * Gamma"""
        if self.kind != "defect":
            return
        tol = settings.coefficient_tol if tol is None else tol
        A = self.geometry.direct
        for center, extent, exact in [(g.center_frac, g.sigma, False) for g in self.gaussians] + [
            (b.center_frac, b.radius, True) for b in self.bumps
        ]:
            dist = _distance_to_box(A, np.asarray(center, dtype=float), self.support_L)
            if exact:
                if dist < extent:
                    raise DomainError("bump leaves its support box", center=center, radius=extent)
            else:
                tail = 3.0 * erfc(dist / (np.sqrt(2.0) * extent))
                if tail > tol:
                    raise DomainError("Gaussian tail leaks outside its support box", center=center, tail=tail)

    def field(self, basis: PlaneWaveBasis) -> PeriodicField:
        """Normalized coefficients on a supercell (or unit cell) basis"""
        if basis.is_shifted:
            raise BasisMismatchError("source densities live on unshifted bases")
        vol = basis.volume
        if self.kind == "periodic_nuclear":
            lattice = np.all(basis.miller % basis.L == 0, axis=1)
            coeffs = np.zeros(basis.size, dtype=complex)
            coeffs[lattice] = basis.L**3 * self.transform(basis.wavevectors[lattice]) / np.sqrt(vol)
        else:
            if basis.L < self.support_L:
                raise DomainError("supercell smaller than the defect support", L=basis.L, support_L=self.support_L)
            coeffs = self.transform(basis.wavevectors) / np.sqrt(vol)
        return PeriodicField(basis, coeffs, real=True)

    def l2_norm(self, cutoff: float) -> float:
        """Whole-space L2 norm, by Parseval on the support supercell"""
        basis = PlaneWaveBasis(self.geometry, cutoff, L=max(self.support_L, 1))
        return self.field(basis).l2_norm()


def _distance_to_box(direct: np.ndarray, center_frac: np.ndarray, L: int) -> float:
    """Cartesian distance from a point to the faces of L * Gamma"""
    dists: List[float] = []
    vol = abs(np.linalg.det(direct))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        height = vol / np.linalg.norm(np.cross(direct[:, j], direct[:, k]))
        dists.append(height * (0.5 * L - abs(center_frac[i])))
    return float(min(dists))


def lift_to_supercell(f: PeriodicField, basis_L: PlaneWaveBasis) -> PeriodicField:
    """Represent a Gamma-periodic field on the Gamma_L basis (c^L_G = L^{3/2} c_G)"""
    if f.basis.L != 1 or basis_L.is_shifted or f.basis.is_shifted:
        raise BasisMismatchError("lift needs an unshifted unit-cell field")
    L = basis_L.L
    on_lattice = np.all(basis_L.miller % L == 0, axis=1)
    pos = f.basis.lookup(basis_L.miller[on_lattice] // L)
    coeffs = np.zeros(basis_L.size, dtype=complex)
    vals = np.where(pos >= 0, f.coeffs[np.maximum(pos, 0)], 0.0)
    coeffs[on_lattice] = L**1.5 * vals
    return PeriodicField(basis_L, coeffs, real=f.real)


def source_from_spec(kind: str, geometry: LatticeGeometry, spec) -> SourceDensity:
    """Build a SourceDensity from a schema object carrying ``gaussians``/``bumps``/``support_L``"""
    gaussians = tuple(Gaussian(tuple(g.center_frac), g.sigma, g.weight) for g in getattr(spec, "gaussians", []) or [])
    bumps = tuple(Bump(tuple(b.center_frac), b.radius, b.weight) for b in getattr(spec, "bumps", []) or [])
    return SourceDensity(
        kind=kind,
        geometry=geometry,
        gaussians=gaussians,
        bumps=bumps,
        support_L=getattr(spec, "support_L", 1) or 1,
    )
