"""Madelung constant, correction constant and Riemann-sum convergence suites.

Brillouin-zone averages of ``1/|k + q|^2`` are handled by tiling: summing the
cell average over lattice vectors k in the cube ``[-N, N]^3`` gives the average
of ``1/|p|^2`` over the scaled cell ``(2N+1) * BZ``, which reduces to one smooth
integral per face of the cell (pyramids with apex at the origin). The truncated
tail carries the multipole structure ``alpha/s + beta/s^3 + ...`` in
``s = 2N + 1``; the leading term is integrated analytically and the rest is
removed by Richardson extrapolation.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.special import erfc

from app.core.config import settings
from app.core.exceptions import DomainError, IncreaseRadiusError, InvalidSizeError, NonFiniteValueError
from app.services.fitting import (
    linear_least_squares,
    log_linear_rate,
    power_law_exponent,
    richardson,
)
from app.services.geometry import LatticeGeometry, kpoint_grid

logger = logging.getLogger(__name__)

Method = Literal["ewald", "direct_multipole"]


@dataclass(frozen=True)
class MadelungResult:
    m: float
    m_prime: float
    method: str
    est_error: float


@dataclass(frozen=True)
class CorrectionConstant:
    a: float
    M: np.ndarray
    truncation_index: int
    extrapolation_order: int
    est_error: float


@dataclass
class RiemannReport:
    L_values: List[int]
    values: List[float]
    errors: List[float]
    rate: float = float("nan")
    r_squared: float = float("nan")
    coefficient: Optional[float] = None
    expected_coefficient: Optional[float] = None
    residuals: List[float] = field(default_factory=list)
    residual_exponent: Optional[float] = None


# ---------------------------------------------------------------------------
# Quadrature on cells and spheres


def _gauss(order: int, lo: float = -0.5, hi: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def _face_integral(cell: np.ndarray, func: Callable[[np.ndarray], np.ndarray], order: int) -> float:
    """Sum over the six faces F of the cell of h_F * int_F func dA.

    For func homogeneous of degree -2 this is the integral over the cell; for
    degree -4 it is the integral over the exterior of the cell.
    """
    vol = abs(np.linalg.det(cell))
    u, w = _gauss(order)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(w, w).reshape(-1)
    total = 0.0
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        area = np.linalg.norm(np.cross(cell[:, j], cell[:, k]))
        height = 0.5 * vol / area
        for sign in (-0.5, 0.5):
            pts = sign * cell[:, i][None, :] + np.outer(uu.reshape(-1), cell[:, j]) + np.outer(vv.reshape(-1), cell[:, k])
            total += height * area * float(np.sum(ww * func(pts)))
    return total


def _inverse_square(p: np.ndarray) -> np.ndarray:
    return 1.0 / np.einsum("ij,ij->i", p, p)


def bz_inverse_square_average(cell: np.ndarray, order: int = None) -> float:
    """Average of 1/|q|^2 over the cell spanned by the columns of ``cell``"""
    order = settings.quadrature_order if order is None else order
    return _face_integral(cell, _inverse_square, order) / abs(np.linalg.det(cell))


def cell_second_moment(cell: np.ndarray) -> np.ndarray:
    """Average of q q^T over the centered cell"""
    return cell @ cell.T / 12.0


def _tail_coefficient(cell: np.ndarray, order: int) -> float:
    """Exterior integral of the second-order multipole term, divided by the cell volume"""
    S = cell_second_moment(cell)
    trace = np.trace(S)

    def t2(k: np.ndarray) -> np.ndarray:
        k2 = np.einsum("ij,ij->i", k, k)
        kSk = np.einsum("ij,jk,ik->i", k, S, k)
        return -trace / k2**2 + 4.0 * kSk / k2**3

    return _face_integral(cell, t2, order) / abs(np.linalg.det(cell))


def sphere_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unit vectors and weights integrating over S^2 (Gauss in cos(theta), uniform in phi)"""
    ct, wt = np.polynomial.legendre.leggauss(order)
    nphi = 2 * order
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    st = np.sqrt(1.0 - ct**2)
    dirs = np.stack(
        [np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(ct, np.ones(nphi))],
        axis=-1,
    ).reshape(-1, 3)
    weights = np.outer(wt, np.full(nphi, 2.0 * np.pi / nphi)).reshape(-1)
    return dirs, weights


def angular_inverse_form(M: np.ndarray, order: int = None) -> float:
    """Integral over the unit sphere of 1 / (w^T M w)"""
    order = settings.quadrature_order if order is None else order
    dirs, weights = sphere_rule(order)
    return float(np.sum(weights / np.einsum("ij,jk,ik->i", dirs, np.real(M), dirs)))


# ---------------------------------------------------------------------------
# The radial cutoff Psi


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity non-increasing step from 1 at t <= 0 to 0 at t >= 1"""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t < 1.0, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
        b = np.where(t > 0.0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class RadialCutoff:
    """psi(s) = 1 on [0, r/2], 0 on [r, inf), smooth and non-increasing between"""

    radius: float

    @classmethod
    def for_geometry(cls, geometry: LatticeGeometry, fraction: float = None) -> "RadialCutoff":
        fraction = settings.bump_radius_fraction if fraction is None else fraction
        return cls(radius=fraction * geometry.bz_inradius)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        half = 0.5 * self.radius
        return _smooth_step((np.asarray(s, dtype=float) - half) / half)

    def periodic(self, geometry: LatticeGeometry, q: np.ndarray) -> np.ndarray:
        """Psi_per(q) = sum over reciprocal lattice k of psi(|q + k|)"""
        q = np.atleast_2d(q)
        shifts = np.stack(np.meshgrid(*[np.arange(-1, 2)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
        kvec = geometry.to_cartesian(shifts)
        total = np.zeros(len(q))
        for k in kvec:
            total += self(np.linalg.norm(q + k, axis=1))
        return total

    def radial_moment(self, power: float = 0.0) -> float:
        """int_0^r s^power psi(s) ds"""
        half = 0.5 * self.radius
        inner = half ** (power + 1.0) / (power + 1.0)
        outer, _ = integrate.quad(lambda s: s**power * float(self(s)), half, self.radius, epsabs=1e-15, epsrel=1e-13, limit=200)
        return inner + outer


# ---------------------------------------------------------------------------
# Madelung constant


def _lattice_points(basis: np.ndarray, radius: float) -> np.ndarray:
    """Nonzero lattice vectors (columns of basis) with |R| <= radius"""
    dual_lengths = np.linalg.norm(np.linalg.inv(basis), axis=1)
    bound = np.ceil(radius * dual_lengths).astype(int) + 1
    axes = [np.arange(-b, b + 1) for b in bound]
    n = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    n = n[np.any(n != 0, axis=1)]
    R = n @ basis.T
    norms = np.linalg.norm(R, axis=1)
    return R[norms <= radius]


def madelung_ewald(geometry: LatticeGeometry, precision: float = None) -> MadelungResult:
    """lim_{x->0} G_1(x) - 1/|x| by the real/reciprocal split, zero-mean gauge"""
    precision = settings.ewald_precision if precision is None else precision
    vol = geometry.cell_volume
    eta = np.sqrt(np.pi) / vol ** (1.0 / 3.0)
    x_cut = np.sqrt(-np.log(precision)) + 1.0
    R = _lattice_points(geometry.direct, x_cut / eta)
    r = np.linalg.norm(R, axis=1)
    real_part = float(np.sum(erfc(eta * r) / r))
    K = _lattice_points(geometry.reciprocal, 2.0 * eta * x_cut)
    k2 = np.einsum("ij,ij->i", K, K)
    recip_part = 4.0 * np.pi / vol * float(np.sum(np.exp(-k2 / (4.0 * eta**2)) / k2))
    m = real_part + recip_part - 2.0 * eta / np.sqrt(np.pi) - np.pi / (eta**2 * vol)
    est = 10.0 * np.finfo(float).eps * (abs(real_part) + abs(recip_part) + 2.0 * eta)
    logger.debug(f"Ewald: eta={eta:.4f}, {len(R)} real and {len(K)} reciprocal terms")
    return MadelungResult(m=m, m_prime=_shifted(geometry, m), method="ewald", est_error=float(est))


def _shifted(geometry: LatticeGeometry, m: float) -> float:
    return m + 2.0 * np.pi * geometry.cell_second_moment / geometry.cell_volume**2


def _cube_sum(cell: np.ndarray, N: int) -> float:
    """sum of 1/|k|^2 over nonzero k = cell @ n, n in [-N, N]^3, slab by slab"""
    axis = np.arange(-N, N + 1)
    n2, n3 = np.meshgrid(axis, axis, indexing="ij")
    plane = np.stack([np.zeros(n2.size), n2.reshape(-1), n3.reshape(-1)], axis=1)
    slabs = []
    for n1 in axis:
        plane[:, 0] = n1
        k = plane @ cell.T
        k2 = np.einsum("ij,ij->i", k, k)
        if n1 == 0:
            k2 = k2[k2 > 0]
        slabs.append(np.sum(1.0 / k2))
    return float(np.sum(np.asarray(slabs)))


def _multipole_constant(cell: np.ndarray, base_index: int, order: int) -> Tuple[float, float]:
    """sum_k avg_q (1/|k+q|^2 - 1(k!=0)/|k|^2) over the lattice spanned by ``cell``"""
    W = bz_inverse_square_average(cell, order)
    alpha = _tail_coefficient(cell, order)
    indices = [base_index, 2 * base_index, 4 * base_index]
    sizes, values = [], []
    for N in indices:
        s = 2 * N + 1
        partial = s * W - _cube_sum(cell, N)
        sizes.append(s)
        values.append(partial + alpha / s)
        logger.debug(f"multipole ladder N={N}: partial={partial:.15f}")
    return richardson(values, sizes, powers=[3.0, 5.0])


def madelung_direct(geometry: LatticeGeometry, base_index: int = None, order: int = None, tol: float = None) -> MadelungResult:
    base_index = settings.multipole_base_index if base_index is None else base_index
    order = settings.quadrature_order if order is None else order
    tol = settings.madelung_tol if tol is None else tol
    a_identity, err = _multipole_constant(geometry.reciprocal, base_index, order)
    scale = geometry.bz_volume / (2.0 * np.pi**2)
    m, est = -scale * a_identity, scale * err
    if est > tol:
        raise IncreaseRadiusError("multipole tail not converged", est_error=est, base_index=base_index)
    return MadelungResult(m=m, m_prime=_shifted(geometry, m), method="direct_multipole", est_error=est)


def madelung(geometry: LatticeGeometry, method: Method = "ewald") -> MadelungResult:
    if method == "ewald":
        return madelung_ewald(geometry)
    if method == "direct_multipole":
        return madelung_direct(geometry)
    raise DomainError("unknown Madelung method", method=method)


def _sqrt_pd(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    if M.shape != (3, 3):
        raise DomainError("M must be 3x3", shape=M.shape)
    if np.max(np.abs(M - M.conj().T)) > 1e-10 * max(1.0, np.max(np.abs(M))):
        raise DomainError("M must be Hermitian")
    sym = np.real(0.5 * (M + M.conj().T))
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() <= 0:
        raise DomainError("M must be positive definite", min_eigenvalue=float(vals.min()))
    return (vecs * np.sqrt(vals)) @ vecs.T


def correction_constant(
    geometry: LatticeGeometry,
    M: np.ndarray,
    base_index: int = None,
    order: int = None,
    tol: float = None,
) -> CorrectionConstant:
    """sum_k avg_q [1/((k+q)^T M (k+q)) - 1(k!=0)/(k^T M k)] via the sqrt(M)-transformed lattice"""
    base_index = settings.multipole_base_index if base_index is None else base_index
    order = settings.quadrature_order if order is None else order
    tol = settings.madelung_tol if tol is None else tol
    root = _sqrt_pd(M)
    cell = root @ geometry.reciprocal
    a, est = _multipole_constant(cell, base_index, order)
    if est > tol * max(1.0, abs(a)):
        raise IncreaseRadiusError("correction-constant tail not converged", est_error=est, base_index=base_index)
    logger.info(f"Correction constant a={a:.12f} (est. error {est:.1e})")
    return CorrectionConstant(
        a=a,
        M=np.array(M),
        truncation_index=4 * base_index,
        extrapolation_order=5,
        est_error=est,
    )


def multipole_remainder(k: np.ndarray, q: np.ndarray) -> np.ndarray:
    """F_1(k, q) = 1/|k+q|^2 - 1/|k|^2 + 2 k.q / |k|^4"""
    k = np.atleast_2d(k)
    q = np.atleast_2d(q)
    kq = k + q
    k2 = np.einsum("ij,ij->i", k, k)
    return 1.0 / np.einsum("ij,ij->i", kq, kq) - 1.0 / k2 + 2.0 * np.einsum("ij,ij->i", k, q) / k2**2


def multipole_bound(geometry: LatticeGeometry, max_index: int = 6, order: int = 6) -> float:
    """max |F_1(k,q)| |k|^4 / |q|^2 over Gauss points q in the zone and |k| >= 2 diam(BZ)"""
    u, _ = _gauss(order)
    qf = np.stack(np.meshgrid(u, u, u, indexing="ij"), axis=-1).reshape(-1, 3)
    q = geometry.to_cartesian(qf)
    corners = geometry.to_cartesian(np.array([[sx, sy, sz] for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)]))
    diam = float(np.max(np.linalg.norm(corners[:, None] - corners[None], axis=-1)))
    ks = _lattice_points(geometry.reciprocal, max_index * np.max(np.linalg.norm(geometry.reciprocal, axis=0)))
    ks = ks[np.linalg.norm(ks, axis=1) >= 2.0 * diam]
    worst = 0.0
    q2 = np.einsum("ij,ij->i", q, q)
    for k in ks:
        kk = np.broadcast_to(k, q.shape)
        ratio = np.abs(multipole_remainder(kk, q)) * float(k @ k) ** 2 / q2
        worst = max(worst, float(ratio.max()))
    return worst


# ---------------------------------------------------------------------------
# Riemann sums


def _checked(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError("integrand is not finite at a lattice point")
    return values


def _scaled_points(geometry: LatticeGeometry, lam: float, radius: float) -> np.ndarray:
    """Points k / lam, k in the reciprocal lattice, |k / lam| <= radius (origin included)"""
    pts = _lattice_points(geometry.reciprocal, radius * lam) / lam
    return np.vstack([np.zeros((1, 3)), pts])


def riemann_sums(
    f: Callable[[np.ndarray], np.ndarray],
    lam: float,
    mode: Literal["integral", "sum", "sum0"],
    geometry: LatticeGeometry,
    radius: float,
    integral: Optional[float] = None,
    order: int = None,
) -> float:
    """I(f) = |BZ|^{-1} int f, I_lam(f) = lam^{-3} sum f(k/lam), I_lam^0 without the origin.

    ``radius`` bounds the support (or the numerically relevant region) of f.
    For mode "integral" a closed-form whole-space integral may be supplied;
    otherwise spherical product quadrature over the ball is used.
    """
    if mode == "integral":
        if integral is not None:
            return float(integral) / geometry.bz_volume
        return ball_integral(f, radius, order) / geometry.bz_volume
    if lam <= 0:
        raise InvalidSizeError("lambda must be positive", lam=lam)
    pts = _scaled_points(geometry, lam, radius)
    if mode == "sum":
        return float(np.sum(_checked(f(pts)))) / lam**3
    if mode == "sum0":
        return float(np.sum(_checked(f(pts[1:])))) / lam**3
    raise DomainError("unknown Riemann mode", mode=mode)


def ball_integral(f: Callable[[np.ndarray], np.ndarray], radius: float, order: int = None) -> float:
    """int_{|q| <= radius} f(q) dq with Gauss-Legendre radial nodes and a sphere rule"""
    order = settings.quadrature_order if order is None else order
    dirs, weights = sphere_rule(order)

    def shell(s: float) -> float:
        return s * s * float(np.sum(weights * f(s * dirs)))

    value, _ = integrate.quad(shell, 0.0, radius, epsabs=1e-14, epsrel=1e-12, limit=200)
    return value


def bz_average(f: Callable[[np.ndarray], np.ndarray], geometry: LatticeGeometry, order: int = None) -> float:
    """Tensor Gauss-Legendre average over the Brillouin zone"""
    order = settings.quadrature_order if order is None else order
    u, w = _gauss(order)
    grid = np.stack(np.meshgrid(u, u, u, indexing="ij"), axis=-1).reshape(-1, 3)
    weights = np.einsum("i,j,k->ijk", w, w, w).reshape(-1)
    return float(np.sum(weights * f(geometry.to_cartesian(grid))))


def rate_exponential(
    f: Callable[[np.ndarray], np.ndarray],
    L_values: Sequence[int],
    geometry: LatticeGeometry,
    reference: Optional[float] = None,
    order: int = 48,
) -> RiemannReport:
    """|avg f - L^{-3} sum_{Lambda_L} f| for a periodic analytic f; log-linear rate"""
    L_values = _sorted_ladder(L_values)
    ref = bz_average(f, geometry, order) if reference is None else reference
    values, errors = [], []
    for L in L_values:
        value = float(np.mean(_checked(f(kpoint_grid(geometry, L).cartesian))))
        values.append(value)
        errors.append(abs(value - ref))
    alpha, r2 = log_linear_rate(L_values, errors)
    logger.info(f"Exponential Riemann rate alpha={alpha:.4f} (R^2={r2:.5f})")
    return RiemannReport(L_values=L_values, values=values, errors=errors, rate=alpha, r_squared=r2)


def rate_singular(
    g: Callable[[np.ndarray], np.ndarray],
    M: np.ndarray,
    L_values: Sequence[int],
    geometry: LatticeGeometry,
    cutoff: Optional[RadialCutoff] = None,
    order: int = None,
    a: Optional[float] = None,
) -> RiemannReport:
    """D_L = I(f Psi) - I_L^0(f Psi) for f = g / (q^T M q); fit of the 1/L coefficient"""
    L_values = _sorted_ladder(L_values)
    M = np.asarray(M)
    _sqrt_pd(M)
    if np.linalg.eigvalsh(np.real(0.5 * (M + M.conj().T))).min() < 1.0 - 1e-12:
        raise DomainError("M must satisfy M >= 1")
    cutoff = RadialCutoff.for_geometry(geometry) if cutoff is None else cutoff
    Mr = np.real(M)

    def integrand(q: np.ndarray) -> np.ndarray:
        form = np.einsum("ij,jk,ik->i", q, Mr, q)
        return g(q) * cutoff(np.linalg.norm(q, axis=1)) / form

    exact = riemann_sums(integrand, 1.0, "integral", geometry, cutoff.radius, order=order)
    values = []
    for L in L_values:
        values.append(exact - riemann_sums(integrand, L, "sum0", geometry, cutoff.radius))

    inv = 1.0 / np.asarray(L_values, dtype=float)
    fit = linear_least_squares(np.column_stack([inv, inv**3]), values)
    coefficient = float(fit.coefficients[0])
    if a is None:
        a = correction_constant(geometry, M).a
    g0 = float(np.real(g(np.zeros((1, 3)))[0]))
    expected = a * g0
    residuals = [v - expected / L for v, L in zip(values, L_values)]
    exponent, _ = power_law_exponent(L_values, residuals)
    logger.info(f"Singular Riemann: 1/L coefficient {coefficient:.10f} vs a*g(0)={expected:.10f}")
    return RiemannReport(
        L_values=L_values,
        values=values,
        errors=[abs(r) for r in residuals],
        coefficient=coefficient,
        expected_coefficient=expected,
        residuals=residuals,
        residual_exponent=exponent,
    )


def rate_sobolev(
    L_values: Sequence[int],
    geometry: LatticeGeometry,
    power: float = 1.0,
    cutoff: Optional[RadialCutoff] = None,
) -> RiemannReport:
    """Riemann error of f(q) = |q|^power Psi(q); algebraic decay L^{-(power+3)}"""
    L_values = _sorted_ladder(L_values)
    cutoff = RadialCutoff.for_geometry(geometry) if cutoff is None else cutoff

    def f(q: np.ndarray) -> np.ndarray:
        s = np.linalg.norm(q, axis=1)
        return s**power * cutoff(s)

    whole = 4.0 * np.pi * cutoff.radial_moment(2.0 + power)
    exact = riemann_sums(f, 1.0, "integral", geometry, cutoff.radius, integral=whole)
    values, errors = [], []
    for L in L_values:
        value = riemann_sums(f, L, "sum", geometry, cutoff.radius)
        values.append(value)
        errors.append(abs(value - exact))
    rate, r2 = power_law_exponent(L_values, errors)
    logger.info(f"Sobolev Riemann rate {rate:.3f} (predicted {power + 3.0:.1f})")
    return RiemannReport(L_values=L_values, values=values, errors=errors, rate=rate, r_squared=r2)


def _sorted_ladder(L_values: Sequence[int]) -> List[int]:
    ladder = [int(L) for L in L_values]
    if any(L <= 0 for L in ladder):
        raise InvalidSizeError("ladder entries must be positive", ladder=ladder)
    if ladder != sorted(set(ladder)):
        raise InvalidSizeError("ladder must be strictly increasing", ladder=ladder)
    return ladder
