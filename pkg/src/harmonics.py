"""
Real spherical-harmonic basis for programmable radiation patterns.

A pattern is the real expansion G(theta, phi) = gamma(theta, phi)^T c over
the orthonormal real harmonics up to degree U. Ordering is degree-major,
order-minor: k(l, m) = l^2 + l + m. Orders m > 0 carry cos(m phi), m < 0
carry sin(|m| phi); no Condon-Shortley phase. With unit-L2 normalization
the radiated energy of a pattern equals ||c||^2.
"""
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from src.errors import ConfigurationError, DegenerateInputError, DomainError, ShapeError

# Coefficient vector of one antenna for one substage
PatternCoefficients = NDArray[np.float64]

UNIT_NORM_EPS = 1e-9
ANGLE_TOL = 1e-12


@dataclass(frozen=True)
class BasisSpec:
    max_degree: int

    def __post_init__(self):
        if int(self.max_degree) != self.max_degree or self.max_degree < 0:
            raise ConfigurationError(f"max_degree must be a non-negative integer, got {self.max_degree}")

    @property
    def size(self) -> int:
        return (self.max_degree + 1) ** 2

    @staticmethod
    def index(l: int, m: int) -> int:
        return l * l + l + m

    @classmethod
    def from_size(cls, size: int) -> "BasisSpec":
        """Basis whose size matches a coefficient vector length."""
        root = int(round(np.sqrt(size)))
        if size < 1 or root * root != size:
            raise ShapeError(f"coefficient length {size} is not a perfect square (U+1)^2")
        return cls(root - 1)


@dataclass(frozen=True)
class SphereQuadrature:
    """Gauss-Legendre nodes in cos(theta) times uniform nodes in phi."""
    cos_nodes: NDArray[np.float64]
    polar_weights: NDArray[np.float64]
    phi_nodes: NDArray[np.float64]

    @property
    def n_theta(self) -> int:
        return len(self.cos_nodes)

    @property
    def n_phi(self) -> int:
        return len(self.phi_nodes)

    @property
    def thetas(self) -> NDArray[np.float64]:
        return np.arccos(self.cos_nodes)

    @property
    def weights(self) -> NDArray[np.float64]:
        """Solid-angle weight of every (theta, phi) node, shape (N_theta, N_phi)."""
        return np.outer(self.polar_weights, np.full(self.n_phi, 2.0 * np.pi / self.n_phi))

    def mesh(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return np.meshgrid(self.thetas, self.phi_nodes, indexing="ij")

    def supports(self, spec: BasisSpec) -> bool:
        U = spec.max_degree
        return self.n_theta >= U + 1 and self.n_phi >= 4 * U + 1


def gauss_legendre_quadrature(n_theta: int, n_phi: int) -> SphereQuadrature:
    if n_theta < 1 or n_phi < 1:
        raise ConfigurationError(f"quadrature needs positive resolution, got ({n_theta}, {n_phi})")
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phis = -np.pi + 2.0 * np.pi * np.arange(n_phi) / n_phi
    return SphereQuadrature(cos_nodes=x, polar_weights=w, phi_nodes=phis)


def quadrature_for(spec: BasisSpec) -> SphereQuadrature:
    """Default rule: exact for products of two degree-<=U harmonics."""
    U = spec.max_degree
    return gauss_legendre_quadrature(2 * (U + 1), 4 * U + 4)


def _check_angles(theta: NDArray[np.float64], phi: NDArray[np.float64]):
    if np.any(~np.isfinite(theta)) or np.any(~np.isfinite(phi)):
        raise DomainError("angles must be finite")
    if np.any(theta < -ANGLE_TOL) or np.any(theta > np.pi + ANGLE_TOL):
        raise DomainError("polar angle outside [0, pi]")
    if np.any(phi < -np.pi - ANGLE_TOL) or np.any(phi > np.pi + ANGLE_TOL):
        raise DomainError("azimuth outside [-pi, pi]")


def _normalized_legendre(U: int, x: NDArray[np.float64]) -> dict:
    """Orthonormal associated Legendre values p[l, m] (m >= 0) by upward recurrence.

    p[l, m] = sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) P_l^m(x), without the
    Condon-Shortley phase.
    """
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    p = {(0, 0): np.full_like(x, 1.0 / np.sqrt(4.0 * np.pi))}
    for m in range(1, U + 1):
        p[(m, m)] = np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * p[(m - 1, m - 1)]
    for m in range(0, U):
        p[(m + 1, m)] = np.sqrt(2.0 * m + 3.0) * x * p[(m, m)]
    for m in range(0, U + 1):
        for l in range(m + 2, U + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p[(l, m)] = a * (x * p[(l - 1, m)] - b * p[(l - 2, m)])
    return p


def eval_basis(theta: ArrayLike, phi: ArrayLike, spec: BasisSpec) -> NDArray[np.float64]:
    """Real orthonormal harmonics gamma(theta, phi), shape broadcast(theta, phi) + (K,)."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, dtype=np.float64), np.asarray(phi, dtype=np.float64))
    _check_angles(theta, phi)
    U = spec.max_degree
    p = _normalized_legendre(U, np.cos(theta))
    out = np.empty(theta.shape + (spec.size,), dtype=np.float64)
    root2 = np.sqrt(2.0)
    for l in range(U + 1):
        out[..., spec.index(l, 0)] = p[(l, 0)]
        for m in range(1, l + 1):
            out[..., spec.index(l, m)] = root2 * p[(l, m)] * np.cos(m * phi)
            out[..., spec.index(l, -m)] = root2 * p[(l, m)] * np.sin(m * phi)
    return out


def pattern_gain(c: ArrayLike, theta: ArrayLike, phi: ArrayLike) -> NDArray[np.float64] | float:
    """Signed amplitude gain gamma(theta, phi)^T c."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 1:
        raise ShapeError(f"pattern coefficients must be a vector, got shape {c.shape}")
    spec = BasisSpec.from_size(c.shape[0])
    gain = eval_basis(theta, phi, spec) @ c
    return float(gain) if np.ndim(gain) == 0 else gain


def pattern_energy(c: ArrayLike, quad: SphereQuadrature) -> float:
    """Radiated energy: quadrature of G^2 over the sphere."""
    c = np.asarray(c, dtype=np.float64)
    spec = BasisSpec.from_size(c.shape[-1])
    if not quad.supports(spec):
        raise ConfigurationError(
            f"quadrature ({quad.n_theta}, {quad.n_phi}) too coarse for degree {spec.max_degree}"
        )
    thetas, phis = quad.mesh()
    gain = eval_basis(thetas, phis, spec) @ c
    return float(np.sum(quad.weights * gain * gain))


def project_unit(raw: ArrayLike) -> PatternCoefficients:
    """Radial projection onto the unit sphere; refuses near-zero input."""
    raw = np.asarray(raw, dtype=np.float64)
    norm = np.linalg.norm(raw)
    if not norm > UNIT_NORM_EPS:
        raise DegenerateInputError(f"cannot project vector of norm {norm:.3e} onto the unit sphere")
    return raw / norm


def isotropic_coefficients(spec: BasisSpec) -> PatternCoefficients:
    """Unit vector e1: the constant Y00 pattern."""
    c = np.zeros(spec.size)
    c[0] = 1.0
    return c


def gram_matrix(spec: BasisSpec, quad: SphereQuadrature) -> NDArray[np.float64]:
    """Gram matrix of the basis functions under the quadrature rule."""
    if not quad.supports(spec):
        raise ConfigurationError(
            f"quadrature ({quad.n_theta}, {quad.n_phi}) too coarse for degree {spec.max_degree}"
        )
    thetas, phis = quad.mesh()
    basis = eval_basis(thetas, phis, spec).reshape(-1, spec.size)
    weighted = basis * quad.weights.reshape(-1, 1)
    gram = basis.T @ weighted
    return 0.5 * (gram + gram.T)
