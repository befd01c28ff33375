"""
Array geometry, steering vectors, per-antenna gains and synthesized beampatterns.
"""
import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from src.errors import ConfigurationError, DomainError, ShapeError
from src.harmonics import ANGLE_TOL, BasisSpec, SphereQuadrature, eval_basis, gauss_legendre_quadrature

HALF_POWER_DB = -3.0


@dataclass(frozen=True)
class Direction:
    theta: float
    phi: float

    def __post_init__(self):
        if not (-ANGLE_TOL <= self.theta <= np.pi + ANGLE_TOL):
            raise DomainError(f"polar angle {self.theta} outside [0, pi]")
        if not (-np.pi - ANGLE_TOL <= self.phi <= np.pi + ANGLE_TOL):
            raise DomainError(f"azimuth {self.phi} outside [-pi, pi]")

    @property
    def u(self) -> NDArray[np.float64]:
        st = np.sin(self.theta)
        return np.array([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)])

    @classmethod
    def from_vector(cls, v: ArrayLike) -> "Direction":
        v = np.asarray(v, dtype=np.float64)
        norm = np.linalg.norm(v)
        if not norm > 0.0:
            raise DomainError("direction vector must be non-zero")
        x, y, z = v / norm
        return cls(theta=float(np.arccos(np.clip(z, -1.0, 1.0))), phi=float(np.arctan2(y, x)))


@dataclass(frozen=True)
class ArrayGeometry:
    positions: NDArray[np.float64]
    wavelength: float

    def __post_init__(self):
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 or self.positions.shape[0] < 1:
            raise ConfigurationError(f"positions must be N x 3 with N >= 1, got {self.positions.shape}")
        if not self.wavelength > 0:
            raise ConfigurationError(f"wavelength must be positive, got {self.wavelength}")

    @property
    def n_elements(self) -> int:
        return self.positions.shape[0]


def upa_geometry(n_x: int, n_y: int, spacing_wavelengths: float, wavelength: float) -> ArrayGeometry:
    """Uniform planar array on z=0, centered at the origin, x-major element order."""
    if n_x < 1 or n_y < 1:
        raise ConfigurationError(f"array dimensions must be >= 1, got ({n_x}, {n_y})")
    if not spacing_wavelengths > 0:
        raise ConfigurationError(f"element spacing must be positive, got {spacing_wavelengths}")
    d = spacing_wavelengths * wavelength
    ix, iy = np.meshgrid(np.arange(n_x), np.arange(n_y), indexing="ij")
    positions = np.column_stack((
        ((ix - (n_x - 1) / 2.0) * d).ravel(),
        ((iy - (n_y - 1) / 2.0) * d).ravel(),
        np.zeros(n_x * n_y),
    ))
    return ArrayGeometry(positions=positions, wavelength=wavelength)


def steering_matrix(geom: ArrayGeometry, u: ArrayLike) -> NDArray[np.complex128]:
    """Steering vectors for a stack of unit directions u (..., 3) -> (..., N)."""
    k = 2.0 * np.pi / geom.wavelength
    return np.exp(1j * k * (np.asarray(u, dtype=np.float64) @ geom.positions.T))


def steering_vector(geom: ArrayGeometry, direction: Direction) -> NDArray[np.complex128]:
    """[a(u)]_n = exp(j 2pi/lambda r_n^T u)."""
    return steering_matrix(geom, direction.u)


def _as_coefficient_stack(coeffs) -> NDArray[np.float64]:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim < 2:
        raise ShapeError(f"expected a stack of coefficient vectors, got shape {coeffs.shape}")
    BasisSpec.from_size(coeffs.shape[-1])
    return coeffs


def gain_matrix(coeffs: Sequence[ArrayLike], direction: Direction) -> NDArray[np.float64]:
    """Diagonal of D(theta, phi): per-antenna gains, stored as an N-vector."""
    coeffs = _as_coefficient_stack(coeffs)
    if coeffs.ndim != 2:
        raise ShapeError(f"expected N x K coefficients, got shape {coeffs.shape}")
    spec = BasisSpec.from_size(coeffs.shape[1])
    return coeffs @ eval_basis(direction.theta, direction.phi, spec)


@dataclass(frozen=True)
class DirectionGrid:
    """Directions on a quadrature grid; weights integrate solid angle."""
    thetas: NDArray[np.float64]
    phis: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __len__(self) -> int:
        return len(self.thetas)

    @property
    def u(self) -> NDArray[np.float64]:
        st = np.sin(self.thetas)
        return np.column_stack((st * np.cos(self.phis), st * np.sin(self.phis), np.cos(self.thetas)))

    def directions(self) -> list[Direction]:
        return [Direction(float(t), float(p)) for t, p in zip(self.thetas, self.phis)]

    @classmethod
    def from_quadrature(cls, quad: SphereQuadrature) -> "DirectionGrid":
        thetas, phis = quad.mesh()
        return cls(thetas=thetas.ravel(), phis=phis.ravel(), weights=quad.weights.ravel())

    @classmethod
    def from_directions(cls, directions: Sequence[Direction]) -> "DirectionGrid":
        thetas = np.array([d.theta for d in directions], dtype=np.float64)
        phis = np.array([d.phi for d in directions], dtype=np.float64)
        return cls(thetas=thetas, phis=phis, weights=np.full(len(directions), 4.0 * np.pi / max(len(directions), 1)))


def sphere_grid(n_theta: int, n_phi: int) -> DirectionGrid:
    return DirectionGrid.from_quadrature(gauss_legendre_quadrature(n_theta, n_phi))


def beampattern(
    w: ArrayLike,
    coeffs,
    geom: ArrayGeometry,
    grid: DirectionGrid | Sequence[Direction],
    average: bool = True,
) -> NDArray[np.float64]:
    """B(theta, phi) = |w^H D(theta, phi) a(u)|^2 over the grid.

    coeffs is N x K for a single pattern set or L x N x K for a stage. With
    several substages the average is returned unless average=False, in which
    case the result has one row per substage.
    """
    if not isinstance(grid, DirectionGrid):
        grid = DirectionGrid.from_directions(list(grid))
    if len(grid) == 0:
        raise ConfigurationError("beampattern grid is empty")
    w = np.asarray(w, dtype=np.complex128)
    coeffs = _as_coefficient_stack(coeffs)
    stacked = coeffs if coeffs.ndim == 3 else coeffs[None]
    if stacked.shape[1] != geom.n_elements or w.shape != (geom.n_elements,):
        raise ShapeError(
            f"combiner {w.shape} and coefficients {coeffs.shape} do not match {geom.n_elements} elements"
        )
    spec = BasisSpec.from_size(stacked.shape[-1])
    basis = eval_basis(grid.thetas, grid.phis, spec)              # (G, K)
    steering = steering_matrix(geom, grid.u)                      # (G, N)
    gains = np.einsum("lnk,gk->lgn", stacked, basis)              # (L, G, N)
    response = np.einsum("n,lgn,gn->lg", np.conj(w), gains, steering)
    power = np.abs(response) ** 2
    if coeffs.ndim == 2:
        return power[0]
    return power.mean(axis=0) if average else power


def to_db(power: ArrayLike, floor_db: float = -120.0) -> NDArray[np.float64]:
    """Power in dB relative to its peak."""
    power = np.asarray(power, dtype=np.float64)
    peak = power.max()
    if not peak > 0:
        return np.full_like(power, floor_db)
    return np.maximum(10.0 * np.log10(np.maximum(power / peak, 1e-300)), floor_db)


def halfpower_fraction(power: ArrayLike, grid: DirectionGrid, threshold_db: float = HALF_POWER_DB) -> float:
    """Fraction of the full 4pi solid angle where power is within threshold_db of the peak."""
    power = np.asarray(power, dtype=np.float64)
    peak = power.max()
    if not peak > 0:
        return 1.0
    mask = power >= peak * 10.0 ** (threshold_db / 10.0)
    return float(np.sum(grid.weights[mask]) / (4.0 * np.pi))


def write_beampattern_csv(path: str, grid: DirectionGrid, power: ArrayLike, in_db: bool = False):
    """theta_rad,phi_rad,power with 9 significant digits."""
    values = to_db(power) if in_db else np.asarray(power, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["theta_rad", "phi_rad", "power"])
        for theta, phi, p in zip(grid.thetas, grid.phis, values):
            writer.writerow([f"{theta:.9g}", f"{phi:.9g}", f"{p:.9g}"])
