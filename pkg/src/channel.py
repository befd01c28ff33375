"""
Multipath scenes, wideband OFDM channels and noisy combined observations.

The numpy functions are the reference model. `MeasurementModel` evaluates
the same observation for a batch of scenes on the autodiff tape so the
loss can be differentiated with respect to the combiner and every pattern
coefficient. Path parameters are constants; noise enters as pre-drawn
standard normals scaled by sigma (reparameterization).
"""
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from src.antenna_array import ArrayGeometry, Direction, steering_matrix, upa_geometry
from src.autodiff import Tensor, einsum
from src.errors import ConfigurationError, ConstraintError, GenerationError, ShapeError
from src.harmonics import BasisSpec, eval_basis
from src.logger import get_logger

logger = get_logger("channel")

SPEED_OF_LIGHT = 299792458.0
REFERENCE_DISTANCE = 30.0
NLOS_ATTENUATION = 0.3
SCATTERER_HALF_WIDTH = 40.0
SCATTERER_HEIGHT = 10.0
POWER_TOL = 1e-9


@dataclass(frozen=True)
class OfdmGrid:
    n_subcarriers: int
    subcarrier_spacing: float
    carrier_frequency: float

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ConfigurationError(f"need at least one subcarrier, got {self.n_subcarriers}")
        if not self.subcarrier_spacing > 0 or not self.carrier_frequency > 0:
            raise ConfigurationError("subcarrier spacing and carrier frequency must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    def delay_phasors(self, taus: ArrayLike) -> NDArray[np.complex128]:
        """exp(-j 2pi tau (m-1) df) for each delay, shape (..., M)."""
        m = np.arange(self.n_subcarriers)
        return np.exp(-2j * np.pi * np.asarray(taus)[..., None] * m * self.subcarrier_spacing)


@dataclass(frozen=True)
class PathParams:
    alpha: complex
    tau: float
    direction: Direction

    def to_record(self) -> dict:
        return {
            "alpha_re": float(np.real(self.alpha)),
            "alpha_im": float(np.imag(self.alpha)),
            "tau": float(self.tau),
            "theta": float(self.direction.theta),
            "phi": float(self.direction.phi),
        }

    @classmethod
    def from_record(cls, record: dict) -> "PathParams":
        return cls(
            alpha=complex(record["alpha_re"], record["alpha_im"]),
            tau=float(record["tau"]),
            direction=Direction(float(record["theta"]), float(record["phi"])),
        )


@dataclass
class MultipathScene:
    ue_position: NDArray[np.float64]
    ap_position: NDArray[np.float64]
    paths: list[PathParams]
    scatterers: list[NDArray[np.float64]] = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def to_record(self, seed: int) -> dict:
        return {
            "ue": [float(v) for v in self.ue_position],
            "paths": [p.to_record() for p in self.paths],
            "seed": int(seed),
        }

    @classmethod
    def from_record(cls, record: dict, ap_position: ArrayLike) -> "MultipathScene":
        return cls(
            ue_position=np.asarray(record["ue"], dtype=np.float64),
            ap_position=np.asarray(ap_position, dtype=np.float64),
            paths=[PathParams.from_record(p) for p in record["paths"]],
        )


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float
    snr_db: float | None = None

    def __post_init__(self):
        if self.sigma2 < 0 or not np.isfinite(self.sigma2):
            raise ConfigurationError(f"noise variance must be finite and >= 0, got {self.sigma2}")

    @classmethod
    def from_snr(cls, snr_db: float, p_max: float = 1.0) -> "NoiseModel":
        return cls(sigma2=p_max * 10.0 ** (-snr_db / 10.0), snr_db=snr_db)

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(sigma2=0.0)

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))


def _direction_between(src: NDArray[np.float64], dst: NDArray[np.float64]) -> tuple[Direction, float]:
    delta = dst - src
    distance = float(np.linalg.norm(delta))
    if not distance > 1e-9:
        raise GenerationError(f"degenerate geometry: points {src} and {dst} coincide")
    return Direction.from_vector(delta), distance


def scene_from_position(
    p: ArrayLike,
    ap: ArrayLike,
    n_paths: int,
    rng: np.random.Generator,
    region_half_width: float | None = None,
) -> MultipathScene:
    """LoS path plus n_paths-1 single-bounce scatterer paths, sorted by delay."""
    if n_paths < 1:
        raise ConfigurationError(f"need at least one path, got {n_paths}")
    p = np.asarray(p, dtype=np.float64)
    ap = np.asarray(ap, dtype=np.float64)
    if region_half_width is not None and np.any(np.abs(p) > region_half_width):
        raise GenerationError(f"UE position {p} outside [-{region_half_width}, {region_half_width}]^2")
    ue = np.array([p[0], p[1], 0.0])

    direction, distance = _direction_between(ap, ue)
    psi = rng.uniform(0.0, 2.0 * np.pi)
    paths = [PathParams(
        alpha=(REFERENCE_DISTANCE / distance) * np.exp(1j * psi),
        tau=distance / SPEED_OF_LIGHT,
        direction=direction,
    )]
    scatterers = []
    for _ in range(n_paths - 1):
        q = np.array([
            rng.uniform(-SCATTERER_HALF_WIDTH, SCATTERER_HALF_WIDTH),
            rng.uniform(-SCATTERER_HALF_WIDTH, SCATTERER_HALF_WIDTH),
            rng.uniform(0.0, SCATTERER_HEIGHT),
        ])
        psi = rng.uniform(0.0, 2.0 * np.pi)
        direction, leg_ap = _direction_between(ap, q)
        _, leg_ue = _direction_between(q, ue)
        tau = (leg_ap + leg_ue) / SPEED_OF_LIGHT
        alpha = NLOS_ATTENUATION * (REFERENCE_DISTANCE / (SPEED_OF_LIGHT * tau)) * np.exp(1j * psi)
        paths.append(PathParams(alpha=alpha, tau=tau, direction=direction))
        scatterers.append(q)
    paths.sort(key=lambda path: path.tau)
    return MultipathScene(ue_position=p, ap_position=ap, paths=paths, scatterers=scatterers)


def _path_arrays(scene: MultipathScene):
    alphas = np.array([path.alpha for path in scene.paths], dtype=np.complex128)
    taus = np.array([path.tau for path in scene.paths], dtype=np.float64)
    thetas = np.array([path.direction.theta for path in scene.paths], dtype=np.float64)
    phis = np.array([path.direction.phi for path in scene.paths], dtype=np.float64)
    u = np.stack([path.direction.u for path in scene.paths])
    return alphas, taus, thetas, phis, u


def _check_coefficients(coeffs: NDArray[np.float64], geom: ArrayGeometry) -> BasisSpec:
    if coeffs.ndim != 2 or coeffs.shape[0] != geom.n_elements:
        raise ShapeError(f"expected {geom.n_elements} coefficient vectors, got shape {coeffs.shape}")
    return BasisSpec.from_size(coeffs.shape[1])


def channel_matrix(
    scene: MultipathScene,
    coeffs: ArrayLike,
    grid: OfdmGrid,
    geom: ArrayGeometry,
) -> NDArray[np.complex128]:
    """N x M channel: sum_p alpha_p diag(G(dir_p)) a(u_p) exp(-j2pi tau_p (m-1) df)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    spec = _check_coefficients(coeffs, geom)
    alphas, taus, thetas, phis, u = _path_arrays(scene)
    gains = coeffs @ eval_basis(thetas, phis, spec).T        # (N, P)
    steering = steering_matrix(geom, u).T                     # (N, P)
    phasors = grid.delay_phasors(taus)                        # (P, M)
    return (gains * steering * alphas) @ phasors


def channel_matrix_reference(
    scene: MultipathScene,
    coeffs: ArrayLike,
    grid: OfdmGrid,
    geom: ArrayGeometry,
) -> NDArray[np.complex128]:
    """Scalar triple loop over (n, m, p); oracle for channel_matrix."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    spec = _check_coefficients(coeffs, geom)
    k0 = 2.0 * np.pi / geom.wavelength
    H = np.zeros((geom.n_elements, grid.n_subcarriers), dtype=np.complex128)
    for n in range(geom.n_elements):
        for m in range(grid.n_subcarriers):
            total = 0j
            for path in scene.paths:
                d = path.direction
                gain = float(eval_basis(d.theta, d.phi, spec) @ coeffs[n])
                phase = k0 * float(geom.positions[n] @ d.u)
                total += (path.alpha * gain * np.exp(1j * phase)
                          * np.exp(-2j * np.pi * path.tau * m * grid.subcarrier_spacing))
            H[n, m] = total
    return H


def check_power(w: ArrayLike, p_max: float):
    power = float(np.sum(np.abs(np.asarray(w)) ** 2))
    if power > p_max + POWER_TOL:
        raise ConstraintError(f"combiner power {power:.6g} exceeds P_max={p_max}")


def draw_noise(rng: np.random.Generator, shape: tuple) -> NDArray[np.float64]:
    """Standard normals for the real and imaginary parts, shape + (2,)."""
    return rng.standard_normal(shape + (2,))


def observe(
    w: ArrayLike,
    H: ArrayLike,
    pilot: ArrayLike,
    noise: NoiseModel,
    rng: np.random.Generator | None,
    p_max: float = 1.0,
) -> NDArray[np.complex128]:
    """y_m = w^H H[:, m] s_m + n_m, n_m ~ CN(0, sigma^2)."""
    w = np.asarray(w, dtype=np.complex128)
    H = np.asarray(H, dtype=np.complex128)
    pilot = np.asarray(pilot, dtype=np.complex128)
    if H.ndim != 2 or w.shape != (H.shape[0],) or pilot.shape != (H.shape[1],):
        raise ShapeError(f"observe: w {w.shape}, H {H.shape}, pilot {pilot.shape}")
    check_power(w, p_max)
    y = (np.conj(w) @ H) * pilot
    if noise.sigma2 > 0:
        if rng is None:
            raise ConfigurationError("a random generator is required when sigma^2 > 0")
        z = draw_noise(rng, (H.shape[1],))
        y = y + np.sqrt(noise.sigma2 / 2.0) * (z[..., 0] + 1j * z[..., 1])
    return y


def unit_pilots(n_substages: int, n_subcarriers: int) -> NDArray[np.complex128]:
    return np.ones((n_substages, n_subcarriers), dtype=np.complex128)


def collect_stage(
    scene: MultipathScene,
    config,
    grid: OfdmGrid,
    geom: ArrayGeometry,
    pilots: ArrayLike,
    noise: NoiseModel,
    rng: np.random.Generator | None,
    p_max: float = 1.0,
) -> NDArray[np.complex128]:
    """M x L observation matrix of one stage; column l uses substage-l patterns."""
    pilots = np.asarray(pilots, dtype=np.complex128)
    coeffs = np.asarray(config.coeffs, dtype=np.float64)
    if pilots.shape[0] != coeffs.shape[0]:
        raise ShapeError(f"{coeffs.shape[0]} substages but {pilots.shape[0]} pilots")
    columns = []
    for l in range(coeffs.shape[0]):
        H = channel_matrix(scene, coeffs[l], grid, geom)
        columns.append(observe(config.w, H, pilots[l], noise, rng, p_max=p_max))
    return np.stack(columns, axis=1)


class MeasurementModel:
    """Batched, differentiable observation model for scenes sharing (N, M, P).

    Precomputes for each scene the basis at every path direction and the
    complex constants alpha_p a_n(u_p) exp(-j2pi tau_p m df); the pattern
    gains and the combiner then enter linearly.
    """

    def __init__(self, scenes: Sequence[MultipathScene], grid: OfdmGrid, geom: ArrayGeometry, spec: BasisSpec):
        if not scenes:
            raise ConfigurationError("measurement model needs at least one scene")
        n_paths = {scene.n_paths for scene in scenes}
        if len(n_paths) != 1:
            raise ShapeError(f"scenes in a batch must share the path count, got {sorted(n_paths)}")
        self.grid = grid
        self.geom = geom
        self.spec = spec
        self.batch = len(scenes)
        basis, constants = [], []
        for scene in scenes:
            alphas, taus, thetas, phis, u = _path_arrays(scene)
            basis.append(eval_basis(thetas, phis, spec))                     # (P, K)
            steering = steering_matrix(geom, u)                              # (P, N)
            phasors = grid.delay_phasors(taus)                               # (P, M)
            constants.append(alphas[:, None, None] * steering[:, :, None] * phasors[:, None, :])
        self.basis = np.stack(basis)                                          # (b, P, K)
        constants = np.stack(constants)                                       # (b, P, N, M)
        self.const_re = np.ascontiguousarray(constants.real)
        self.const_im = np.ascontiguousarray(constants.imag)
        self.positions = np.stack([scene.ue_position for scene in scenes])

    def observe_stage(
        self,
        w_re: Tensor,
        w_im: Tensor,
        coeffs: Tensor,
        pilots: ArrayLike,
        noise_draws: NDArray[np.float64] | None,
        sigma: float,
    ) -> tuple[Tensor, Tensor]:
        """Real and imaginary parts of Y for every substage, each (b, L, M).

        w_re, w_im: (b, N); coeffs: (b, L, N, K); pilots: (L, M) complex;
        noise_draws: (b, L, M, 2) standard normals.
        """
        gains = einsum("blnk,bpk->blnp", coeffs, self.basis)
        z_re = einsum("blnp,bpnm->blnm", gains, self.const_re)
        z_im = einsum("blnp,bpnm->blnm", gains, self.const_im)
        # conj(w)^T z
        y_re = einsum("bn,blnm->blm", w_re, z_re) + einsum("bn,blnm->blm", w_im, z_im)
        y_im = einsum("bn,blnm->blm", w_re, z_im) - einsum("bn,blnm->blm", w_im, z_re)
        pilots = np.asarray(pilots, dtype=np.complex128)
        if not np.all(pilots == 1.0):
            s_re, s_im = pilots.real[None], pilots.imag[None]
            y_re, y_im = y_re * s_re - y_im * s_im, y_re * s_im + y_im * s_re
        if sigma > 0 and noise_draws is not None:
            scale = sigma / np.sqrt(2.0)
            y_re = y_re + scale * noise_draws[..., 0]
            y_im = y_im + scale * noise_draws[..., 1]
        return y_re, y_im


@dataclass(frozen=True)
class SimulationContext:
    """Everything the simulator needs besides the scene: grid, array, basis, noise, AP."""
    grid: OfdmGrid
    geom: ArrayGeometry
    spec: BasisSpec
    noise: NoiseModel
    p_max: float
    ap_position: NDArray[np.float64]
    n_paths: int
    substages: int
    region_half_width: float

    @classmethod
    def from_system(cls, system, snr_db: float | None = None) -> "SimulationContext":
        """Build from a RunConfig `system` section; snr_db overrides the configured SNR."""
        grid = OfdmGrid(system.n_subcarriers, system.subcarrier_spacing_hz, system.carrier_frequency_hz)
        snr = system.snr_db if snr_db is None else snr_db
        logger.debug(f"Simulation context: {system.n_x}x{system.n_y} array, {system.n_subcarriers} subcarriers, SNR {snr} dB")
        return cls(
            grid=grid,
            geom=upa_geometry(system.n_x, system.n_y, system.spacing_wavelengths, grid.wavelength),
            spec=BasisSpec(system.max_degree),
            noise=NoiseModel.from_snr(snr, system.p_max),
            p_max=system.p_max,
            ap_position=np.array([0.0, 0.0, system.ap_height]),
            n_paths=system.n_paths,
            substages=system.substages,
            region_half_width=system.region_half_width,
        )

    def with_snr(self, snr_db: float) -> "SimulationContext":
        return SimulationContext(
            grid=self.grid, geom=self.geom, spec=self.spec,
            noise=NoiseModel.from_snr(snr_db, self.p_max), p_max=self.p_max,
            ap_position=self.ap_position, n_paths=self.n_paths,
            substages=self.substages, region_half_width=self.region_half_width,
        )

    @property
    def pilots(self) -> NDArray[np.complex128]:
        return unit_pilots(self.substages, self.grid.n_subcarriers)

    def scene(self, position: ArrayLike, rng: np.random.Generator) -> MultipathScene:
        return scene_from_position(position, self.ap_position, self.n_paths, rng, self.region_half_width)

    def measurement(self, scenes: Sequence[MultipathScene]) -> MeasurementModel:
        return MeasurementModel(scenes, self.grid, self.geom, self.spec)
