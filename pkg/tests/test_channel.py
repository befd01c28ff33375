import numpy as np
import pytest

from src.antenna_array import Direction, steering_vector, upa_geometry
from src.autodiff import Parameter, Tensor, grad_check
from src.channel import (
    SPEED_OF_LIGHT,
    MeasurementModel,
    MultipathScene,
    NoiseModel,
    OfdmGrid,
    PathParams,
    channel_matrix,
    channel_matrix_reference,
    collect_stage,
    observe,
    scene_from_position,
    unit_pilots,
)
from src.errors import ConstraintError, GenerationError, ShapeError
from src.harmonics import BasisSpec, isotropic_coefficients
from src.policy import SensingConfig

Y00 = 0.2820947918
AP = np.array([0.0, 0.0, 10.0])


def _grid(m=4, spacing=960e3):
    return OfdmGrid(m, spacing, 30e9)


def _single_path_scene(alpha=1.0, tau=0.0, direction=Direction(0.0, 0.0)):
    return MultipathScene(
        ue_position=np.zeros(2), ap_position=AP, paths=[PathParams(alpha=alpha, tau=tau, direction=direction)]
    )


def test_los_geometry():
    scene = scene_from_position([30.0, 0.0], AP, 1, np.random.default_rng(0))
    los = scene.paths[0]
    d = np.sqrt(1000.0)
    assert los.tau == pytest.approx(d / SPEED_OF_LIGHT)
    assert los.tau == pytest.approx(1.05482e-7, rel=1e-5)
    np.testing.assert_allclose(los.direction.u, [0.94868, 0.0, -0.31623], atol=1e-5)
    assert abs(los.alpha) == pytest.approx(30.0 / d)


def test_nadir_ue():
    scene = scene_from_position([0.0, 0.0], AP, 1, np.random.default_rng(0))
    assert scene.paths[0].direction.theta == pytest.approx(np.pi)
    assert scene.paths[0].tau == pytest.approx(10.0 / SPEED_OF_LIGHT)


def test_paths_sorted_by_delay_and_reproducible():
    a = scene_from_position([12.0, -7.0], AP, 4, np.random.default_rng(11))
    b = scene_from_position([12.0, -7.0], AP, 4, np.random.default_rng(11))
    taus = [p.tau for p in a.paths]
    assert taus == sorted(taus)
    assert a.n_paths == 4 and len(a.scatterers) == 3
    assert [p.alpha for p in a.paths] == [p.alpha for p in b.paths]


def test_scene_outside_region_is_rejected():
    with pytest.raises(GenerationError):
        scene_from_position([31.0, 0.0], AP, 1, np.random.default_rng(0), region_half_width=30.0)


def test_scene_record_round_trip_keeps_paths():
    scene = scene_from_position([3.0, 4.0], AP, 3, np.random.default_rng(5))
    restored = MultipathScene.from_record(scene.to_record(seed=5), AP)
    geom = upa_geometry(2, 2, 0.5, 0.01)
    coeffs = np.random.default_rng(6).standard_normal((4, 4))
    np.testing.assert_allclose(
        channel_matrix(restored, coeffs, _grid(), geom), channel_matrix(scene, coeffs, _grid(), geom), rtol=1e-15
    )


def test_single_isotropic_path():
    grid = _grid()
    geom = upa_geometry(1, 1, 0.5, grid.wavelength)
    H = channel_matrix(_single_path_scene(), [isotropic_coefficients(BasisSpec(1))], grid, geom)
    np.testing.assert_allclose(H, np.full((1, 4), Y00), atol=1e-10)


def test_delay_phasor_quarter_turn():
    grid = _grid()
    tau = 0.25 / grid.subcarrier_spacing
    geom = upa_geometry(1, 1, 0.5, grid.wavelength)
    H = channel_matrix(_single_path_scene(tau=tau), [isotropic_coefficients(BasisSpec(0))], grid, geom)
    assert H[0, 1] == pytest.approx(-1j * H[0, 0])


def test_destructive_paths_cancel():
    grid = _grid()
    geom = upa_geometry(2, 1, 0.5, grid.wavelength)
    d = Direction(0.8, 0.3)
    scene = MultipathScene(
        ue_position=np.zeros(2), ap_position=AP,
        paths=[PathParams(0.5 + 0.2j, 1e-7, d), PathParams(-0.5 - 0.2j, 1e-7, d)],
    )
    H = channel_matrix(scene, np.ones((2, 4)) / 2.0, grid, geom)
    np.testing.assert_allclose(H, 0.0, atol=1e-15)


def test_vectorized_channel_matches_reference():
    rng = np.random.default_rng(42)
    for _ in range(25):
        grid = OfdmGrid(int(rng.integers(1, 17)), 960e3, 30e9)
        geom = upa_geometry(int(rng.integers(1, 3)), int(rng.integers(1, 5)), 0.5, grid.wavelength)
        spec = BasisSpec(int(rng.integers(0, 3)))
        scene = scene_from_position(rng.uniform(-30, 30, 2), AP, int(rng.integers(1, 5)), rng)
        coeffs = rng.standard_normal((geom.n_elements, spec.size))
        fast = channel_matrix(scene, coeffs, grid, geom)
        slow = channel_matrix_reference(scene, coeffs, grid, geom)
        assert np.max(np.abs(fast - slow)) / np.max(np.abs(slow)) < 1e-12


def test_channel_shape_mismatch():
    grid = _grid()
    geom = upa_geometry(2, 2, 0.5, grid.wavelength)
    with pytest.raises(ShapeError):
        channel_matrix(_single_path_scene(), np.ones((3, 4)), grid, geom)


def test_observe_passthrough():
    y = observe(np.array([1.0]), np.array([[0.3]]), np.array([1.0]), NoiseModel.noiseless(), None)
    assert y[0] == pytest.approx(0.3)


def test_observe_matched_filter_gain():
    grid = _grid(m=8)
    geom = upa_geometry(2, 2, 0.5, grid.wavelength)
    d = Direction(0.6, -1.2)
    scene = _single_path_scene(alpha=0.7 * np.exp(0.4j), tau=3e-8, direction=d)
    coeffs = np.tile(isotropic_coefficients(BasisSpec(1)), (4, 1))
    p_max = 2.0
    w = steering_vector(geom, d) / 2.0 * np.sqrt(p_max)
    y = observe(w, channel_matrix(scene, coeffs, grid, geom), np.ones(8), NoiseModel.noiseless(), None, p_max=p_max)
    np.testing.assert_allclose(np.abs(y), np.sqrt(4 * p_max) * 0.7 * Y00, rtol=1e-10)


def test_observe_pure_noise_variance():
    noise = NoiseModel(sigma2=0.5)
    y = observe(np.zeros(1), np.zeros((1, 4096)), np.ones(4096), noise, np.random.default_rng(9))
    assert np.mean(np.abs(y) ** 2) == pytest.approx(0.5, rel=0.05)


def test_observe_rejects_excess_power():
    with pytest.raises(ConstraintError):
        observe(np.array([1.0, 1.0]), np.ones((2, 3)), np.ones(3), NoiseModel.noiseless(), None, p_max=1.0)


def test_snr_definition():
    assert NoiseModel.from_snr(10.0, p_max=2.0).sigma2 == pytest.approx(0.2)


def test_collect_stage_columns():
    grid = _grid(m=5)
    geom = upa_geometry(2, 1, 0.5, grid.wavelength)
    scene = scene_from_position([5.0, 5.0], AP, 2, np.random.default_rng(1))
    coeffs = np.tile(np.array([[0.6, 0.8, 0.0, 0.0]]), (3, 2, 1))
    config = SensingConfig(w=np.array([0.6, 0.8j]), coeffs=coeffs, stage_index=1)
    Y = collect_stage(scene, config, grid, geom, unit_pilots(3, 5), NoiseModel.noiseless(), None)
    assert Y.shape == (5, 3)
    np.testing.assert_allclose(Y[:, 0], Y[:, 2])

    single = SensingConfig(w=config.w, coeffs=coeffs[:1], stage_index=1)
    Y1 = collect_stage(scene, single, grid, geom, unit_pilots(1, 5), NoiseModel.noiseless(), None)
    H = channel_matrix(scene, coeffs[0], grid, geom)
    np.testing.assert_allclose(Y1[:, 0], observe(config.w, H, np.ones(5), NoiseModel.noiseless(), None))


def test_measurement_model_matches_reference():
    grid = _grid(m=6)
    geom = upa_geometry(2, 2, 0.5, grid.wavelength)
    spec = BasisSpec(1)
    rng = np.random.default_rng(4)
    scenes = [scene_from_position(rng.uniform(-30, 30, 2), AP, 3, rng) for _ in range(3)]
    coeffs = rng.standard_normal((3, 2, 4, 4))
    w = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    pilots = np.exp(1j * rng.uniform(0, 2 * np.pi, (2, 6)))

    model = MeasurementModel(scenes, grid, geom, spec)
    y_re, y_im = model.observe_stage(Tensor(w.real), Tensor(w.imag), Tensor(coeffs), pilots, None, 0.0)
    for i, scene in enumerate(scenes):
        config = SensingConfig(w=w[i], coeffs=coeffs[i], stage_index=1)
        Y = collect_stage(scene, config, grid, geom, pilots, NoiseModel.noiseless(), None)
        np.testing.assert_allclose(y_re.data[i] + 1j * y_im.data[i], Y.T, atol=1e-12)


def test_measurement_model_noise_scaling():
    grid = _grid(m=4)
    geom = upa_geometry(1, 1, 0.5, grid.wavelength)
    scenes = [scene_from_position([1.0, 2.0], AP, 1, np.random.default_rng(0))]
    model = MeasurementModel(scenes, grid, geom, BasisSpec(0))
    draws = np.ones((1, 1, 4, 2))
    zero = Tensor(np.zeros((1, 1)))
    y_re, y_im = model.observe_stage(zero, zero, Tensor(np.ones((1, 1, 1, 1))), unit_pilots(1, 4), draws, 2.0)
    np.testing.assert_allclose(y_re.data, np.sqrt(2.0))
    np.testing.assert_allclose(y_im.data, np.sqrt(2.0))


def test_measurement_model_needs_equal_path_counts():
    grid = _grid()
    geom = upa_geometry(1, 1, 0.5, grid.wavelength)
    rng = np.random.default_rng(0)
    scenes = [scene_from_position([1.0, 1.0], AP, 1, rng), scene_from_position([2.0, 1.0], AP, 2, rng)]
    with pytest.raises(ShapeError):
        MeasurementModel(scenes, grid, geom, BasisSpec(0))


def test_channel_is_additive_over_paths():
    grid = _grid(m=8)
    geom = upa_geometry(2, 3, 0.5, grid.wavelength)
    rng = np.random.default_rng(12)
    scene = scene_from_position([12.0, -7.0], AP, 4, rng)
    coeffs = rng.standard_normal((geom.n_elements, BasisSpec(2).size))

    def part(paths):
        return MultipathScene(ue_position=scene.ue_position, ap_position=AP, paths=paths)

    full = channel_matrix(scene, coeffs, grid, geom)
    split = channel_matrix(part(scene.paths[:2]), coeffs, grid, geom) + channel_matrix(
        part(scene.paths[2:]), coeffs, grid, geom
    )
    np.testing.assert_allclose(full, split, atol=1e-13)


def test_subcarrier_ratio_depends_only_on_delay():
    grid = _grid(m=6)
    geom = upa_geometry(2, 2, 0.5, grid.wavelength)
    tau = 4.2e-8
    scene = _single_path_scene(alpha=0.9 * np.exp(1.1j), tau=tau, direction=Direction(0.7, 2.0))
    rng = np.random.default_rng(13)
    expected = np.exp(-2j * np.pi * tau * np.arange(6) * grid.subcarrier_spacing)
    for _ in range(3):
        H = channel_matrix(scene, rng.standard_normal((4, BasisSpec(1).size)), grid, geom)
        np.testing.assert_allclose(H / H[:, :1], np.tile(expected, (4, 1)), atol=1e-10)


def test_observation_power_gradient_wrt_patterns():
    grid = _grid(m=5)
    geom = upa_geometry(2, 2, 0.5, grid.wavelength)
    rng = np.random.default_rng(14)
    scenes = [scene_from_position(rng.uniform(-30, 30, 2), AP, 2, rng) for _ in range(2)]
    model = MeasurementModel(scenes, grid, geom, BasisSpec(1))
    w = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    coeffs = Parameter("coeffs", rng.standard_normal((2, 2, 4, 4)))

    def closure():
        y_re, y_im = model.observe_stage(Tensor(w.real), Tensor(w.imag), coeffs, unit_pilots(2, 5), None, 0.0)
        return (y_re * y_re + y_im * y_im).sum()

    report = grad_check(closure, [coeffs], coords_per_param=None)
    assert report.checked == coeffs.size
    assert report.passed(1e-6)
