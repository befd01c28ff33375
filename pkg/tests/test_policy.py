from dataclasses import replace

import numpy as np
import pytest

from src.autodiff import Tensor
from src.channel import NoiseModel, SimulationContext
from src.cli import check_gradients
from src.errors import ConfigurationError, DegenerateInputError, ShapeError
from src.policy import (
    ActiveSensingPolicy,
    PolicyConfig,
    PolicyState,
    observation_tensors,
    project_combiner,
    run_episode,
)
from src.training import build_policy, generate_sample


def _episode_inputs(run_config, count=3, seed=0):
    context = SimulationContext.from_system(run_config.system)
    scenes = [generate_sample(context, seed, i) for i in range(count)]
    return context, scenes


def test_policy_config_sizes(tiny_config):
    config = PolicyConfig.from_run_config(tiny_config)
    assert config.pattern_size == 4 * 2 * 4
    assert config.config_size == 2 * 4 + 32
    digital = PolicyConfig.from_run_config(tiny_config.for_method("digital_only"))
    assert not digital.reconfigurable
    assert digital.config_size == 8
    assert PolicyConfig.from_dict(config.to_dict()) == config


def test_policy_config_rejects_wide_embedding(tiny_config):
    config = PolicyConfig.from_run_config(tiny_config)
    with pytest.raises(ConfigurationError):
        replace(config, embed_dim=16)
    with pytest.raises(ConfigurationError):
        replace(config, heads=3)


def test_project_combiner_rescales_to_budget():
    w_re, w_im = project_combiner(Tensor([[2.0, 0.0]]), Tensor([[0.0, 0.0]]), 1.0)
    np.testing.assert_allclose(w_re.data, [[1.0, 0.0]])
    w_re, w_im = project_combiner(Tensor([[1.0, 2.0]]), Tensor([[-1.0, 0.5]]), 2.5)
    assert float(np.sum(w_re.data ** 2 + w_im.data ** 2)) == pytest.approx(2.5)
    with pytest.raises(DegenerateInputError):
        project_combiner(Tensor([[0.0, 0.0]]), Tensor([[0.0, 0.0]]), 1.0)


def test_next_config_is_always_feasible(tiny_config):
    policy = build_policy(tiny_config, seed=3)
    c = policy.config
    rng = np.random.default_rng(8)
    for _ in range(20):
        state = PolicyState(h=Tensor(rng.standard_normal((5, c.lstm_hidden)) * 3), c=Tensor(np.zeros((5, c.lstm_hidden))))
        config = policy.next_config(state, stage_index=2)
        power = np.sum(config.w_re.data ** 2 + config.w_im.data ** 2, axis=-1)
        np.testing.assert_allclose(power, c.p_max, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(config.coeffs.data, axis=-1), 1.0, atol=1e-12)
        assert config.coeffs.shape == (5, c.substages, c.n_antennas, c.basis_size)


def test_digital_only_patterns_are_isotropic(tiny_config):
    policy = build_policy(tiny_config.for_method("digital_only"), seed=0)
    coeffs = policy.initial_config(batch=2).coeffs
    expected = np.zeros(policy.config.basis_size)
    expected[0] = 1.0
    np.testing.assert_allclose(coeffs, np.broadcast_to(expected, coeffs.shape))


def test_project_rejects_wrong_width(tiny_config):
    policy = build_policy(tiny_config, seed=0)
    with pytest.raises(ShapeError):
        policy.project(Tensor(np.ones((1, 7))), stage_index=1)


def test_zero_parameters_keep_state_at_origin(tiny_config):
    policy = build_policy(tiny_config, seed=0)
    for p in policy.lstm.parameters():
        p.data = np.zeros_like(p.data)
    state = PolicyState.zeros(2, policy.config.lstm_hidden)
    updated = policy.update_state(Tensor(np.ones((2, policy.config.embed_dim))), state)
    np.testing.assert_allclose(updated.h.data, 0.0)


def test_observation_tensors_layout():
    Y = np.arange(6).reshape(3, 2) + 1j * np.arange(6).reshape(3, 2)
    y_re, y_im = observation_tensors(Y)
    assert y_re.shape == (1, 2, 3)
    np.testing.assert_allclose(y_re.data[0], Y.real.T)
    with pytest.raises(ShapeError):
        observation_tensors(np.zeros(3))


def test_single_stage_episode(tiny_config):
    config = tiny_config.with_allocation(1, 4)
    context, scenes = _episode_inputs(config)
    policy = build_policy(config, seed=0)
    result = run_episode(policy, context.measurement(scenes), NoiseModel.noiseless(), pilots=context.pilots, record=True)
    assert result.stages == 1
    assert result.estimates_array().shape == (3, 1, 2)
    assert len(result.configs) == 1 and result.configs[0].stage_index == 1


def test_episode_is_deterministic(tiny_config):
    context, scenes = _episode_inputs(tiny_config)
    policy = build_policy(tiny_config, seed=1)
    keys = [(9, 4, i) for i in range(len(scenes))]
    first = run_episode(policy, context.measurement(scenes), context.noise, keys, context.pilots).estimates_array()
    second = run_episode(policy, context.measurement(scenes), context.noise, keys, context.pilots).estimates_array()
    np.testing.assert_array_equal(first, second)


def test_estimates_do_not_depend_on_later_stages(tiny_config):
    longer = tiny_config.with_updates("system", stages=3)
    context, scenes = _episode_inputs(longer)
    policy = build_policy(longer, seed=2)
    truncated = ActiveSensingPolicy(replace(policy.config, stages=2), np.random.default_rng(0))
    truncated.load_state_dict(policy.state_dict())
    keys = [(5, 4, i) for i in range(len(scenes))]
    full = run_episode(policy, context.measurement(scenes), context.noise, keys, context.pilots).estimates_array()
    short = run_episode(truncated, context.measurement(scenes), context.noise, keys, context.pilots).estimates_array()
    assert full.shape[1] == 3
    np.testing.assert_allclose(full[:, :2], short, atol=1e-12)


def test_episode_validates_inputs(tiny_config):
    context, scenes = _episode_inputs(tiny_config)
    policy = build_policy(tiny_config, seed=0)
    with pytest.raises(ConfigurationError):
        run_episode(policy, context.measurement(scenes), context.noise, noise_keys=None)
    other = tiny_config.with_updates("system", n_subcarriers=5)
    other_context, other_scenes = _episode_inputs(other)
    with pytest.raises(ConfigurationError):
        run_episode(policy, other_context.measurement(other_scenes), NoiseModel.noiseless())


def test_unrolled_episode_gradients():
    passed, detail = check_gradients(seed=0, coords_per_param=3)
    assert passed, detail
