import csv
import json
import os

import numpy as np
import pytest

from src.autodiff import Parameter, Tensor, recording
from src.channel import SimulationContext
from src.errors import ConfigurationError, GenerationError, ShapeError
from src.training import (
    CHECKPOINT_SUBDIR,
    REPORT_FILE,
    Dataset,
    Trainer,
    build_policy,
    generate_dataset,
    generate_sample,
    load_dataset,
    parameter_hash,
    restore_checkpoint,
    split_dataset,
    stage_rmse,
    stage_weights,
    train,
    weighted_mse,
)
from src.utils import Stream, file_sha256


def test_weighted_mse_example():
    estimates = [Tensor([[1.0, 1.0]]), Tensor([[2.0, 2.0]])]
    loss = weighted_mse(estimates, [[0.0, 0.0]], [0.5, 0.5])
    assert loss.item() == pytest.approx(5.0)
    loss = weighted_mse([Tensor([[1.0, 1.0]]), Tensor([[2.0, 0.0]])], [[0.0, 0.0]], [0.5, 0.5])
    assert loss.item() == pytest.approx(3.0)


def test_weighted_mse_shapes():
    with pytest.raises(ShapeError):
        weighted_mse([Tensor([[0.0, 0.0]])], [[0.0, 0.0]], [0.5, 0.5])
    with pytest.raises(ShapeError):
        weighted_mse([Tensor([[0.0, 0.0, 0.0]])], [[0.0, 0.0]], [1.0])


def test_weighted_mse_gradient():
    estimate = Parameter("p", np.array([[1.0, -2.0]]))
    with recording() as tape:
        loss = weighted_mse([estimate], [[0.0, 0.0]], [1.0])
    tape.backward(loss)
    np.testing.assert_allclose(estimate.grad, [[2.0, -4.0]])


def test_stage_weights():
    np.testing.assert_allclose(stage_weights(3), [1 / 6, 2 / 6, 3 / 6])
    np.testing.assert_allclose(stage_weights(2, [0.0, 2.0]), [0.0, 1.0])
    with pytest.raises(ConfigurationError):
        stage_weights(2, [2.0, 1.0])
    with pytest.raises(ConfigurationError):
        stage_weights(2, [0.0, 0.0])
    with pytest.raises(ConfigurationError):
        stage_weights(3, [1.0, 2.0])


def test_stage_rmse():
    truth = np.zeros((2, 2))
    estimates = np.array([[[3.0, 4.0]], [[-3.0, 4.0]]])
    np.testing.assert_allclose(stage_rmse(estimates, truth), [5.0])
    perm = np.array([1, 0])
    np.testing.assert_allclose(stage_rmse(estimates[perm], truth[perm]), [5.0])
    with pytest.raises(ShapeError):
        stage_rmse(estimates, np.zeros((3, 2)))


def test_generate_dataset_is_reproducible(tiny_config, tmp_path):
    a = generate_dataset(tiny_config, str(tmp_path / "a.jsonl"), seed=7)
    b = generate_dataset(tiny_config, str(tmp_path / "b.jsonl"), seed=7)
    c = generate_dataset(tiny_config, str(tmp_path / "c.jsonl"), seed=8)
    assert file_sha256(a) == file_sha256(b)
    assert file_sha256(a) != file_sha256(c)
    with open(a) as f:
        records = [json.loads(line) for line in f]
    assert len(records) == tiny_config.train.sample_count
    assert [r["index"] for r in records] == list(range(len(records)))
    assert all(len(r["paths"]) == tiny_config.system.n_paths for r in records)


def test_load_dataset_round_trip(tiny_config, tmp_path):
    path = generate_dataset(tiny_config, str(tmp_path / "data.jsonl"), seed=3)
    dataset = load_dataset(path, tiny_config)
    context = SimulationContext.from_system(tiny_config.system)
    assert dataset.seed == 3
    np.testing.assert_allclose(dataset.positions[4], generate_sample(context, 3, 4).ue_position)


def test_load_dataset_errors(tiny_config, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"ue": [0, 0]}\n')
    with pytest.raises(GenerationError):
        load_dataset(str(bad), tiny_config)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(GenerationError):
        load_dataset(str(empty), tiny_config)
    path = generate_dataset(tiny_config, str(tmp_path / "data.jsonl"), seed=0)
    with pytest.raises(ConfigurationError):
        load_dataset(path, tiny_config.with_updates("system", n_paths=3))


def test_positions_are_uniform_over_region(tiny_config):
    context = SimulationContext.from_system(tiny_config.system)
    positions = np.stack([generate_sample(context, 11, i).ue_position for i in range(10_000)])
    R = tiny_config.system.region_half_width
    assert np.all(np.abs(positions) <= R)
    np.testing.assert_allclose(positions.mean(axis=0), 0.0, atol=0.15)
    np.testing.assert_allclose(positions.var(axis=0), R ** 2 / 3.0, rtol=0.05)


def test_split_dataset(tiny_config):
    context = SimulationContext.from_system(tiny_config.system)
    dataset = Dataset(scenes=[generate_sample(context, 0, i) for i in range(8)], seed=0)
    train_part, val_part = split_dataset(dataset, 0.75)
    assert (len(train_part), len(val_part)) == (6, 2)
    with pytest.raises(ConfigurationError):
        split_dataset(dataset, 0.99)


def _tiny_dataset(run_config, count=8, seed=0):
    context = SimulationContext.from_system(run_config.system)
    return Dataset(scenes=[generate_sample(context, seed, i) for i in range(count)], seed=seed)


def test_zero_learning_rate_leaves_parameters(tiny_config):
    config = tiny_config.with_updates("train", learning_rate=0.0)
    trainer = Trainer(config, seed=0)
    before = parameter_hash(trainer.policy)
    loss = trainer.run_epoch(_tiny_dataset(config), epoch=1)
    assert np.isfinite(loss)
    assert parameter_hash(trainer.policy) == before
    assert trainer.steps == 2


def test_training_is_deterministic(tiny_config):
    dataset = _tiny_dataset(tiny_config)
    hashes = []
    for _ in range(2):
        trainer = Trainer(tiny_config, seed=4)
        trainer.run_epoch(dataset, epoch=1)
        hashes.append(parameter_hash(trainer.policy))
    assert hashes[0] == hashes[1]
    assert hashes[0] != parameter_hash(build_policy(tiny_config, 4))


def test_fit_writes_checkpoint_and_report(tiny_config, tmp_path):
    path = generate_dataset(tiny_config, str(tmp_path / "data.jsonl"), seed=0)
    report = train(tiny_config, path, str(tmp_path / "run"), seed=0)
    assert report.epochs == tiny_config.train.epochs
    assert 1 <= report.best_epoch <= report.epochs

    with open(tmp_path / "run" / REPORT_FILE, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["epoch", "train_loss", "val_rmse_stage_1", "val_rmse_stage_2", "seconds"]
    assert len(rows) == report.epochs + 1

    model = restore_checkpoint(str(tmp_path / "run" / CHECKPOINT_SUBDIR))
    assert model.method == "proposed"
    assert model.run_config.config_hash() == tiny_config.config_hash()
    assert model.manifest["epoch"] == report.best_epoch
    assert model.optimizer.t == model.manifest["steps"]


def test_restored_policy_reproduces_estimates(tiny_config, tmp_path):
    trainer = Trainer(tiny_config, seed=1)
    dataset = _tiny_dataset(tiny_config)
    trainer.run_epoch(dataset, epoch=1)
    trainer.save(str(tmp_path / "ckpt"))
    model = restore_checkpoint(str(tmp_path / "ckpt"))
    assert parameter_hash(model.policy) == parameter_hash(trainer.policy)
    np.testing.assert_allclose(model.optimizer.m["lstm.bias"], trainer.optimizer.m["lstm.bias"])


def test_validation_leaves_parameters(tiny_config):
    trainer = Trainer(tiny_config, seed=2)
    before = parameter_hash(trainer.policy)
    first = trainer.validate(_tiny_dataset(tiny_config, count=4, seed=5))
    second = trainer.validate(_tiny_dataset(tiny_config, count=4, seed=5))
    assert parameter_hash(trainer.policy) == before
    assert trainer.optimizer.t == 0
    np.testing.assert_array_equal(first, second)


def test_one_step_reaches_initial_config(desk_config):
    trainer = Trainer(desk_config, seed=0)
    scenes = _tiny_dataset(desk_config, count=4).scenes
    trainer.step(scenes, [(0, Stream.TRAIN_NOISE, 1, i) for i in range(len(scenes))])
    assert np.linalg.norm(trainer.policy.initial.grad) > 0.0
    assert trainer.optimizer.t == 1


def _fixed_batch_losses(run_config, steps, count=64, seed=0):
    """Loss of every step when the same samples are revisited with fresh noise."""
    trainer = Trainer(run_config, seed=seed)
    scenes = _tiny_dataset(run_config, count=count, seed=seed).scenes
    losses = []
    for step in range(steps):
        keys = [(seed, Stream.TRAIN_NOISE, step, i) for i in range(count)]
        losses.append(trainer.step(scenes, keys, epoch=step))
    return np.array(losses)


@pytest.mark.slow
@pytest.mark.parametrize("method, reduction", [("proposed", 0.5), ("digital_only", 0.3)])
def test_fixed_batch_loss_drops(desk_config, method, reduction):
    config = desk_config.for_method(method).with_updates("train", learning_rate=3e-3)
    losses = _fixed_batch_losses(config, steps=200)
    assert np.all(np.isfinite(losses))
    assert losses[-10:].mean() <= (1.0 - reduction) * losses[0]


@pytest.mark.slow
def test_training_reduces_error(tiny_config, tmp_path):
    config = tiny_config.with_updates("train", sample_count=200, split=0.8, epochs=30, batch_size=16)
    path = generate_dataset(config, str(tmp_path / "data.jsonl"), seed=0)
    report = train(config, path, str(tmp_path / "run"), seed=0)
    assert min(r[-1] for r in report.val_rmse) < report.val_rmse[0][-1]
    assert os.path.exists(tmp_path / "run" / CHECKPOINT_SUBDIR / "manifest.json")
