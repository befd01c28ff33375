"""
Dataset generation, the stage-weighted MSE loss and the end-to-end training loop.

Seed layout (all substreams of one global seed, tags from src.utils.Stream):
    (seed, SCENE, i)                   scene of dataset sample i
    (seed, INIT)                       policy initialization
    (seed, TRAIN_NOISE, epoch, i)      training noise of sample i in an epoch
    (seed, SHUFFLE, epoch)             batch shuffling
    (seed, VALIDATION_NOISE, i)        validation noise of sample i
"""
import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from src.autodiff import Adam, Tensor, clip_grad_norm, recording
from src.autodiff.checkpoint import load_checkpoint, save_checkpoint
from src.channel import MultipathScene, SimulationContext
from src.errors import ConfigurationError, GenerationError, NonFiniteError, ShapeError, TrainingDivergedError
from src.logger import get_logger
from src.policy import ActiveSensingPolicy, PolicyConfig, run_episode
from src.utils import Stream, sha256_of, substream, worker_count
from src.validator import RunConfig, save_run_config, validate_run_config

logger = get_logger("training")

CHECKPOINT_SUBDIR = "checkpoint"
REPORT_FILE = "train_report.csv"
CONFIG_ECHO_FILE = "config.json"


def stage_weights(stages: int, weights: Sequence[float] | None = None) -> NDArray[np.float64]:
    """beta_t normalized to sum 1; linear t / sum(t) unless given."""
    if stages < 1:
        raise ConfigurationError(f"need at least one stage, got {stages}")
    raw = np.arange(1, stages + 1, dtype=np.float64) if weights is None else np.asarray(weights, dtype=np.float64)
    if raw.shape != (stages,):
        raise ConfigurationError(f"{raw.size} stage weights for {stages} stages")
    if np.any(raw < 0) or np.any(np.diff(raw) < 0) or not raw.sum() > 0:
        raise ConfigurationError(f"stage weights must be nonnegative, nondecreasing and not all zero: {raw}")
    return raw / raw.sum()


def weighted_mse(estimates: Sequence[Tensor], truth, betas: Sequence[float]) -> Tensor:
    """sum_t beta_t ||p_t - p||^2, averaged over the batch. Betas are used as given."""
    truth = np.asarray(truth, dtype=np.float64)
    if len(estimates) != len(betas):
        raise ShapeError(f"{len(estimates)} stage estimates but {len(betas)} weights")
    if truth.ndim != 2 or truth.shape[1] != 2:
        raise ShapeError(f"truth must be (batch, 2), got {truth.shape}")
    loss = None
    for estimate, beta in zip(estimates, betas):
        if estimate.shape != truth.shape:
            raise ShapeError(f"estimate {estimate.shape} does not match truth {truth.shape}")
        diff = estimate - truth
        term = (diff * diff).sum(axis=-1) * float(beta)
        loss = term if loss is None else loss + term
    return loss.mean()


@dataclass
class Dataset:
    scenes: list[MultipathScene]
    seed: int

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def positions(self) -> NDArray[np.float64]:
        return np.stack([scene.ue_position[:2] for scene in self.scenes])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(scenes=[self.scenes[i] for i in indices], seed=self.seed)


def generate_sample(context: SimulationContext, seed: int, index: int) -> MultipathScene:
    rng = substream(seed, Stream.SCENE, index)
    R = context.region_half_width
    position = rng.uniform(-R, R, size=2)
    return context.scene(position, rng)


def generate_dataset(run_config: RunConfig, path: str, seed: int | None = None) -> str:
    """Write sample_count scenes as JSON Lines; identical bytes for identical seeds."""
    seed = run_config.train.seed if seed is None else seed
    context = SimulationContext.from_system(run_config.system)
    count = run_config.train.sample_count

    def build(index: int) -> str:
        record = generate_sample(context, seed, index).to_record(seed)
        record["index"] = index
        return json.dumps(record, sort_keys=True)

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    # map preserves submission order regardless of completion order
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        lines = list(pool.map(build, range(count)))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")
    logger.info(f"Generated {count} samples with seed {seed} -> {path}")
    return path


def load_dataset(path: str, run_config: RunConfig) -> Dataset:
    context = SimulationContext.from_system(run_config.system)
    scenes, seed = [], None
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                scenes.append(MultipathScene.from_record(record, context.ap_position))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise GenerationError(f"{path}:{line_no}: malformed sample ({exc})") from exc
            seed = record.get("seed", seed)
    if not scenes:
        raise GenerationError(f"{path}: dataset is empty")
    path_counts = {scene.n_paths for scene in scenes}
    if path_counts != {run_config.system.n_paths}:
        raise ConfigurationError(
            f"dataset path counts {sorted(path_counts)} do not match system.n_paths={run_config.system.n_paths}"
        )
    return Dataset(scenes=scenes, seed=int(seed or 0))


def split_dataset(dataset: Dataset, split: float) -> tuple[Dataset, Dataset]:
    """Leading fraction for training, the rest for validation."""
    cut = int(round(split * len(dataset)))
    if cut < 1 or cut >= len(dataset):
        raise ConfigurationError(f"split {split} leaves an empty part of {len(dataset)} samples")
    return dataset.subset(range(cut)), dataset.subset(range(cut, len(dataset)))


def predict(
    policy: ActiveSensingPolicy,
    context: SimulationContext,
    scenes: Sequence[MultipathScene],
    noise_keys: Sequence[tuple],
    batch_size: int = 64,
) -> NDArray[np.float64]:
    """(n, T, 2) stage estimates, computed without recording."""
    chunks = []
    for start in range(0, len(scenes), batch_size):
        part = scenes[start:start + batch_size]
        result = run_episode(
            policy, context.measurement(part), context.noise,
            noise_keys=noise_keys[start:start + batch_size], pilots=context.pilots,
        )
        chunks.append(result.estimates_array())
    return np.concatenate(chunks, axis=0)


def stage_rmse(estimates: NDArray[np.float64], truth: NDArray[np.float64]) -> NDArray[np.float64]:
    """sqrt(mean_i ||p_t,i - p_i||^2) for every stage t."""
    estimates = np.asarray(estimates, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimates.ndim != 3 or estimates.shape[2] != 2 or truth.shape != (estimates.shape[0], 2):
        raise ShapeError(f"estimates {estimates.shape} and truth {truth.shape} do not align")
    squared = np.sum((estimates - truth[:, None, :]) ** 2, axis=-1)
    return np.sqrt(squared.mean(axis=0))


@dataclass
class TrainReport:
    seed: int
    config: dict
    train_loss: list[float] = field(default_factory=list)
    val_rmse: list[list[float]] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def write_csv(self, path: str):
        stages = len(self.val_rmse[0]) if self.val_rmse else 0
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            stage_columns = [f"val_rmse_stage_{t}" for t in range(1, stages + 1)]
            writer.writerow(["epoch", "train_loss"] + stage_columns + ["seconds"])
            for epoch, (loss, rmse, secs) in enumerate(zip(self.train_loss, self.val_rmse, self.seconds), start=1):
                writer.writerow([epoch, f"{loss:.12g}"] + [f"{r:.12g}" for r in rmse] + [f"{secs:.3f}"])


def build_policy(run_config: RunConfig, seed: int) -> ActiveSensingPolicy:
    return ActiveSensingPolicy(PolicyConfig.from_run_config(run_config), substream(seed, Stream.INIT))


def parameter_norms(policy: ActiveSensingPolicy) -> dict[str, float]:
    return {name: float(np.linalg.norm(p.data)) for name, p in policy.named_parameters()}


def parameter_hash(policy: ActiveSensingPolicy) -> str:
    return sha256_of({name: p.data.round(15).tolist() for name, p in policy.named_parameters()})


class Trainer:
    """Single-writer training loop over one RunConfig."""

    def __init__(
        self,
        run_config: RunConfig,
        seed: int | None = None,
        context: SimulationContext | None = None,
        policy: ActiveSensingPolicy | None = None,
    ):
        self.run_config = run_config
        self.seed = run_config.train.seed if seed is None else seed
        self.context = context or SimulationContext.from_system(run_config.system)
        self.policy = policy or build_policy(run_config, self.seed)
        t = run_config.train
        self.optimizer = Adam(self.policy.parameters(), lr=t.learning_rate, beta1=t.beta1, beta2=t.beta2, eps=t.eps)
        self.betas = stage_weights(self.policy.config.stages, t.stage_weights)
        self.steps = 0

    def _diverged(self, epoch: int, batch_index: int, cause: str) -> TrainingDivergedError:
        norms = parameter_norms(self.policy)
        last = ", ".join(f"{name}={value:.3e}" for name, value in list(norms.items())[-4:])
        message = f"training diverged at epoch {epoch}, batch {batch_index} ({cause}); last parameter norms: {last}"
        logger.error(message)
        return TrainingDivergedError(message)

    def step(self, scenes: Sequence[MultipathScene], noise_keys: Sequence[tuple], epoch: int = 0, batch_index: int = 0) -> float:
        """One forward/backward/update on a batch; returns the batch loss."""
        truth = np.stack([scene.ue_position[:2] for scene in scenes])
        self.policy.zero_grad()
        try:
            with recording() as tape:
                result = run_episode(
                    self.policy, self.context.measurement(scenes), self.context.noise,
                    noise_keys=noise_keys, pilots=self.context.pilots,
                )
                loss = weighted_mse(result.estimates, truth, self.betas)
            value = loss.item()
            if not np.isfinite(value):
                raise self._diverged(epoch, batch_index, "non-finite loss")
            tape.backward(loss)
        except NonFiniteError as exc:
            raise self._diverged(epoch, batch_index, str(exc)) from exc
        clip_grad_norm(self.policy.parameters(), self.run_config.train.grad_clip)
        self.optimizer.step()
        self.steps += 1
        return value

    def run_epoch(self, train: Dataset, epoch: int) -> float:
        batch_size = self.run_config.train.batch_size
        order = substream(self.seed, Stream.SHUFFLE, epoch).permutation(len(train))
        total, count = 0.0, 0
        for batch_index, start in enumerate(range(0, len(order), batch_size)):
            indices = order[start:start + batch_size]
            scenes = [train.scenes[i] for i in indices]
            keys = [(self.seed, Stream.TRAIN_NOISE, epoch, int(i)) for i in indices]
            total += self.step(scenes, keys, epoch=epoch, batch_index=batch_index) * len(indices)
            count += len(indices)
        return total / count

    def validate(self, val: Dataset) -> NDArray[np.float64]:
        keys = [(self.seed, Stream.VALIDATION_NOISE, i) for i in range(len(val))]
        estimates = predict(self.policy, self.context, val.scenes, keys, self.run_config.train.batch_size)
        return stage_rmse(estimates, val.positions)

    def save(self, directory: str, metadata: dict | None = None) -> str:
        payload = {
            "method": self.run_config.train.method,
            "policy": self.policy.config.to_dict(),
            "config_hash": self.run_config.config_hash(),
            "seed": self.seed,
            "steps": self.steps,
        }
        payload.update(metadata or {})
        return save_checkpoint(
            directory,
            self.policy.state_dict(),
            config=self.run_config.to_dict(),
            metadata=payload,
            optimizer=self.optimizer.state_dict(),
        )

    def fit(self, train: Dataset, val: Dataset, out_dir: str) -> TrainReport:
        """Train for the configured epochs, checkpointing at the best final-stage validation RMSE."""
        os.makedirs(out_dir, exist_ok=True)
        save_run_config(self.run_config, os.path.join(out_dir, CONFIG_ECHO_FILE))
        report = TrainReport(seed=self.seed, config=self.run_config.to_dict())
        best = np.inf
        for epoch in range(1, self.run_config.train.epochs + 1):
            started = time.perf_counter()
            loss = self.run_epoch(train, epoch)
            rmse = self.validate(val)
            elapsed = time.perf_counter() - started
            report.train_loss.append(loss)
            report.val_rmse.append([float(r) for r in rmse])
            report.seconds.append(elapsed)
            logger.info(
                f"epoch {epoch}: loss {loss:.6g}, val RMSE per stage "
                f"{', '.join(f'{r:.4g}' for r in rmse)} ({elapsed:.1f}s)"
            )
            if rmse[-1] < best:
                best = float(rmse[-1])
                report.best_epoch = epoch
                self.save(
                    os.path.join(out_dir, CHECKPOINT_SUBDIR),
                    metadata={"epoch": epoch, "val_rmse": [float(r) for r in rmse]},
                )
        report.write_csv(os.path.join(out_dir, REPORT_FILE))
        return report


def train(run_config: RunConfig, dataset_path: str, out_dir: str, seed: int | None = None) -> TrainReport:
    dataset = load_dataset(dataset_path, run_config)
    train_part, val_part = split_dataset(dataset, run_config.train.split)
    logger.info(
        f"Training {run_config.train.method} on {len(train_part)} samples "
        f"({len(val_part)} validation), config {run_config.config_hash()[:12]}"
    )
    return Trainer(run_config, seed=seed).fit(train_part, val_part, out_dir)


@dataclass
class TrainedModel:
    policy: ActiveSensingPolicy
    run_config: RunConfig
    optimizer: Adam
    manifest: dict

    @property
    def method(self) -> str:
        return self.manifest.get("method", self.run_config.train.method)


def restore_checkpoint(directory: str) -> TrainedModel:
    """Rebuild the policy and its Adam state from a self-describing checkpoint."""
    checkpoint = load_checkpoint(directory)
    run_config = validate_run_config(checkpoint.config)
    if "policy" not in checkpoint.manifest:
        raise ConfigurationError(f"{directory}: checkpoint manifest lacks the policy description")
    policy = ActiveSensingPolicy(PolicyConfig.from_dict(checkpoint.manifest["policy"]), np.random.default_rng(0))
    policy.load_state_dict(checkpoint.tensors)
    t = run_config.train
    optimizer = Adam(policy.parameters(), lr=t.learning_rate, beta1=t.beta1, beta2=t.beta2, eps=t.eps)
    if checkpoint.optimizer:
        optimizer.load_state_dict(checkpoint.optimizer)
    return TrainedModel(policy=policy, run_config=run_config, optimizer=optimizer, manifest=checkpoint.manifest)
