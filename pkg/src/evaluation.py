"""
Baselines, RMSE sweeps and beampattern export.

All methods are evaluated on the same scenes with the same noise substreams
(seed, Stream.EVAL_NOISE, sample index), so differences between methods
are not noise draws. Every table is written with a `.meta.json` sidecar
holding the config hash and the seeds.
"""
import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from src.antenna_array import Direction, beampattern, halfpower_fraction, sphere_grid, write_beampattern_csv
from src.channel import MultipathScene, SimulationContext
from src.errors import ConfigurationError
from src.logger import get_logger
from src.policy import run_episode
from src.training import (
    CHECKPOINT_SUBDIR,
    Dataset,
    TrainedModel,
    load_dataset,
    predict,
    restore_checkpoint,
    split_dataset,
    stage_rmse,
    train,
)
from src.utils import Stream, worker_count
from src.validator import RunConfig

logger = get_logger("evaluation")


@dataclass
class EvalResult:
    method: str
    seeds: list[int]
    stage_rmse: list[float] = field(default_factory=list)
    snr_rmse: dict[float, float] = field(default_factory=dict)
    allocation_rmse: dict[tuple[int, int], float] = field(default_factory=dict)

    @property
    def final_rmse(self) -> float:
        return self.stage_rmse[-1]


def _check_dims(model: TrainedModel, dataset: Dataset):
    counts = {scene.n_paths for scene in dataset.scenes}
    if counts != {model.run_config.system.n_paths}:
        raise ConfigurationError(
            f"dataset path counts {sorted(counts)} do not match the checkpoint's n_paths="
            f"{model.run_config.system.n_paths}"
        )


def eval_rmse(
    model: TrainedModel,
    dataset: Dataset,
    seeds: Sequence[int],
    snr_db: float | None = None,
) -> NDArray[np.float64]:
    """Per-stage RMSE, averaged over the evaluation seeds; nothing is recorded."""
    _check_dims(model, dataset)
    if not seeds:
        raise ConfigurationError("at least one evaluation seed is required")
    context = SimulationContext.from_system(model.run_config.system, snr_db=snr_db)
    truth = dataset.positions

    def one_seed(seed: int) -> NDArray[np.float64]:
        keys = [(seed, Stream.EVAL_NOISE, i) for i in range(len(dataset))]
        estimates = predict(model.policy, context, dataset.scenes, keys, model.run_config.train.batch_size)
        return stage_rmse(estimates, truth)

    with ThreadPoolExecutor(max_workers=worker_count(len(seeds))) as pool:
        per_seed = list(pool.map(one_seed, seeds))
    return np.mean(per_seed, axis=0)


def train_method(
    run_config: RunConfig, method: str, dataset_path: str, out_dir: str, seed: int | None = None
) -> str:
    """Train `method` on the dataset; returns the checkpoint directory."""
    config = run_config.for_method(method)
    train(config, dataset_path, out_dir, seed=seed)
    return os.path.join(out_dir, CHECKPOINT_SUBDIR)


def baseline_digital_only(run_config: RunConfig, dataset_path: str, out_dir: str, seed: int | None = None) -> str:
    """Same pipeline with every pattern frozen to the isotropic e1."""
    return train_method(run_config, "digital_only", dataset_path, out_dir, seed)


def baseline_one_shot(run_config: RunConfig, dataset_path: str, out_dir: str, seed: int | None = None) -> str:
    """A single stage spending the whole pilot budget, digital combiner only."""
    return train_method(run_config, "one_shot", dataset_path, out_dir, seed)


def train_or_load(
    run_config: RunConfig, method: str, dataset_path: str, out_dir: str, seed: int | None = None
) -> TrainedModel:
    checkpoint_dir = os.path.join(out_dir, CHECKPOINT_SUBDIR)
    if os.path.exists(os.path.join(checkpoint_dir, "manifest.json")):
        logger.info(f"Reusing checkpoint {checkpoint_dir}")
        return restore_checkpoint(checkpoint_dir)
    return restore_checkpoint(train_method(run_config, method, dataset_path, out_dir, seed))


def write_table(path: str, header: Sequence[str], rows: Sequence[Sequence], config_hash: str, seeds: Sequence[int]):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
    with open(path + ".meta.json", "w", encoding="utf-8") as f:
        json.dump({"config_hash": config_hash, "seeds": list(seeds), "rows": len(rows)}, f, indent=2)
    logger.info(f"Wrote {len(rows)} rows to {path}")


def evaluate_methods(models: dict[str, TrainedModel], dataset: Dataset, seeds: Sequence[int]) -> list[EvalResult]:
    return [
        EvalResult(method=method, seeds=list(seeds), stage_rmse=[float(r) for r in eval_rmse(model, dataset, seeds)])
        for method, model in models.items()
    ]


def stage_table(results: Sequence[EvalResult]) -> list[tuple]:
    """Rows (stage, method, rmse)."""
    return [(t, result.method, rmse) for result in results for t, rmse in enumerate(result.stage_rmse, start=1)]


def sweep_snr(
    models: dict[str, TrainedModel], dataset: Dataset, snr_list: Sequence[float], seeds: Sequence[int]
) -> list[EvalResult]:
    """Final-stage RMSE per SNR point and method; only sigma changes between points."""
    results = [EvalResult(method=method, seeds=list(seeds)) for method in models]
    for snr_db in snr_list:
        for result, model in zip(results, models.values()):
            rmse = eval_rmse(model, dataset, seeds, snr_db=snr_db)
            result.snr_rmse[float(snr_db)] = float(rmse[-1])
            logger.info(f"SNR {snr_db} dB, {result.method}: final RMSE {rmse[-1]:.4g}")
    return results


def snr_table(results: Sequence[EvalResult]) -> list[tuple]:
    """Rows (snr_db, method, rmse), grouped by SNR point in sweep order."""
    points = list(dict.fromkeys(snr for result in results for snr in result.snr_rmse))
    return [(snr, r.method, r.snr_rmse[snr]) for snr in points for r in results if snr in r.snr_rmse]


def check_allocations(budget: int, allocations: Sequence[tuple[int, int]]):
    for stages, per_stage in allocations:
        if stages < 1 or per_stage < 1 or stages * per_stage != budget:
            raise ConfigurationError(f"allocation ({stages}, {per_stage}) does not spend the budget {budget}")


def sweep_budget(
    run_config: RunConfig,
    dataset_path: str,
    out_dir: str,
    budget: int,
    allocations: Sequence[tuple[int, int]],
    methods: Sequence[str],
    train_seeds: Sequence[int],
    eval_seeds: Sequence[int],
) -> list[EvalResult]:
    """Final RMSE per (stages, pilots_per_stage) and method, averaged over training seeds."""
    check_allocations(budget, allocations)
    results = {method: EvalResult(method=method, seeds=list(train_seeds)) for method in methods}
    for stages, per_stage in allocations:
        allocated = run_config.with_allocation(stages, per_stage)
        dataset = split_dataset(load_dataset(dataset_path, allocated), allocated.train.split)[1]
        for method in methods:
            finals = []
            for seed in train_seeds:
                run_dir = os.path.join(out_dir, f"T{stages}_L{per_stage}", method, f"seed{seed}")
                model = train_or_load(allocated, method, dataset_path, run_dir, seed)
                finals.append(float(eval_rmse(model, dataset, eval_seeds)[-1]))
            results[method].allocation_rmse[(stages, per_stage)] = float(np.mean(finals))
            logger.info(f"Allocation ({stages}, {per_stage}), {method}: final RMSE {np.mean(finals):.4g}")
    return list(results.values())


def allocation_table(results: Sequence[EvalResult]) -> list[tuple]:
    """Rows (stages, pilots_per_stage, method, rmse), grouped by allocation."""
    allocations = list(dict.fromkeys(a for result in results for a in result.allocation_rmse))
    return [(*a, r.method, r.allocation_rmse[a]) for a in allocations for r in results if a in r.allocation_rmse]


@dataclass
class BeampatternExport:
    files: list[str]
    halfpower: list[float]
    sidecar: str


def export_beampatterns(
    model: TrainedModel,
    scene: MultipathScene,
    out_dir: str,
    grid_resolution: tuple[int, int] = (32, 64),
    seed: int = 0,
    average: bool = True,
    prefix: str = "beampattern",
    in_db: bool = False,
) -> BeampatternExport:
    """One CSV per stage (per substage when average=False) plus a JSON sidecar of true paths.

    With in_db the CSVs hold dB relative to each pattern's peak; the
    -3 dB fractions are always computed on linear power.
    """
    context = SimulationContext.from_system(model.run_config.system)
    result = run_episode(
        model.policy, context.measurement([scene]), context.noise,
        noise_keys=[(seed, Stream.EVAL_NOISE, 0)], pilots=context.pilots, record=True,
    )
    grid = sphere_grid(*grid_resolution)
    os.makedirs(out_dir, exist_ok=True)
    files, fractions = [], []
    for config in result.configs:
        sample = config.sample(0)
        power = beampattern(sample.w, sample.coeffs, context.geom, grid, average=average)
        if average:
            path = os.path.join(out_dir, f"{prefix}_stage_{sample.stage_index}.csv")
            write_beampattern_csv(path, grid, power, in_db=in_db)
            files.append(path)
            fractions.append(halfpower_fraction(power, grid))
        else:
            for l, row in enumerate(power, start=1):
                path = os.path.join(out_dir, f"{prefix}_stage_{sample.stage_index}_substage_{l}.csv")
                write_beampattern_csv(path, grid, row, in_db=in_db)
                files.append(path)
            fractions.append(halfpower_fraction(power.mean(axis=0), grid))
    sidecar = os.path.join(out_dir, f"{prefix}_paths.json")
    with open(sidecar, "w", encoding="utf-8") as f:
        json.dump({
            "method": model.method,
            "config_hash": model.run_config.config_hash(),
            "seed": seed,
            "ue": [float(v) for v in scene.ue_position],
            "paths": [
                {"theta": p.direction.theta, "phi": p.direction.phi, "tau": p.tau, "gain": float(abs(p.alpha))}
                for p in scene.paths
            ],
            "halfpower_fraction": fractions,
            "estimates": result.estimates_array()[0].tolist(),
        }, f, indent=2)
    logger.info(f"Exported {len(files)} beampattern files to {out_dir}")
    return BeampatternExport(files=files, halfpower=fractions, sidecar=sidecar)


def peak_direction(power: NDArray[np.float64], thetas: NDArray[np.float64], phis: NDArray[np.float64]) -> Direction:
    k = int(np.argmax(power))
    return Direction(float(thetas[k]), float(phis[k]))
