"""
Command-line entry point.

    python run.py gen-data     --config profiles/desk.json --seed 7 --out runs/data
    python run.py train        --config ... --data runs/data/dataset.jsonl --out runs/proposed
    python run.py eval         --config ... --ckpt runs/proposed/checkpoint --out runs/eval
    python run.py sweep-snr    --config ... --ckpt A --ckpt B --out runs/snr
    python run.py sweep-budget --config ... --out runs/budget
    python run.py beampattern  --config ... --ckpt runs/proposed/checkpoint --out runs/beams
    python run.py gradcheck | selftest
    python run.py serve        --ckpt runs/proposed/checkpoint

Numbers live in the JSON config; flags carry only paths and the seed.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
import argparse
import os
import sys
import time
from typing import Sequence

import numpy as np

from src import __version__
from src.antenna_array import upa_geometry
from src.autodiff import grad_check
from src.channel import NoiseModel, OfdmGrid, SimulationContext, channel_matrix, channel_matrix_reference
from src.config import PROFILES_DIR
from src.errors import EraLocError, exit_code_for
from src.evaluation import (
    allocation_table,
    evaluate_methods,
    export_beampatterns,
    snr_table,
    stage_table,
    sweep_budget,
    sweep_snr,
    write_table,
)
from src.harmonics import BasisSpec, gram_matrix, pattern_energy, quadrature_for
from src.logger import get_logger
from src.policy import run_episode
from src.training import (
    CONFIG_ECHO_FILE,
    build_policy,
    generate_dataset,
    load_dataset,
    restore_checkpoint,
    split_dataset,
    stage_weights,
    train,
    weighted_mse,
)
from src.utils import Stream, file_sha256, substream
from src.validator import RunConfig, load_run_config, save_run_config, validate_run_config

logger = get_logger("cli")

DEFAULT_PROFILE = os.path.join(PROFILES_DIR, "desk.json")
DATASET_FILE = "dataset.jsonl"

GRAM_TOL = 1e-8
ENERGY_TOL = 1e-9
ORACLE_TOL = 1e-12
GRADCHECK_TOL = 1e-4

GRADCHECK_CONFIG = {
    "system": {
        "n_x": 2, "n_y": 2, "max_degree": 1, "n_subcarriers": 4, "substages": 2, "stages": 2,
        "n_paths": 2, "region_half_width": 5.0, "ap_height": 3.0,
    },
    "model": {"d_model": 8, "heads": 2, "embed_dim": 8, "lstm_hidden": 8, "head_hidden": 8, "ff_hidden": 8},
}


# self-test suites

def check_harmonics(seed: int = 0) -> tuple[bool, str]:
    worst_gram = 0.0
    for U in range(7):
        spec = BasisSpec(U)
        worst_gram = max(worst_gram, float(np.max(np.abs(gram_matrix(spec, quadrature_for(spec)) - np.eye(spec.size)))))
    rng = substream(seed, Stream.SELFTEST, 0)
    worst_energy = 0.0
    for _ in range(100):
        spec = BasisSpec(int(rng.integers(0, 7)))
        c = rng.standard_normal(spec.size)
        energy = pattern_energy(c, quadrature_for(spec))
        worst_energy = max(worst_energy, abs(energy - float(c @ c)))
    passed = worst_gram < GRAM_TOL and worst_energy < ENERGY_TOL
    return passed, f"max |G - I| {worst_gram:.2e}, max energy error {worst_energy:.2e}"


def check_channel_oracle(seed: int = 0, scenes: int = 200) -> tuple[bool, str]:
    rng = substream(seed, Stream.SELFTEST, 1)
    worst = 0.0
    for _ in range(scenes):
        n_x, n_y = int(rng.integers(1, 3)), int(rng.integers(1, 5))
        grid = OfdmGrid(int(rng.integers(1, 17)), 960e3, 30e9)
        geom = upa_geometry(n_x, n_y, 0.5, grid.wavelength)
        spec = BasisSpec(int(rng.integers(0, 3)))
        context = SimulationContext(
            grid=grid, geom=geom, spec=spec, noise=NoiseModel.noiseless(), p_max=1.0,
            ap_position=np.array([0.0, 0.0, 10.0]), n_paths=int(rng.integers(1, 5)),
            substages=1, region_half_width=30.0,
        )
        scene = context.scene(rng.uniform(-30.0, 30.0, size=2), rng)
        coeffs = rng.standard_normal((geom.n_elements, spec.size))
        fast = channel_matrix(scene, coeffs, grid, geom)
        slow = channel_matrix_reference(scene, coeffs, grid, geom)
        worst = max(worst, float(np.max(np.abs(fast - slow)) / max(np.max(np.abs(slow)), 1e-300)))
    return worst < ORACLE_TOL, f"max relative error {worst:.2e} over {scenes} scenes"


def check_gradients(seed: int = 0, coords_per_param: int | None = 4) -> tuple[bool, str]:
    """Finite differences over one noiseless unrolled episode at tiny dims."""
    run_config = validate_run_config(GRADCHECK_CONFIG)
    policy = build_policy(run_config, seed)
    context = SimulationContext.from_system(run_config.system)
    rng = substream(seed, Stream.SELFTEST, 2)
    scenes = [context.scene(rng.uniform(-4.0, 4.0, size=2), rng) for _ in range(2)]
    truth = np.stack([scene.ue_position for scene in scenes])
    measurement = context.measurement(scenes)
    betas = stage_weights(run_config.system.stages)

    def closure():
        result = run_episode(policy, measurement, NoiseModel.noiseless(), pilots=context.pilots)
        return weighted_mse(result.estimates, truth, betas)

    report = grad_check(closure, policy.parameters(), coords_per_param=coords_per_param, rng=rng)
    detail = f"max relative error {report.max_rel_error:.2e} over {report.checked} coordinates"
    if report.worst_parameter:
        detail += f" (worst: {report.worst_parameter}{list(report.worst_index)})"
    return report.passed(GRADCHECK_TOL), detail


def _print_result(name: str, passed: bool, detail: str, seconds: float):
    print(f"{'PASS' if passed else 'FAIL'} {name}: {detail} [{seconds:.1f}s]")


def _run_suites(suites: Sequence[tuple], seed: int) -> int:
    failed = 0
    for name, suite in suites:
        started = time.perf_counter()
        passed, detail = suite(seed)
        _print_result(name, passed, detail, time.perf_counter() - started)
        failed += not passed
    return 0 if failed == 0 else 2


# subcommands

def _load_config(args) -> RunConfig:
    return load_run_config(args.config or DEFAULT_PROFILE)


def _out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _seed(args, config: RunConfig) -> int:
    return config.train.seed if args.seed is None else args.seed


def _validation_set(args, config: RunConfig, seed: int):
    """The dataset's validation part; generated under --out when --data is absent."""
    path = args.data or generate_dataset(config, os.path.join(_out(args), DATASET_FILE), seed=seed)
    return split_dataset(load_dataset(path, config), config.train.split)[1]


def cmd_gen_data(args) -> int:
    config = _load_config(args)
    out = _out(args)
    path = generate_dataset(config, os.path.join(out, DATASET_FILE), seed=_seed(args, config))
    save_run_config(config, os.path.join(out, CONFIG_ECHO_FILE))
    print(f"{path} sha256={file_sha256(path)}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    report = train(config, args.data, _out(args), seed=_seed(args, config))
    final = report.val_rmse[report.best_epoch - 1]
    print(f"best epoch {report.best_epoch}: val RMSE per stage {', '.join(f'{r:.4g}' for r in final)}")
    return 0


def _models(paths: Sequence[str]) -> dict:
    models = {}
    for path in paths:
        model = restore_checkpoint(path)
        name = model.method if model.method not in models else f"{model.method}:{path}"
        models[name] = model
    return models


def cmd_eval(args) -> int:
    config = _load_config(args)
    seed = _seed(args, config)
    models = _models(args.ckpt)
    results = evaluate_methods(models, _validation_set(args, config, seed), config.eval.seeds)
    path = os.path.join(_out(args), "stage_rmse.csv")
    write_table(path, ["stage", "method", "rmse"], stage_table(results), config.config_hash(), config.eval.seeds)
    for result in results:
        print(f"{result.method}: {', '.join(f'{r:.4g}' for r in result.stage_rmse)}")
    return 0


def cmd_sweep_snr(args) -> int:
    config = _load_config(args)
    seed = _seed(args, config)
    results = sweep_snr(
        _models(args.ckpt), _validation_set(args, config, seed), config.eval.snr_list, config.eval.seeds
    )
    path = os.path.join(_out(args), "snr_sweep.csv")
    write_table(path, ["snr_db", "method", "rmse"], snr_table(results), config.config_hash(), config.eval.seeds)
    return 0


def cmd_sweep_budget(args) -> int:
    config = _load_config(args)
    seed = _seed(args, config)
    out = _out(args)
    data = args.data or generate_dataset(config, os.path.join(out, DATASET_FILE), seed=seed)
    methods = [m for m in config.eval.methods if m != "one_shot"] or ["proposed"]
    train_seeds = [seed + s for s in config.eval.seeds]
    results = sweep_budget(
        config, data, out, config.eval.budget, config.eval.allocations, methods, train_seeds, config.eval.seeds
    )
    write_table(
        os.path.join(out, "budget_sweep.csv"), ["stages", "pilots_per_stage", "method", "rmse"],
        allocation_table(results), config.config_hash(), train_seeds,
    )
    return 0


def cmd_beampattern(args) -> int:
    config = _load_config(args)
    seed = _seed(args, config)
    out = _out(args)
    for path in args.ckpt:
        model = restore_checkpoint(path)
        c = model.policy.config
        if (c.stages, c.substages) != (config.eval.beam_stages, config.eval.beam_substages):
            logger.warning(
                f"checkpoint runs ({c.stages}, {c.substages}) stages/substages; "
                f"eval.beam_* asks for ({config.eval.beam_stages}, {config.eval.beam_substages})"
            )
        context = SimulationContext.from_system(model.run_config.system)
        rng = substream(seed, Stream.BEAM_SCENE)
        position = [args.x, args.y] if args.x is not None and args.y is not None else rng.uniform(
            -context.region_half_width, context.region_half_width, size=2
        )
        export = export_beampatterns(
            model, context.scene(position, rng), out, tuple(config.eval.beam_grid),
            seed=seed, average=config.eval.beam_average, prefix=f"beampattern_{model.method}",
            in_db=config.eval.beam_db,
        )
        print(f"{model.method}: -3 dB solid-angle fraction per stage {', '.join(f'{f:.4f}' for f in export.halfpower)}")
    return 0


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    return _run_suites([("gradcheck", check_gradients)], seed)


def cmd_selftest(args) -> int:
    seed = 0 if args.seed is None else args.seed
    return _run_suites([
        ("harmonics-gram", check_harmonics),
        ("channel-oracle", check_channel_oracle),
        ("gradcheck", check_gradients),
    ], seed)


def cmd_serve(args) -> int:
    import uvicorn
    from src.main import app, set_model

    if args.ckpt:
        set_model(restore_checkpoint(args.ckpt[0]))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-snr": cmd_sweep_snr,
    "sweep-budget": cmd_sweep_budget,
    "beampattern": cmd_beampattern,
    "gradcheck": cmd_gradcheck,
    "selftest": cmd_selftest,
    "serve": cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="era-loc", description="ERA active-sensing localization")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="RunConfig JSON (default: profiles/desk.json)")
        p.add_argument("--seed", type=int, help="global seed (default: train.seed of the config)")
        p.add_argument("--out", default="runs", help="output directory")
        if name in ("train", "eval", "sweep-snr", "sweep-budget"):
            p.add_argument("--data", required=name == "train", help="dataset JSON Lines file")
        if name in ("eval", "sweep-snr", "beampattern", "serve"):
            p.add_argument("--ckpt", action="append", required=name != "serve", help="checkpoint directory")
        if name == "beampattern":
            p.add_argument("--x", type=float)
            p.add_argument("--y", type=float)
        if name == "serve":
            p.add_argument("--host", default="0.0.0.0")
            p.add_argument("--port", type=int, default=9999)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be a non-negative integer", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except (EraLocError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return exit_code_for(e)
