import json
import os

import pytest

from src import cli
from src.cli import build_parser, check_channel_oracle, check_harmonics, main
from src.training import CHECKPOINT_SUBDIR


@pytest.fixture
def config_path(tiny_document, tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_document))
    return str(path)


def test_self_checks_pass():
    assert check_harmonics(0)[0]
    passed, detail = check_channel_oracle(0, scenes=20)
    assert passed, detail


def test_energy_check_bounds_absolute_error(monkeypatch):
    # 5e-10 relative error stays under 1e-9 only while ||c||^2 < 2
    monkeypatch.setattr(cli, "pattern_energy", lambda c, quadrature: float(c @ c) * (1.0 + 5e-10))
    passed, detail = check_harmonics(0)
    assert not passed, detail


def test_selftest_exit_code(capsys):
    assert main(["selftest"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    assert all(line.startswith("PASS") for line in lines)


def test_gen_data_is_deterministic(config_path, tmp_path, capsys):
    assert main(["gen-data", "--config", config_path, "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--config", config_path, "--seed", "7", "--out", str(tmp_path / "b")]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0].split("sha256=")[1] == out[1].split("sha256=")[1]
    assert os.path.exists(tmp_path / "a" / "config.json")


def test_malformed_config_exits_one(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"system": {"n_x": 0}}')
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path)]) == 1


def test_missing_files_exit_two(config_path, tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    missing = str(tmp_path / "missing.jsonl")
    assert main(["train", "--config", config_path, "--data", missing, "--out", str(tmp_path)]) == 2


def test_negative_seed_is_rejected(config_path, tmp_path):
    assert main(["gen-data", "--config", config_path, "--seed", "-1", "--out", str(tmp_path)]) == 1


def test_train_requires_data():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train"])


def test_train_eval_and_beampattern(config_path, tmp_path):
    data_dir = tmp_path / "data"
    assert main(["gen-data", "--config", config_path, "--out", str(data_dir)]) == 0
    data = str(data_dir / "dataset.jsonl")
    run = tmp_path / "run"
    assert main(["train", "--config", config_path, "--data", data, "--out", str(run)]) == 0
    ckpt = str(run / CHECKPOINT_SUBDIR)

    assert main(["eval", "--config", config_path, "--data", data, "--ckpt", ckpt, "--out", str(tmp_path / "eval")]) == 0
    assert os.path.exists(tmp_path / "eval" / "stage_rmse.csv")
    assert os.path.exists(tmp_path / "eval" / "stage_rmse.csv.meta.json")

    assert main([
        "sweep-snr", "--config", config_path, "--data", data, "--ckpt", ckpt, "--out", str(tmp_path / "snr"),
    ]) == 0
    with open(tmp_path / "snr" / "snr_sweep.csv") as f:
        assert len(f.read().strip().splitlines()) == 1 + 2

    out = tmp_path / "beams"
    assert main([
        "beampattern", "--config", config_path, "--ckpt", ckpt, "--out", str(out), "--x", "1.0", "--y", "-2.0",
    ]) == 0
    assert os.path.exists(out / "beampattern_proposed_stage_1.csv")
    assert os.path.exists(out / "beampattern_proposed_paths.json")
