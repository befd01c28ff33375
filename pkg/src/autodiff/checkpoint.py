"""
Self-describing checkpoints: manifest.json + data.bin (+ optimizer.bin).

Each blob is little-endian float64, row-major, tensors concatenated in
manifest order. Manifest entries: {name, shape, dtype: "f64", offset (bytes),
length (elements)}.
"""
import json
import os
from dataclasses import dataclass, field

import numpy as np

from src.errors import ConfigurationError
from src.logger import get_logger

logger = get_logger("checkpoint")

CHECKPOINT_FORMAT = "era-loc-checkpoint/1"
MANIFEST_FILE = "manifest.json"
DATA_FILE = "data.bin"
OPTIMIZER_FILE = "optimizer.bin"


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def config(self) -> dict:
        return self.manifest.get("config", {})


def _write_blob(path: str, arrays: dict[str, np.ndarray]) -> list[dict]:
    entries = []
    offset = 0
    with open(path, "wb") as f:
        for name, value in arrays.items():
            data = np.ascontiguousarray(value, dtype="<f8")
            f.write(data.tobytes())
            entries.append({
                "name": name,
                "shape": list(data.shape),
                "dtype": "f64",
                "offset": offset,
                "length": int(data.size),
            })
            offset += data.nbytes
    return entries


def _read_blob(path: str, entries: list[dict]) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    arrays = {}
    for entry in entries:
        if entry.get("dtype") != "f64":
            raise ConfigurationError(f"unsupported dtype {entry.get('dtype')!r} for {entry['name']}")
        values = np.frombuffer(raw, dtype="<f8", count=entry["length"], offset=entry["offset"])
        arrays[entry["name"]] = values.astype(np.float64).reshape(entry["shape"])
    return arrays


def save_checkpoint(
    directory: str,
    tensors: dict[str, np.ndarray],
    config: dict,
    metadata: dict | None = None,
    optimizer: dict[str, np.ndarray] | None = None,
) -> str:
    os.makedirs(directory, exist_ok=True)
    manifest = {"format": CHECKPOINT_FORMAT, "config": config}
    manifest.update(metadata or {})
    manifest["tensors"] = _write_blob(os.path.join(directory, DATA_FILE), tensors)
    if optimizer is not None:
        manifest["optimizer"] = _write_blob(os.path.join(directory, OPTIMIZER_FILE), optimizer)
    with open(os.path.join(directory, MANIFEST_FILE), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Checkpoint written to {directory} ({len(tensors)} tensors)")
    return directory


def load_checkpoint(directory: str) -> Checkpoint:
    manifest_path = os.path.join(directory, MANIFEST_FILE)
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{manifest_path}: unknown checkpoint format {manifest.get('format')!r}")
    tensors = _read_blob(os.path.join(directory, DATA_FILE), manifest["tensors"])
    optimizer = {}
    if manifest.get("optimizer"):
        optimizer = _read_blob(os.path.join(directory, OPTIMIZER_FILE), manifest["optimizer"])
    return Checkpoint(manifest=manifest, tensors=tensors, optimizer=optimizer)
