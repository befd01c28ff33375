import hashlib
import json
from enum import IntEnum
from typing import Any

import numpy as np

from src.config import ERA_LOC_THREADS


class Stream(IntEnum):
    """Family tag, the second key of every substream after the global seed."""
    SCENE = 1
    INIT = 2
    TRAIN_NOISE = 3
    SHUFFLE = 4
    VALIDATION_NOISE = 5
    EVAL_NOISE = 6
    SERVICE_SCENE = 7
    BEAM_SCENE = 8
    SELFTEST = 9


def substream(*keys: int) -> np.random.Generator:
    """Independent generator for a tuple of non-negative integer keys.

    Streams derived from (global seed, family, index, ...) do not depend on
    the order in which they are created, so parallel generation stays
    deterministic. SeedSequence zero-pads its entropy, so the key count
    leads the entropy and (s, 1) never equals (s, 1, 0).
    """
    return np.random.default_rng(np.random.SeedSequence([len(keys), *(int(k) for k in keys)]))


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def sha256_of(payload: Any) -> str:
    """Collision-safe hash of a JSON-serializable payload."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def worker_count(requested: int | None = None) -> int:
    """Worker pool size, capped by ERA_LOC_THREADS."""
    if requested is None:
        return max(1, ERA_LOC_THREADS)
    return max(1, min(int(requested), ERA_LOC_THREADS))
