"""
TTL file cache for served results, one JSON entry per key under CACHE_DIR.
"""
import glob
import json
import os
import tempfile
from time import time

from src.config import CACHE_DIR, CACHE_TTL
from src.logger import get_logger
from src.utils import canonical_json, sha256_of

logger = get_logger("cache")

CACHE_VERSION = "v1"  # bump this if response format changes
ENTRY_SUFFIX = ".json"


def make_cache_key(endpoint: str, model_hash: str, **params) -> str:
    """
    Collision-safe, filesystem-safe cache key for one served result.
    Floats are rounded so 1.0 and 1.00000000001 share an entry.
    """
    payload = {
        "v": CACHE_VERSION,
        "endpoint": endpoint,
        "model": model_hash,
        "params": {k: round(v, 9) if isinstance(v, float) else v for k, v in params.items()},
    }
    return sha256_of(payload)


def _entry_path(key: str) -> str:
    return os.path.join(CACHE_DIR, key + ENTRY_SUFFIX)


def _entries() -> list[str]:
    return sorted(glob.glob(os.path.join(CACHE_DIR, "*" + ENTRY_SUFFIX)))


def _read_entry(path: str, now: float) -> dict | None:
    """The stored entry if it is readable and unexpired; anything else is removed."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            entry = json.load(f)
        expired = now > float(entry["expiry"])
    except FileNotFoundError:
        return None
    except (OSError, ValueError, KeyError, TypeError) as e:
        logger.warning(f"Discarding corrupted cache entry {os.path.basename(path)}: {e}")
        expired = True
    if expired:
        try:
            os.remove(path)
        except OSError:
            pass
        return None
    return entry


def load_from_cache(key: str):
    entry = _read_entry(_entry_path(key), time())
    return None if entry is None else entry.get("result")


def save_to_cache(key: str, result):
    os.makedirs(CACHE_DIR, exist_ok=True)
    try:
        body = canonical_json({"expiry": time() + CACHE_TTL, "result": result})
    except (TypeError, ValueError) as e:
        logger.warning(f"Result for {key} is not cacheable: {e}")
        return
    # readers never see a half-written entry
    fd, tmp = tempfile.mkstemp(dir=CACHE_DIR, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(body)
        os.replace(tmp, _entry_path(key))
    except OSError as e:
        logger.warning(f"Failed to write cache entry {key}: {e}")
        if os.path.exists(tmp):
            os.remove(tmp)


def clear_cache():
    removed, failed = [], []
    for path in _entries():
        name = os.path.basename(path)
        try:
            os.remove(path)
            removed.append(name)
        except OSError as e:
            failed.append({"file": name, "error": str(e)})
    logger.info(f"Cleared {len(removed)} cache entries")
    return {"removed": removed, "failed": failed}


def cache_stats():
    now = time()
    live = [os.path.basename(path) for path in _entries() if _read_entry(path, now) is not None]
    return {
        "cache_dir": CACHE_DIR,
        "cache_files": len(live),
        "files": live,
        "ttl_seconds": CACHE_TTL,
        "version": CACHE_VERSION,
    }
