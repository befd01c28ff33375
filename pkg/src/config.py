import os
from dotenv import load_dotenv

load_dotenv()


# Base directory of project
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Bundled experiment profiles
PROFILES_DIR = os.path.join(BASE_DIR, "profiles")

# logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# Worker cap for dataset generation and evaluation fan-out
ERA_LOC_THREADS = int(os.getenv("ERA_LOC_THREADS") or os.cpu_count() or 1)

# Result cache for the inference service
CACHE_DIR = os.getenv("CACHE_DIR") or os.path.join(BASE_DIR, "cache_data")
CACHE_TTL = int(os.getenv("CACHE_TTL", 300))  # seconds

# Admin security key for cache administration
ADMIN_KEY = os.getenv("ADMIN_KEY")

# Checkpoint served by src.main
CHECKPOINT_DIR = os.getenv("CHECKPOINT_DIR", "")

# Rate limiting storage backend (recommended: Redis when several workers serve)
# Example: redis://:password@redis-host:6379/0
RATE_LIMIT = os.getenv("RATE_LIMIT", "30/minute")
RATE_LIMIT_STORAGE_URI = os.getenv("RATE_LIMIT_STORAGE_URI", "memory://")
