import logging
from src.config import LOG_LEVEL

ROOT_LOGGER = "era_loc"


def _root_logger():
    root = logging.getLogger(ROOT_LOGGER)
    if not root.handlers:
        root.setLevel(getattr(logging, LOG_LEVEL.upper(), logging.INFO))
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("[%(levelname)s] %(asctime)s %(name)s - %(message)s"))
        root.addHandler(handler)
        root.propagate = False
    return root


def get_logger(name=ROOT_LOGGER):
    """Module logger under the package root; the root owns the single handler."""
    root = _root_logger()
    if name == ROOT_LOGGER:
        return root
    return logging.getLogger(f"{ROOT_LOGGER}.{name}")
