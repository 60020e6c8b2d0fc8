import logging
import os

from dotenv import load_dotenv

load_dotenv()

WORKERS_ENV = "ROBUSTKIT_WORKERS"

# Threat-model defaults (L-inf budget 8/255, L2 budget 0.5, step = budget / 4)
DEFAULT_EPSILON = {"linf": 8 / 255, "l2": 0.5}
DEFAULT_STEP_FRACTION = 0.25

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_worker_count() -> int:
    """Number of evaluation workers, read from the environment on every call."""
    raw = os.getenv(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError:
        logging.getLogger(__name__).warning("Ignoring invalid %s=%r", WORKERS_ENV, raw)
        return 1
    return max(1, workers)


def configure_logging(level: int = logging.INFO) -> None:
    root = logging.getLogger()
    if not any(getattr(h, "_robustkit", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._robustkit = True
        root.addHandler(handler)
    root.setLevel(level)
