"""
Runtime settings and numeric defaults.
"""
import logging
import os
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError

logger = logging.getLogger("kktscope.config")

THREADS_ENV = "KKT_SCOPE_THREADS"

# kkt
ACTIVE_TOL = 1e-6
ZERO_GRADIENT_TOL = 1e-9
POSITIVE_MU_TOL = 1e-12
PLOT_GRID = 50

# scalarize
INNER_GRID = 1024
MAX_INNER_POINTS = 2 ** 20
MAX_RESOURCE_DIM = 3
REFINE_STEP = 1e-8
CURVATURE_TOL = 1e-9
OUTER_MIN_STEP = 1e-6
PREMISE_SAMPLES = 1000
PREMISE_ZERO_TOL = 1e-12
DEFAULT_SEED = 0
DEFAULT_TRIALS = 100


def default_beta_grid(n_objectives: int) -> int:
    """Simplex lattice resolution: 64 for two objectives, 32 beyond."""
    return 64 if n_objectives <= 2 else 32


@dataclass(frozen=True)
class Settings:
    threads: int


def get_settings(environ: Optional[dict] = None) -> Settings:
    """Read settings from the environment; ``KKT_SCOPE_THREADS`` must be a positive integer."""
    environ = os.environ if environ is None else environ
    raw = environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        threads = min(4, os.cpu_count() or 1)
    else:
        try:
            threads = int(raw)
        except ValueError as e:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from e
        if threads < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    logger.debug("Using %d worker thread(s)", threads)
    return Settings(threads=threads)
