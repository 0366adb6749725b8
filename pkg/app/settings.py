# app/settings.py
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


@dataclass(frozen=True)
class Tolerances:
    # input checks
    symmetry: float = 1e-12
    # shifted quasi-triangular solves
    singular_shift: float = 1e-14
    # power iteration for Lipschitz constants
    power_iteration: float = 1e-6
    power_iteration_max_iters: int = 10_000


DEFAULT_TOLERANCES = Tolerances()

# Damping defaults per loss family
DELTA_QUANTILE_LOGISTIC = 1e-9
DELTA_MULTINOMIAL = 1e-4


def output_dir(configured: str) -> Path:
    """QMME_OUTPUT_DIR, when set, wins over the configured directory."""
    return Path(os.getenv("QMME_OUTPUT_DIR") or configured)


def results_db_url(out_dir: Path) -> str:
    return os.getenv("QMME_RESULTS_DB", f"sqlite:///{out_dir / 'results.db'}")


def log_level(cli_value: Optional[str] = None) -> str:
    return (cli_value or os.getenv("QMME_LOG_LEVEL", "INFO")).upper()
