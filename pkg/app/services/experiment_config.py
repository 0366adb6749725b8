# app/services/experiment_config.py
"""
Experiment configuration: a flat key=value file, one setting per line.

    family=multinomial
    q=3
    sigma=15
    m_values=32,128,512
    solvers=qmme,newton

Lines are parsed with python-dotenv (no variable interpolation). Unknown keys
are rejected; list settings are comma separated.
"""
from __future__ import annotations

import logging
from enum import Enum
from pathlib import Path
from typing import List, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.errors import ConfigError
from app.services.baselines import BaselineConfig
from app.services.datagen import Family, SimSpec
from app.services.kernel import KernelSpec, SketchStrategy
from app.services.losses import LogisticLoss, Loss, MultinomialSpec, Parameterization, SmoothedQuantileLoss
from app.services.path import PathConfig, SolverName
from app.services.qmme import BetaMode, QmmeConfig
from app.settings import DELTA_MULTINOMIAL, DELTA_QUANTILE_LOGISTIC

logger = logging.getLogger(__name__)

_LIST_FIELDS = ("solvers", "m_values", "q_values")


class BenchPreset(str, Enum):
    M_SWEEP = "m_sweep"
    Q_SWEEP = "q_sweep"
    CODON = "codon"
    SPEED = "speed"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # problem
    family: Family = Family.QUANTILE
    parameterization: Parameterization = Parameterization.STANDARD
    q: int = Field(3, ge=3)
    n: int = Field(1024, ge=2)
    n_val: Optional[int] = Field(None, ge=1)
    d: int = Field(50, ge=6)
    sigma: float = Field(15.0, gt=0)
    h: float = Field(0.25, gt=0)
    tau: float = Field(0.5, gt=0, lt=1)
    delta: Optional[float] = Field(None, gt=0)
    loose_bound: bool = False

    # sketch
    m: int = Field(64, ge=1)
    sketch: SketchStrategy = SketchStrategy.UNIFORM

    # regularization
    lam: float = Field(1e-4, gt=0)
    lambda_max: float = Field(10.0, gt=0)
    lambda_min: float = Field(1e-5, gt=0)
    n_lambdas: int = Field(30, ge=2)

    # solvers
    solver: SolverName = SolverName.QMME
    solvers: List[SolverName] = Field(default_factory=lambda: [SolverName.QMME, SolverName.NEWTON])
    restart_period: int = Field(50, ge=2)
    beta_mode: BetaMode = BetaMode.HYBRID
    cap_after: int = Field(0, ge=0)
    grad_tol: float = Field(1e-4, gt=0)
    max_iters: int = Field(1000, ge=1)
    adagd_init_step: float = Field(1e-7, gt=0)
    newton_ridge: float = Field(1e-9, gt=0)
    log_trajectory: bool = True

    # experiment
    seed: int = Field(0, ge=0)
    replicates: int = Field(1, ge=1)
    m_values: List[int] = Field(default_factory=lambda: [32, 128, 512])
    q_values: List[int] = Field(default_factory=lambda: [3, 5, 8])
    bench_preset: BenchPreset = BenchPreset.M_SWEEP
    workers: int = Field(1, ge=1)
    output_dir: str = "out"
    data_path: Optional[str] = None
    # largest n for which the full Gram matrix is formed
    gram_limit: int = Field(16384, ge=1)

    @field_validator(*_LIST_FIELDS, mode="before")
    @classmethod
    def _split_list(cls, v):
        if isinstance(v, str):
            return [item.strip() for item in v.split(",") if item.strip()]
        return v

    @field_validator("m_values", "q_values")
    @classmethod
    def _positive(cls, v):
        if not v or any(x < 1 for x in v):
            raise ValueError("must be a non-empty list of positive integers")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if not self.lambda_max > self.lambda_min:
            raise ValueError("lambda_max must exceed lambda_min")
        if self.m > self.n:
            raise ValueError(f"m={self.m} exceeds n={self.n}")
        if any(q < 3 for q in self.q_values):
            raise ValueError("q_values must all be >= 3")
        if self.data_path and self.family != Family.MULTINOMIAL:
            raise ValueError("data_path (codon data) requires family=multinomial")
        return self

    # derived records

    @property
    def damping(self) -> float:
        if self.delta is not None:
            return self.delta
        return DELTA_MULTINOMIAL if self.family == Family.MULTINOMIAL else DELTA_QUANTILE_LOGISTIC

    @property
    def validation_size(self) -> int:
        return self.n_val or max(1, self.n // 4)

    def loss(self, q: Optional[int] = None) -> Loss:
        if self.family == Family.QUANTILE:
            return SmoothedQuantileLoss(tau=self.tau, h=self.h)
        if self.family == Family.LOGISTIC:
            return LogisticLoss()
        return MultinomialSpec(q=q or self.q, parameterization=self.parameterization,
                               loose_bound=self.loose_bound)

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(sigma=self.sigma)

    def sim_spec(self, n: int, seed: int, q: Optional[int] = None) -> SimSpec:
        return SimSpec(n=n, d=self.d, family=self.family, q=q or self.q, rng_seed=seed)

    def qmme_config(self) -> QmmeConfig:
        return QmmeConfig(restart_period=self.restart_period, beta_cap_mode=self.beta_mode,
                          cap_after=self.cap_after, grad_tol=self.grad_tol,
                          max_iters=self.max_iters, log_trajectory=self.log_trajectory)

    def baseline_config(self) -> BaselineConfig:
        return BaselineConfig(grad_tol=self.grad_tol, max_iters=self.max_iters,
                              adagd_init_step=self.adagd_init_step, newton_ridge=self.newton_ridge,
                              log_trajectory=self.log_trajectory)

    def path_config(self, solver: Optional[SolverName] = None) -> PathConfig:
        return PathConfig(lambda_max=self.lambda_max, lambda_min=self.lambda_min,
                          n_lambdas=self.n_lambdas, solver=solver or self.solver)

    def to_text(self) -> str:
        lines = []
        for key, value in sorted(self.model_dump(mode="json").items()):
            if value is None:
                continue
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


def parse_config_text(values: dict, source: str = "<config>") -> ExperimentConfig:
    cleaned = {k.strip(): v for k, v in values.items() if v is not None and v.strip() != ""}
    unknown = sorted({k.strip() for k in values} - set(ExperimentConfig.model_fields))
    if unknown:
        raise ConfigError(f"{source}: unknown keys {', '.join(unknown)}")
    try:
        return ExperimentConfig(**cleaned)
    except ValidationError as e:
        raise ConfigError(f"{source}: {e}") from e


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(dotenv_values(path, interpolate=False), str(path))
