# app/services/path.py
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from app.errors import LengthMismatch, QmmeError, ShapeMismatch
from app.services.baselines import BaselineConfig, BaselineSolver, adagd_run, fista_run, newton_run
from app.services.losses import (
    LogisticLoss,
    MultinomialSpec,
    ProblemInstance,
    SmoothedQuantileLoss,
    multinomial_probabilities,
)
from app.services.qmme import QmmeConfig, SolveResult, qmme_run

logger = logging.getLogger(__name__)


class SolverName(str, Enum):
    QMME = "qmme"
    NEWTON = "newton"
    FISTA = "fista"
    ADAGD = "adagd"


class MetricKind(str, Enum):
    MAD = "mad"
    LOGLIK = "loglik"
    ACCURACY = "accuracy"


class PathConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda_max: float = Field(10.0, gt=0)
    lambda_min: float = Field(1e-5, gt=0)
    n_lambdas: int = Field(30, ge=2)
    solver: SolverName = SolverName.QMME

    @model_validator(mode="after")
    def _ordered(self):
        if not self.lambda_max > self.lambda_min:
            raise ValueError(f"lambda_max={self.lambda_max} must exceed lambda_min={self.lambda_min}")
        return self


@dataclass(frozen=True)
class ValidationData:
    """Kernel rows between validation points and the sketch rows, plus the truth.

    `truth` is the noiseless signal for MAD and class labels 1..C for the
    probability metrics (logistic responses b map to b + 1).
    """
    K_new: np.ndarray
    truth: np.ndarray
    kind: MetricKind


@dataclass(frozen=True)
class Prediction:
    eta: np.ndarray
    probabilities: Optional[np.ndarray] = None


@dataclass
class PathEntry:
    lam: float
    solution: Optional[np.ndarray]
    iterations: int
    wall_time_s: float
    grad_norm: float
    metric: float
    reason: str
    objective: float = float("nan")
    data_fit: float = float("nan")
    error: Optional[str] = None


@dataclass
class PathResult:
    entries: List[PathEntry]
    total_time_s: float
    best_lambda: float
    metric_kind: Optional[MetricKind] = None
    solver: SolverName = SolverName.QMME

    @property
    def best_entry(self) -> Optional[PathEntry]:
        for e in self.entries:
            if e.lam == self.best_lambda:
                return e
        return None


def lambda_grid(config: PathConfig) -> np.ndarray:
    """Log-spaced, decreasing, endpoints exact."""
    grid = np.logspace(np.log10(config.lambda_max), np.log10(config.lambda_min), config.n_lambdas)
    grid[0], grid[-1] = config.lambda_max, config.lambda_min
    return grid


def run_solver(inst: ProblemInstance, x0, solver: SolverName,
               qmme_config: Optional[QmmeConfig] = None,
               baseline_config: Optional[BaselineConfig] = None) -> SolveResult:
    solver = SolverName(solver)
    if solver == SolverName.QMME:
        return qmme_run(inst, x0, qmme_config)
    base = baseline_config or BaselineConfig()
    base = base.model_copy(update={"solver": BaselineSolver(solver.value)})
    if solver == SolverName.FISTA:
        return fista_run(inst, x0, base)
    if solver == SolverName.ADAGD:
        return adagd_run(inst, x0, base)
    return newton_run(inst, x0, base)


def validation_metric(kind: MetricKind, predictions, truth) -> float:
    kind = MetricKind(kind)
    predictions = np.asarray(predictions, dtype=float)
    truth = np.asarray(truth)
    if predictions.shape[0] != truth.shape[0]:
        raise LengthMismatch(f"{predictions.shape[0]} predictions for {truth.shape[0]} targets")
    if kind == MetricKind.MAD:
        return float(np.mean(np.abs(truth.astype(float) - predictions)))
    labels = truth.astype(int) - 1
    if kind == MetricKind.LOGLIK:
        p = predictions[np.arange(labels.size), labels]
        return float(np.sum(np.log(np.maximum(p, np.finfo(float).tiny))))
    return float(np.mean(np.argmax(predictions, axis=1) == labels))


def predict(inst: ProblemInstance, x, K_new) -> Prediction:
    K_new = np.atleast_2d(np.asarray(K_new, dtype=float))
    x = np.asarray(x, dtype=float)
    if K_new.shape[1] != inst.m or x.shape != inst.x_shape:
        raise ShapeMismatch(f"kernel rows {K_new.shape} and coefficients {x.shape} do not match m={inst.m}")
    eta = K_new @ x
    loss = inst.loss
    if isinstance(loss, LogisticLoss):
        p = expit(eta)
        return Prediction(eta=eta, probabilities=np.column_stack([1.0 - p, p]))
    if isinstance(loss, MultinomialSpec):
        return Prediction(eta=eta, probabilities=multinomial_probabilities(eta, loss.parameterization))
    return Prediction(eta=eta)


def default_metric(inst: ProblemInstance) -> MetricKind:
    return MetricKind.MAD if isinstance(inst.loss, SmoothedQuantileLoss) else MetricKind.LOGLIK


def score(inst: ProblemInstance, x, val: ValidationData) -> float:
    pred = predict(inst, x, val.K_new)
    if val.kind == MetricKind.MAD:
        return validation_metric(val.kind, pred.eta, val.truth)
    return validation_metric(val.kind, pred.probabilities, val.truth)


def _best(entries: List[PathEntry], kind: Optional[MetricKind]) -> float:
    scored = [e for e in entries if np.isfinite(e.metric)]
    if not scored or kind is None:
        return float("nan")
    pick = min if kind == MetricKind.MAD else max
    return pick(scored, key=lambda e: e.metric).lam


def run_path(factory: Callable[[float], ProblemInstance], val_data: Optional[ValidationData],
             config: Optional[PathConfig] = None, qmme_config: Optional[QmmeConfig] = None,
             baseline_config: Optional[BaselineConfig] = None) -> PathResult:
    """Warm-started solves over the decreasing lambda grid."""
    config = config or PathConfig()
    grid = lambda_grid(config)
    t0 = time.perf_counter()
    entries: List[PathEntry] = []
    x = None

    for j, lam in enumerate(grid, start=1):
        try:
            inst = factory(float(lam))
            x0 = inst.initial_point() if x is None else x
            res = run_solver(inst, x0, config.solver, qmme_config, baseline_config)
        except QmmeError as e:
            logger.warning(f"lambda={lam:.3e} failed with {type(e).__name__}: {e}")
            entries.append(PathEntry(lam=float(lam), solution=None, iterations=0, wall_time_s=0.0,
                                     grad_norm=float("nan"), metric=float("nan"), reason="error",
                                     error=f"{type(e).__name__}: {e}"))
            continue

        x = res.x
        metric = score(inst, x, val_data) if val_data is not None else float("nan")
        entries.append(PathEntry(
            lam=float(lam), solution=x, iterations=res.iterations, wall_time_s=res.wall_time_s,
            grad_norm=res.grad_norm, metric=metric, reason=res.reason,
            objective=res.f, data_fit=res.f - inst.ridge(x),
        ))
        logger.info(f"[{j}/{grid.size}] lambda={lam:.3e} iters={res.iterations} "
                    f"time={res.wall_time_s:.3f}s metric={metric:.6g}")

    kind = val_data.kind if val_data is not None else None
    return PathResult(entries=entries, total_time_s=time.perf_counter() - t0,
                      best_lambda=_best(entries, kind), metric_kind=kind, solver=config.solver)
