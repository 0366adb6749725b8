# app/services/baselines.py
"""Comparison solvers: FISTA, adaptive gradient descent and damped Newton."""
from __future__ import annotations

import logging
import math
import time
from enum import Enum
from typing import List, Optional

import numpy as np
import scipy.linalg as sla
from pydantic import BaseModel, ConfigDict, Field

from app.core.linalg import power_iteration
from app.errors import HessianSolveFailed, LineSearchFailed, NonFiniteObjective
from app.services.qmme import IterationRecord, MajorantProblem, SolveResult

logger = logging.getLogger(__name__)

MAX_HALVINGS = 50


class BaselineSolver(str, Enum):
    FISTA = "fista"
    ADAGD = "adagd"
    NEWTON = "newton"


class BaselineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    solver: BaselineSolver = BaselineSolver.FISTA
    grad_tol: float = Field(1e-4, gt=0)
    max_iters: int = Field(1000, ge=1)
    adagd_init_step: float = Field(1e-7, gt=0)
    newton_ridge: float = Field(1e-9, gt=0)
    log_trajectory: bool = True


class _Recorder:
    """Collects IterationRecords and the final SolveResult for one run."""

    def __init__(self, config: BaselineConfig, name: str):
        self.config = config
        self.name = name
        self.t0 = time.perf_counter()
        self.trajectory: List[IterationRecord] = []
        self.steps: List[float] = []

    def check(self, f: float, g: np.ndarray, k: int) -> None:
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise NonFiniteObjective(f"{self.name}: objective became non-finite at iteration {k}",
                                     self.trajectory)

    def record(self, k: int, f: float, grad_norm: float, beta: float = 0.0) -> None:
        if self.config.log_trajectory:
            self.trajectory.append(IterationRecord(
                k=k, f=float(f), grad_norm=grad_norm, E_k=None, beta=beta,
                restarted=False, wall_time_s=time.perf_counter() - self.t0,
            ))

    def result(self, x: np.ndarray, k: int, f: float, grad_norm: float) -> SolveResult:
        reason = "tolerance" if grad_norm < self.config.grad_tol else "max_iters"
        elapsed = time.perf_counter() - self.t0
        if reason == "max_iters":
            logger.warning(f"{self.name} hit max_iters={self.config.max_iters} with grad norm {grad_norm:.3e}")
        return SolveResult(x=x, trajectory=self.trajectory, iterations=k, reason=reason,
                           f=float(f), grad_norm=grad_norm, wall_time_s=elapsed, steps=self.steps)


def lipschitz_constant(problem: MajorantProblem, tol: float = 1e-6) -> float:
    """Largest eigenvalue of the curvature bound H, damping included."""
    return power_iteration(problem.h_matvec, problem.initial_point().shape, tol=tol)


def fista_run(problem: MajorantProblem, x0, config: Optional[BaselineConfig] = None,
              lipschitz: Optional[float] = None) -> SolveResult:
    config = config or BaselineConfig(solver=BaselineSolver.FISTA)
    rec = _Recorder(config, "FISTA")
    L = lipschitz if lipschitz is not None else lipschitz_constant(problem)
    logger.debug(f"FISTA step 1/L with L={L:.6e}")

    x = np.array(x0, dtype=float, copy=True)
    f, g = problem.objective_grad(x)
    rec.check(f, g, 0)
    grad_norm = float(np.linalg.norm(g))
    y, t, k = x.copy(), 1.0, 0

    while grad_norm >= config.grad_tol and k < config.max_iters:
        x_new = y - problem.gradient(y) / L
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        momentum = (t - 1.0) / t_new
        y = x_new + momentum * (x_new - x)
        x, t = x_new, t_new
        f, g = problem.objective_grad(x)
        k += 1
        rec.check(f, g, k)
        grad_norm = float(np.linalg.norm(g))
        rec.record(k, f, grad_norm, beta=momentum)

    return rec.result(x, k, f, grad_norm)


def adagd_run(problem: MajorantProblem, x0, config: Optional[BaselineConfig] = None) -> SolveResult:
    """Adaptive gradient descent without line search (Malitsky and Mishchenko)."""
    config = config or BaselineConfig(solver=BaselineSolver.ADAGD)
    rec = _Recorder(config, "AdaGD")

    x = np.array(x0, dtype=float, copy=True)
    f, g = problem.objective_grad(x)
    rec.check(f, g, 0)
    grad_norm = float(np.linalg.norm(g))
    if grad_norm < config.grad_tol or config.max_iters < 1:
        return rec.result(x, 0, f, grad_norm)

    step, theta = config.adagd_init_step, math.inf
    x_prev, g_prev = x, g
    x = x - step * g
    rec.steps.append(step)
    f, g = problem.objective_grad(x)
    k = 1
    rec.check(f, g, k)
    grad_norm = float(np.linalg.norm(g))
    rec.record(k, f, grad_norm)

    while grad_norm >= config.grad_tol and k < config.max_iters:
        dx = float(np.linalg.norm(x - x_prev))
        dg = float(np.linalg.norm(g - g_prev))
        grow = math.sqrt(1.0 + theta) * step if math.isfinite(theta) else math.inf
        local = dx / (2.0 * dg) if dg > 0 else math.inf
        new_step = min(grow, local)
        if not math.isfinite(new_step):
            # zero gradient difference: keep the previous step
            new_step = step
        theta, step = new_step / step, new_step
        rec.steps.append(step)

        x_prev, g_prev = x, g
        x = x - step * g
        f, g = problem.objective_grad(x)
        k += 1
        rec.check(f, g, k)
        grad_norm = float(np.linalg.norm(g))
        rec.record(k, f, grad_norm)

    return rec.result(x, k, f, grad_norm)


def newton_run(problem, x0, config: Optional[BaselineConfig] = None) -> SolveResult:
    """Newton-Raphson with a small ridge and step halving on the objective."""
    config = config or BaselineConfig(solver=BaselineSolver.NEWTON)
    rec = _Recorder(config, "Newton")

    x = np.array(x0, dtype=float, copy=True)
    shape = x.shape
    f, g = problem.objective_grad(x)
    rec.check(f, g, 0)
    grad_norm = float(np.linalg.norm(g))
    k = 0

    while grad_norm >= config.grad_tol and k < config.max_iters:
        Hess = problem.exact_hessian(x)
        Hess = Hess + config.newton_ridge * np.eye(Hess.shape[0])
        try:
            c = sla.cho_factor(Hess, lower=True)
            d = -sla.cho_solve(c, g.reshape(-1, order="F")).reshape(shape, order="F")
        except (sla.LinAlgError, ValueError) as e:
            raise HessianSolveFailed(f"Newton system not solvable at iteration {k + 1}: {e}") from e

        # accept ties up to rounding
        slack = 4.0 * np.finfo(float).eps * max(1.0, abs(f))
        s = 1.0
        for _ in range(MAX_HALVINGS + 1):
            f_new = problem.objective(x + s * d)
            if np.isfinite(f_new) and f_new <= f + slack:
                break
            s *= 0.5
        else:
            raise LineSearchFailed(f"no descent after {MAX_HALVINGS} step halvings at iteration {k + 1}")

        x = x + s * d
        rec.steps.append(s)
        f, g = problem.objective_grad(x)
        k += 1
        rec.check(f, g, k)
        grad_norm = float(np.linalg.norm(g))
        rec.record(k, f, grad_norm)

    return rec.result(x, k, f, grad_norm)
