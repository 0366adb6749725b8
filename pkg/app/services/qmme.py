# app/services/qmme.py
"""
Quadratic majorization-minimization with extrapolation.

Every problem handed to the engine supplies a fixed curvature matrix H with
f(y) <= f(x) + <grad f(x), y - x> + 1/2 ||y - x||_H^2. One iteration is

    beta = l / (l + 2)
    y    = x + beta (x - x_prev)
    x+   = y - H^-1 grad f(y)

with the momentum counter l reset to 1 whenever the objective goes up or l
reaches the restart period P.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, List, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.linalg import CholeskyFactor, cholesky, cholesky_solve, power_iteration
from app.errors import DimensionMismatch, NonFiniteObjective

logger = logging.getLogger(__name__)

BETA_CAP = 0.333


class BetaMode(str, Enum):
    HYBRID = "hybrid"
    CAPPED = "capped"


class QmmeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    restart_period: int = Field(50, ge=2)
    beta_cap_mode: BetaMode = BetaMode.HYBRID
    # iteration from which the capped schedule applies (CAPPED mode only)
    cap_after: int = Field(0, ge=0)
    grad_tol: float = Field(1e-4, gt=0)
    max_iters: int = Field(1000, ge=1)
    log_trajectory: bool = True


@dataclass(frozen=True)
class IterationRecord:
    k: int
    f: float
    grad_norm: float
    E_k: Optional[float]
    beta: float
    restarted: bool
    wall_time_s: float


@dataclass
class SolveResult:
    x: np.ndarray
    trajectory: List[IterationRecord]
    iterations: int
    reason: str
    f: float
    grad_norm: float
    wall_time_s: float
    steps: List[float] = field(default_factory=list)

    def __iter__(self) -> Iterator[Any]:
        # unpacks as (solution, trajectory)
        yield self.x
        yield self.trajectory


@runtime_checkable
class MajorantProblem(Protocol):
    def objective(self, x: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...

    def objective_grad(self, x: np.ndarray) -> Tuple[float, np.ndarray]: ...

    def majorant_solve(self, g: np.ndarray) -> np.ndarray: ...

    def h_norm_sq(self, v: np.ndarray) -> float: ...

    def h_matvec(self, v: np.ndarray) -> np.ndarray: ...

    def initial_point(self) -> np.ndarray: ...


def beta_schedule(l: int, config: QmmeConfig, k: Optional[int] = None) -> float:
    beta = l / (l + 2.0)
    if config.beta_cap_mode == BetaMode.CAPPED and (k is None or k >= config.cap_after):
        return min(beta, BETA_CAP)
    return beta


def _finite(f: float, g: np.ndarray) -> bool:
    return bool(np.isfinite(f) and np.all(np.isfinite(g)))


def qmme_run(problem: MajorantProblem, x0, config: Optional[QmmeConfig] = None) -> SolveResult:
    config = config or QmmeConfig()
    t0 = time.perf_counter()

    x = np.array(x0, dtype=float, copy=True)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial point has non-finite entries")
    x_prev = x.copy()

    f, g = problem.objective_grad(x)
    if not _finite(f, g):
        raise NonFiniteObjective("objective or gradient is not finite at the initial point")
    grad_norm = float(np.linalg.norm(g))

    P = config.restart_period
    l = 1
    k = 0
    trajectory: List[IterationRecord] = []
    reason = "max_iters"

    while True:
        if grad_norm < config.grad_tol:
            reason = "tolerance"
            break
        if k >= config.max_iters:
            break

        beta = beta_schedule(l, config, k)
        y = x + beta * (x - x_prev)
        x_new = y - problem.majorant_solve(problem.gradient(y))
        f_new, g_new = problem.objective_grad(x_new)
        if not _finite(f_new, g_new):
            raise NonFiniteObjective(f"objective became non-finite at iteration {k + 1}", trajectory)

        l += 1
        restarted = bool(f_new > f or l == P)
        if restarted:
            l = 1

        E_k = None
        if config.log_trajectory:
            E_k = float(f_new + 0.5 * problem.h_norm_sq(x_new - x))

        x_prev, x = x, x_new
        f, g = float(f_new), g_new
        grad_norm = float(np.linalg.norm(g))
        k += 1

        if config.log_trajectory:
            trajectory.append(IterationRecord(
                k=k, f=f, grad_norm=grad_norm, E_k=E_k, beta=beta,
                restarted=restarted, wall_time_s=time.perf_counter() - t0,
            ))

    elapsed = time.perf_counter() - t0
    if reason == "max_iters":
        logger.warning(f"QMME hit max_iters={config.max_iters} with grad norm {grad_norm:.3e}")
    else:
        logger.debug(f"QMME converged in {k} iterations ({elapsed:.3f}s)")
    return SolveResult(x=x, trajectory=trajectory, iterations=k, reason=reason,
                       f=float(f), grad_norm=grad_norm, wall_time_s=elapsed)


class QuadraticProblem:
    """f(x) = 1/2 x'Ax - b'x with a user-supplied curvature bound H."""

    def __init__(self, A, H=None, b=None):
        self.A = np.asarray(A, dtype=float)
        self.H = self.A.copy() if H is None else np.asarray(H, dtype=float)
        if self.A.shape != self.H.shape:
            raise DimensionMismatch(f"A {self.A.shape} and H {self.H.shape} differ")
        n = self.A.shape[0]
        self.b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
        self._chol: CholeskyFactor = cholesky(self.H)

    def objective(self, x):
        return float(0.5 * x @ self.A @ x - self.b @ x)

    def gradient(self, x):
        return self.A @ x - self.b

    def objective_grad(self, x):
        return self.objective(x), self.gradient(x)

    def majorant_solve(self, g):
        return cholesky_solve(self._chol, g)

    def h_norm_sq(self, v):
        return float(v @ self.H @ v)

    def h_matvec(self, v):
        return self.H @ v

    def initial_point(self):
        return np.zeros(self.A.shape[0])

    def exact_hessian(self, x):
        return self.A


# ---------------------------------------------------------------------------
# empirical checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckReport:
    name: str
    samples: int
    worst: float
    threshold: float
    valid: bool


def _perturb(rng: np.random.Generator, center: np.ndarray, radius: float) -> np.ndarray:
    v = rng.standard_normal(center.shape)
    return center + v * (radius * rng.uniform() / max(float(np.linalg.norm(v)), 1e-300))


def _pairs(problem: MajorantProblem, samples: int, radius: float, rng_seed: int, center=None):
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(rng_seed)
    c = problem.initial_point() if center is None else np.asarray(center, dtype=float)
    for _ in range(samples):
        yield _perturb(rng, c, radius), _perturb(rng, c, radius)


def check_majorization(problem: MajorantProblem, samples: int = 100, radius: float = 2.0,
                       rng_seed: int = 0, center=None) -> CheckReport:
    """Largest f(y) - [f(x) + <g, y-x> + 1/2||y-x||_H^2] over sampled pairs.

    `worst` is the raw violation; `valid` compares each pair against
    1e-8 (1 + |f(x)|).
    """
    worst = -np.inf
    valid = True
    for x, y in _pairs(problem, samples, radius, rng_seed, center):
        fx, gx = problem.objective_grad(x)
        d = y - x
        bound = fx + float(np.sum(gx * d)) + 0.5 * problem.h_norm_sq(d)
        viol = problem.objective(y) - bound
        worst = max(worst, viol)
        if viol > 1e-8 * (1.0 + abs(fx)):
            valid = False
    return CheckReport("majorization", samples, float(worst), 1e-8, valid)


def check_nonexpansive(problem: MajorantProblem, samples: int = 50, radius: float = 2.0,
                       rng_seed: int = 0, center=None) -> CheckReport:
    """max ||T(x) - T(y)||_H / ||x - y||_H for T(x) = x - 2 H^-1 grad f(x)."""

    def T(z):
        return z - 2.0 * problem.majorant_solve(problem.gradient(z))

    worst = 0.0
    for x, y in _pairs(problem, samples, radius, rng_seed, center):
        denom = problem.h_norm_sq(x - y)
        if denom <= 0:
            continue
        worst = max(worst, float(np.sqrt(problem.h_norm_sq(T(x) - T(y)) / denom)))
    return CheckReport("nonexpansive", samples, worst, 1.0 + 1e-10, worst <= 1.0 + 1e-10)


def check_gradient_lipschitz(problem: MajorantProblem, sigma_max: Optional[float] = None,
                             samples: int = 50, radius: float = 2.0, rng_seed: int = 0,
                             center=None) -> CheckReport:
    """max ||grad f(x) - grad f(y)|| / (sigma_max(H) ||x - y||)."""
    if sigma_max is None:
        shape = problem.initial_point().shape
        sigma_max = power_iteration(problem.h_matvec, shape, tol=1e-10)
    worst = 0.0
    for x, y in _pairs(problem, samples, radius, rng_seed, center):
        dist = float(np.linalg.norm(x - y))
        if dist == 0:
            continue
        diff = float(np.linalg.norm(problem.gradient(x) - problem.gradient(y)))
        worst = max(worst, diff / (sigma_max * dist))
    return CheckReport("gradient_lipschitz", samples, worst, 1.0 + 1e-8, worst <= 1.0 + 1e-8)


def check_energy_descent(trajectory: Sequence[IterationRecord], slack: float = 1e-12) -> CheckReport:
    """Largest rise of E_k between consecutive iterations, relative to 1 + |E_k|."""
    energies = [r.E_k for r in trajectory if r.E_k is not None]
    worst = 0.0
    for prev, cur in zip(energies, energies[1:]):
        worst = max(worst, (cur - prev) / (1.0 + abs(prev)))
    return CheckReport("energy_descent", len(energies), worst, slack, worst <= slack)
