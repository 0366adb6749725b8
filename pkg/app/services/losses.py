# app/services/losses.py
"""
Loss families for sketched kernel learning.

For coefficients x (m,) or X (m, q') the objective is

    f(x) = sum_i loss(b_i, (KG'x)_i) + lam/2 x'GKG'x

Each ProblemInstance carries its fixed curvature bound H:

    quantile     (1/(sqrt(2 pi) h)) GK^2G' + lam GKG' + delta I
    logistic     1/4 GK^2G' + lam GKG' + delta I
    multinomial  E (x) GK^2G' + lam I (x) GKG' + lam delta I

The first two are dense m x m matrices with a cached Cholesky factor. The
multinomial bound is never formed; its solve goes through a SylvesterPlan,
or at lam = 0 through a Cholesky factor of GK^2G' and the closed-form E^-1.
Multinomial coefficients are vectorized column-major, so
(E (x) A) vec(X) = vec(A X E) for symmetric E.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit, log_softmax, ndtr, softmax

from app.core.linalg import CholeskyFactor, cholesky, cholesky_solve
from app.core.sylvester import SylvesterPlan, build_plan, einv_matrix, solve_sylvester
from app.errors import NotASimplexPoint, NotPositiveDefinite, ShapeMismatch
from app.services.kernel import SketchedBlocks

logger = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class SmoothedQuantileLoss(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    family: Literal["quantile"] = "quantile"
    tau: float = Field(0.5, gt=0, lt=1)
    h: float = Field(0.25, gt=0)

    @property
    def curvature_scale(self) -> float:
        return _INV_SQRT_2PI / self.h


class LogisticLoss(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    family: Literal["logistic"] = "logistic"

    @property
    def curvature_scale(self) -> float:
        return 0.25


class Parameterization(str, Enum):
    STANDARD = "standard"
    FULL = "full"


class MultinomialSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    family: Literal["multinomial"] = "multinomial"
    q: int = Field(3, ge=2)
    parameterization: Parameterization = Parameterization.STANDARD
    # un-halved bound; twice the tight one, still a valid majorant
    loose_bound: bool = False

    @property
    def qprime(self) -> int:
        return self.q - 1 if self.parameterization == Parameterization.STANDARD else self.q

    @property
    def bound_scale(self) -> float:
        return 1.0 if self.loose_bound else 0.5

    @property
    def einv_scale(self) -> float:
        return 1.0 / self.bound_scale

    def E(self) -> np.ndarray:
        """scale (I - 11'/(q'+1)); its inverse is einv_scale (I + 11')."""
        qp = self.qprime
        return self.bound_scale * (np.eye(qp) - np.ones((qp, qp)) / (qp + 1))


Loss = Union[SmoothedQuantileLoss, LogisticLoss, MultinomialSpec]


# ---------------------------------------------------------------------------
# smoothed quantile loss
# ---------------------------------------------------------------------------

def sq_loss_value(u, tau: float, h: float):
    u = np.asarray(u, dtype=float)
    z = u / h
    return h * _INV_SQRT_2PI * np.exp(-0.5 * z * z) + 0.5 * u * (1.0 - 2.0 * ndtr(-z)) + (tau - 0.5) * u


def sq_loss_derivs(u, tau: float, h: float):
    u = np.asarray(u, dtype=float)
    z = u / h
    first = ndtr(z) - (1.0 - tau)
    second = _INV_SQRT_2PI * np.exp(-0.5 * z * z) / h
    return first, second


# ---------------------------------------------------------------------------
# curvature operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DenseCurvature:
    H: np.ndarray
    chol: CholeskyFactor

    def solve(self, g: np.ndarray) -> np.ndarray:
        return cholesky_solve(self.chol, g)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.H @ v

    def norm_sq(self, v: np.ndarray) -> float:
        return float(v @ self.H @ v)


@dataclass(frozen=True)
class SylvesterCurvature:
    plan: SylvesterPlan
    lam: float
    E: np.ndarray
    GKGt: np.ndarray
    GK2Gt: np.ndarray

    def solve(self, G: np.ndarray) -> np.ndarray:
        return solve_sylvester(self.plan, self.lam, G)

    @property
    def delta(self) -> float:
        return self.plan.delta

    def matvec(self, D: np.ndarray) -> np.ndarray:
        return self.GK2Gt @ D @ self.E + self.lam * (self.GKGt @ D + self.delta * D)

    def norm_sq(self, D: np.ndarray) -> float:
        return float(np.sum(D * self.matvec(D)))


@dataclass(frozen=True)
class KroneckerCurvature:
    """E (x) GK^2G', the multinomial bound at lam = 0; the step is GK^2G'^-1 C E^-1."""
    E: np.ndarray
    Einv: np.ndarray
    GK2Gt: np.ndarray
    chol: CholeskyFactor

    def solve(self, G: np.ndarray) -> np.ndarray:
        return cholesky_solve(self.chol, G @ self.Einv)

    def matvec(self, D: np.ndarray) -> np.ndarray:
        return self.GK2Gt @ D @ self.E

    def norm_sq(self, D: np.ndarray) -> float:
        return float(np.sum(D * self.matvec(D)))


CurvatureOperator = Union[DenseCurvature, SylvesterCurvature, KroneckerCurvature]


# ---------------------------------------------------------------------------
# problem instances
# ---------------------------------------------------------------------------

def multinomial_probabilities(eta: np.ndarray, parameterization: Parameterization) -> np.ndarray:
    """Class probabilities (n, q); the standard form appends the reference logit 0."""
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    if Parameterization(parameterization) == Parameterization.STANDARD:
        eta = np.hstack([eta, np.zeros((eta.shape[0], 1))])
    return softmax(eta, axis=1)


@dataclass(frozen=True)
class ProblemInstance:
    blocks: SketchedBlocks
    loss: Loss
    responses: np.ndarray
    lam: float
    delta: Optional[float] = None
    plan: Optional[SylvesterPlan] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        resp = np.asarray(self.responses)
        if resp.shape[0] != self.blocks.n:
            raise ShapeMismatch(f"{resp.shape[0]} responses for n={self.blocks.n} samples")
        if isinstance(self.loss, MultinomialSpec):
            resp = resp.astype(int)
            if resp.min() < 1 or resp.max() > self.loss.q:
                raise ValueError(f"class labels must lie in 1..{self.loss.q}")
        else:
            resp = resp.astype(float)
        object.__setattr__(self, "responses", resp)
        if self.plan is not None:
            # the plan's factorization fixes the damping
            if self.delta is not None and self.delta != self.plan.delta:
                raise ValueError(f"delta={self.delta} disagrees with the plan's delta={self.plan.delta}")
            object.__setattr__(self, "delta", self.plan.delta)
        elif self.delta is None:
            object.__setattr__(self, "delta", self.blocks.delta)

    @property
    def family(self) -> str:
        return self.loss.family

    @property
    def m(self) -> int:
        return self.blocks.m

    @property
    def x_shape(self) -> Tuple[int, ...]:
        if isinstance(self.loss, MultinomialSpec):
            return (self.m, self.loss.qprime)
        return (self.m,)

    @cached_property
    def onehot(self) -> np.ndarray:
        """Indicator matrix B restricted to the modelled columns."""
        B = np.zeros((self.blocks.n, self.loss.q))
        B[np.arange(self.blocks.n), self.responses - 1] = 1.0
        return B[:, : self.loss.qprime]

    @cached_property
    def curvature(self) -> CurvatureOperator:
        return curvature_bound(self)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != self.x_shape:
            raise ShapeMismatch(f"coefficients have shape {x.shape}, expected {self.x_shape}")
        return x

    def ridge(self, x: np.ndarray) -> float:
        return 0.5 * self.lam * float(np.sum(x * (self.blocks.GKGt @ x)))

    def data_fit(self, x) -> float:
        return objective_grad(self, x)[0] - self.ridge(self._check(x))

    # MajorantProblem
    def objective_grad(self, x):
        return objective_grad(self, x)

    def objective(self, x) -> float:
        return objective_grad(self, x)[0]

    def gradient(self, x) -> np.ndarray:
        return objective_grad(self, x)[1]

    def majorant_solve(self, g):
        return self.curvature.solve(g)

    def h_norm_sq(self, v) -> float:
        return self.curvature.norm_sq(v)

    def h_matvec(self, v):
        return self.curvature.matvec(v)

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.x_shape)

    def exact_hessian(self, x) -> np.ndarray:
        return exact_hessian(self, x)


def objective_grad(inst: ProblemInstance, x) -> Tuple[float, np.ndarray]:
    x = inst._check(x)
    KGt, GKGt = inst.blocks.KGt, inst.blocks.GKGt
    eta = KGt @ x
    ridge_grad = inst.lam * (GKGt @ x)
    ridge = 0.5 * float(np.sum(x * ridge_grad))
    b = inst.responses
    loss = inst.loss

    if isinstance(loss, SmoothedQuantileLoss):
        r = b - eta
        psi, _ = sq_loss_derivs(r, loss.tau, loss.h)
        f = float(np.sum(sq_loss_value(r, loss.tau, loss.h))) + ridge
        return f, -(KGt.T @ psi) + ridge_grad

    if isinstance(loss, LogisticLoss):
        f = float(np.sum(np.logaddexp(0.0, eta) - b * eta)) + ridge
        return f, -(KGt.T @ (b - expit(eta))) + ridge_grad

    # multinomial
    logits = eta
    if loss.parameterization == Parameterization.STANDARD:
        logits = np.hstack([eta, np.zeros((eta.shape[0], 1))])
    logp = log_softmax(logits, axis=1)
    loglik = float(np.sum(logp[np.arange(b.shape[0]), b - 1]))
    P = np.exp(logp[:, : loss.qprime])
    return -loglik + ridge, -(KGt.T @ (inst.onehot - P)) + ridge_grad


def exact_hessian(inst: ProblemInstance, x) -> np.ndarray:
    x = inst._check(x)
    KGt, GKGt, GK2Gt = inst.blocks.KGt, inst.blocks.GKGt, inst.blocks.GK2Gt
    eta = KGt @ x
    loss = inst.loss

    if isinstance(loss, SmoothedQuantileLoss):
        _, w = sq_loss_derivs(inst.responses - eta, loss.tau, loss.h)
        return KGt.T @ (w[:, None] * KGt) + inst.lam * GKGt

    if isinstance(loss, LogisticLoss):
        p = expit(eta)
        return KGt.T @ ((p * (1.0 - p))[:, None] * KGt) + inst.lam * GKGt

    # sum_i (diag(p_i) - p_i p_i') (x) k_i k_i', assembled one m x m block at a time
    m, qp = inst.m, loss.qprime
    P = multinomial_probabilities(eta, loss.parameterization)[:, :qp]
    H = np.empty((m * qp, m * qp))
    for j in range(qp):
        for l in range(j, qp):
            w = P[:, j] * ((1.0 if j == l else 0.0) - P[:, l])
            blk = KGt.T @ (w[:, None] * KGt)
            if j == l:
                blk = blk + inst.lam * GKGt
            H[j * m:(j + 1) * m, l * m:(l + 1) * m] = blk
            H[l * m:(l + 1) * m, j * m:(j + 1) * m] = blk.T
    return H


def curvature_bound(inst: ProblemInstance) -> CurvatureOperator:
    blocks = inst.blocks
    loss = inst.loss
    if isinstance(loss, MultinomialSpec):
        if inst.lam == 0:
            try:
                chol = cholesky(blocks.GK2Gt)
            except NotPositiveDefinite as e:
                raise NotPositiveDefinite("GK^2G' is singular; lam = 0 needs a full-rank sketch") from e
            return KroneckerCurvature(E=loss.E(), Einv=einv_matrix(loss.qprime, loss.einv_scale),
                                      GK2Gt=blocks.GK2Gt, chol=chol)
        plan = inst.plan
        if plan is None:
            plan = build_plan(blocks.GKGt, blocks.GK2Gt, inst.delta, loss.qprime, loss.einv_scale)
        return SylvesterCurvature(plan=plan, lam=inst.lam, E=loss.E(),
                                  GKGt=blocks.GKGt, GK2Gt=blocks.GK2Gt)

    H = loss.curvature_scale * blocks.GK2Gt + inst.lam * blocks.GKGt + inst.delta * np.eye(blocks.m)
    H = 0.5 * (H + H.T)
    return DenseCurvature(H=H, chol=cholesky(H))


def dense_curvature(inst: ProblemInstance) -> np.ndarray:
    """H as an explicit matrix; for the multinomial family in column-major vec order."""
    curv = inst.curvature
    if isinstance(curv, DenseCurvature):
        return curv.H
    H = np.kron(curv.E, inst.blocks.GK2Gt)
    if isinstance(curv, SylvesterCurvature):
        m, qp = inst.m, inst.loss.qprime
        H = H + inst.lam * np.kron(np.eye(qp), inst.blocks.GKGt) + inst.lam * curv.delta * np.eye(m * qp)
    return H


@dataclass
class ProblemFactory:
    """lambda -> ProblemInstance over fixed blocks; one Sylvester plan for every lambda."""
    blocks: SketchedBlocks
    loss: Loss
    responses: np.ndarray

    @cached_property
    def plan(self) -> Optional[SylvesterPlan]:
        if not isinstance(self.loss, MultinomialSpec):
            return None
        return build_plan(self.blocks.GKGt, self.blocks.GK2Gt, self.blocks.delta,
                          self.loss.qprime, self.loss.einv_scale)

    def __call__(self, lam: float) -> ProblemInstance:
        return ProblemInstance(blocks=self.blocks, loss=self.loss, responses=self.responses,
                               lam=float(lam), plan=self.plan)


def bohning_bound_check(p) -> float:
    """Smallest eigenvalue of 1/2 (I - 11'/q) - (diag(p) - pp')."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2 or np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-10:
        raise NotASimplexPoint("p must be a probability vector of length >= 2")
    q = p.size
    gap = 0.5 * (np.eye(q) - np.ones((q, q)) / q) - (np.diag(p) - np.outer(p, p))
    return float(np.linalg.eigvalsh(gap)[0])
