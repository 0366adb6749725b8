# app/services/datagen.py
"""
Simulated regression and classification data.

Features are N(0, S) with S_ij = rho^|i-j|. The signals are

    eta1 = -4 + sin(a1) + a2 a3 + a4^3 - |a5| + 0.1 ||a6..ad||^2
    eta2 =  4 + cos(a1) + a2 a4 + a5^3 - |a3| - 0.1 ||a6..ad||^2

Quantile responses add t(1.5) noise to eta1, logistic responses are
Bernoulli(expit(eta1)), and multinomial labels 1..q draw from the softmax of
(eta1, eta2, 0, ..., 0) with the last class as reference.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np
import scipy.linalg as sla
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from app.services.losses import Parameterization, multinomial_probabilities

logger = logging.getLogger(__name__)

T_DOF = 1.5


class Family(str, Enum):
    QUANTILE = "quantile"
    LOGISTIC = "logistic"
    MULTINOMIAL = "multinomial"


class SimSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(ge=1)
    d: int = Field(50, ge=6)
    rho: float = Field(0.5, gt=-1, lt=1)
    family: Family = Family.QUANTILE
    q: int = Field(3, ge=3)
    rng_seed: int = 0


@dataclass(frozen=True)
class SimData:
    A: np.ndarray
    responses: np.ndarray
    signal: np.ndarray
    probabilities: Optional[np.ndarray] = None


def spawn_seeds(seed: int, count: int) -> List[int]:
    """Independent child seeds from one root seed (SeedSequence spawning)."""
    return [int(child.generate_state(1)[0])
            for child in np.random.SeedSequence(seed).spawn(count)]


def ar_covariance(d: int, rho: float = 0.5) -> np.ndarray:
    return sla.toeplitz(rho ** np.arange(d))


def student_t(rng: np.random.Generator, size, dof: float = T_DOF) -> np.ndarray:
    """normal / sqrt(chi2_dof / dof), with chi2_dof drawn as Gamma(dof/2, 2)."""
    z = rng.standard_normal(size)
    chi2 = rng.gamma(dof / 2.0, 2.0, size)
    return z / np.sqrt(chi2 / dof)


def design_matrix(rng: np.random.Generator, n: int, d: int, rho: float) -> np.ndarray:
    L = sla.cholesky(ar_covariance(d, rho), lower=True)
    return rng.standard_normal((n, d)) @ L.T


def signals(A: np.ndarray) -> np.ndarray:
    a = A
    tail = np.sum(a[:, 5:] ** 2, axis=1)
    eta1 = -4.0 + np.sin(a[:, 0]) + a[:, 1] * a[:, 2] + a[:, 3] ** 3 - np.abs(a[:, 4]) + 0.1 * tail
    eta2 = 4.0 + np.cos(a[:, 0]) + a[:, 1] * a[:, 3] + a[:, 4] ** 3 - np.abs(a[:, 2]) - 0.1 * tail
    return np.column_stack([eta1, eta2])


def simulate(spec: SimSpec) -> SimData:
    rng = np.random.Generator(np.random.PCG64(spec.rng_seed))
    A = design_matrix(rng, spec.n, spec.d, spec.rho)
    eta = signals(A)

    if spec.family == Family.QUANTILE:
        b = eta[:, 0] + student_t(rng, spec.n)
        return SimData(A=A, responses=b, signal=eta[:, 0])

    if spec.family == Family.LOGISTIC:
        b = (rng.uniform(size=spec.n) < expit(eta[:, 0])).astype(float)
        return SimData(A=A, responses=b, signal=eta[:, 0])

    logits = np.zeros((spec.n, spec.q - 1))
    logits[:, :2] = eta
    P = multinomial_probabilities(logits, Parameterization.STANDARD)
    # inverse-CDF draw per row
    u = rng.uniform(size=(spec.n, 1))
    labels = np.minimum((u > np.cumsum(P, axis=1)).sum(axis=1), spec.q - 1) + 1
    return SimData(A=A, responses=labels.astype(int), signal=logits, probabilities=P)
