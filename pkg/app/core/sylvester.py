# app/core/sylvester.py
"""
Bartels-Stewart solver for the multinomial majorant step.

The normal equation of the multinomial quadratic majorant,

    GK^2G' D E + lam (GKG' + delta I) D = C,

is rewritten as the Sylvester equation

    M D + D (lam E^-1) = (GKG' + delta I)^-1 C E^-1,   M = (GKG' + delta I)^-1 GK^2G'.

M is brought to lower real Schur form once and E^-1 (symmetric) to spectral
form once; neither depends on lam, so one plan serves every iteration and
every value of lam on a solution path.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from app.core.linalg import (
    CholeskyFactor,
    SchurFactor,
    SpectralFactor,
    check_symmetric,
    cholesky,
    cholesky_solve,
    diagonal_blocks,
    real_schur_lower,
    symmetric_eigen,
)
from app.errors import DimensionMismatch, NotPositiveDefinite, SingularShift
from app.settings import DEFAULT_TOLERANCES, Tolerances

logger = logging.getLogger(__name__)


def einv_matrix(qprime: int, scale: float = 2.0) -> np.ndarray:
    """scale * (I + 11')."""
    return scale * (np.eye(qprime) + np.ones((qprime, qprime)))


@dataclass(frozen=True)
class SylvesterPlan:
    schur: SchurFactor
    eigE: SpectralFactor
    chol: CholeskyFactor
    Einv: np.ndarray
    delta: float

    @property
    def m(self) -> int:
        return self.chol.source_dim

    @property
    def qprime(self) -> int:
        return self.Einv.shape[0]

    @property
    def all_scalar_blocks(self) -> bool:
        T = self.schur.T
        return bool(T.shape[0] < 2 or not np.any(np.diag(T, 1)))


def build_plan(GKG, GK2G, delta: float, qprime: int, einv_scale: float = 2.0,
               tol: Tolerances = DEFAULT_TOLERANCES) -> SylvesterPlan:
    GKG = np.asarray(GKG, dtype=float)
    GK2G = np.asarray(GK2G, dtype=float)
    if GKG.shape != GK2G.shape or GKG.ndim != 2 or GKG.shape[0] != GKG.shape[1]:
        raise DimensionMismatch(f"GKG {GKG.shape} and GK2G {GK2G.shape} must be equal square matrices")
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if qprime < 1:
        raise ValueError(f"qprime must be >= 1, got {qprime}")
    check_symmetric(GKG, tol.symmetry)
    check_symmetric(GK2G, tol.symmetry)

    m = GKG.shape[0]
    try:
        chol = cholesky(GKG + delta * np.eye(m), tol)
    except NotPositiveDefinite as e:
        raise NotPositiveDefinite(f"GKG' + {delta:g} I is not positive definite; raise delta") from e
    M = cholesky_solve(chol, GK2G)
    schur = real_schur_lower(M)
    Einv = einv_matrix(qprime, einv_scale)
    eigE = symmetric_eigen(Einv, tol)
    logger.debug(f"built Sylvester plan m={m} qprime={qprime} delta={delta:g}")
    return SylvesterPlan(schur=schur, eigE=eigE, chol=chol, Einv=Einv, delta=float(delta))


def solve_shifted_quasi_lower(T: np.ndarray, R: np.ndarray, shifts: np.ndarray,
                              tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Solve (T + shifts[j] I) z_j = R[:, j] for every column j.

    T is lower quasi-triangular. Block forward substitution runs over the
    diagonal blocks once, updating all columns together.
    """
    T = np.asarray(T, dtype=float)
    R = np.asarray(R, dtype=float)
    shifts = np.asarray(shifts, dtype=float)
    if R.ndim != 2 or R.shape[0] != T.shape[0] or R.shape[1] != shifts.shape[0]:
        raise DimensionMismatch(f"T {T.shape}, R {R.shape}, shifts {shifts.shape} are incompatible")

    m = T.shape[0]
    scale = float(np.max(np.abs(T))) if m else 0.0
    Z = np.empty_like(R)
    for start, size in diagonal_blocks(T):
        rhs = R[start:start + size] - T[start:start + size, :start] @ Z[:start]
        if size == 1:
            denom = T[start, start] + shifts
            ref = np.maximum(np.abs(T[start, start]) + np.abs(shifts), 1.0)
            if np.any(np.abs(denom) < tol.singular_shift * ref):
                raise SingularShift(f"shifted 1x1 block at {start} is singular; spectra overlap")
            Z[start] = rhs[0] / denom
        else:
            a, b = T[start, start], T[start, start + 1]
            c, d = T[start + 1, start], T[start + 1, start + 1]
            ap, dp = a + shifts, d + shifts
            det = ap * dp - b * c
            ref = np.maximum((scale + np.abs(shifts)) ** 2, 1.0)
            if np.any(np.abs(det) < tol.singular_shift * ref):
                raise SingularShift(f"shifted 2x2 block at {start} is singular; spectra overlap")
            Z[start] = (dp * rhs[0] - b * rhs[1]) / det
            Z[start + 1] = (ap * rhs[1] - c * rhs[0]) / det
    return Z


def _solve_shifted_triangular(T: np.ndarray, R: np.ndarray, shifts: np.ndarray,
                              tol: Tolerances) -> np.ndarray:
    # no 2x2 blocks: one LAPACK triangular solve per column
    diag = np.diag(T)
    ref = np.maximum(np.abs(diag)[:, None] + np.abs(shifts)[None, :], 1.0)
    if np.any(np.abs(diag[:, None] + shifts[None, :]) < tol.singular_shift * ref):
        raise SingularShift("shifted diagonal entry is singular; spectra overlap")
    Z = np.empty_like(R)
    eye = np.eye(T.shape[0])
    for j, s in enumerate(shifts):
        Z[:, j] = sla.solve_triangular(T + s * eye, R[:, j], lower=True, check_finite=False)
    return Z


def sylvester_rhs(plan: SylvesterPlan, Ck: np.ndarray) -> np.ndarray:
    """(GKG' + delta I)^-1 Ck E^-1."""
    return cholesky_solve(plan.chol, Ck @ plan.Einv)


def solve_sylvester(plan: SylvesterPlan, lam: float, Ck,
                    tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    Ck = np.asarray(Ck, dtype=float)
    if Ck.shape != (plan.m, plan.qprime):
        raise DimensionMismatch(f"Ck has shape {Ck.shape}, plan expects {(plan.m, plan.qprime)}")
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")

    U, T = plan.schur.U, plan.schur.T
    V = plan.eigE.V
    C_tilde = sylvester_rhs(plan, Ck)
    R = U.T @ C_tilde @ V
    shifts = lam * plan.eigE.d
    if plan.all_scalar_blocks:
        Z = _solve_shifted_triangular(T, R, shifts, tol)
    else:
        Z = solve_shifted_quasi_lower(T, R, shifts, tol)
    return U @ Z @ V.T


def sylvester_operator_dense(plan: SylvesterPlan, lam: float,
                             M: Optional[np.ndarray] = None) -> np.ndarray:
    """Kronecker form (lam E^-1' (x) I + I (x) M) acting on column-major vec(D)."""
    if M is None:
        M = plan.schur.U @ plan.schur.T @ plan.schur.U.T
    return np.kron(lam * plan.Einv.T, np.eye(plan.m)) + np.kron(np.eye(plan.qprime), M)
