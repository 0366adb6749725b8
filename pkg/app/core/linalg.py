# app/core/linalg.py
"""
Dense factorizations as reusable objects.

Each factorization is computed once (Cholesky, lower real Schur, symmetric
spectral) and then applied many times. A process-wide counter records how many
factorizations of each kind were built so callers can verify reuse.
"""
from __future__ import annotations

import logging
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as sla

from app.errors import DimensionMismatch, NoConvergence, NonFiniteInput, NotPositiveDefinite, NotSymmetric
from app.settings import DEFAULT_TOLERANCES, Tolerances

logger = logging.getLogger(__name__)

_counts: Counter = Counter()
_counts_lock = threading.Lock()


def _bump(kind: str) -> None:
    with _counts_lock:
        _counts[kind] += 1


def factorization_counts() -> Dict[str, int]:
    with _counts_lock:
        return {k: _counts.get(k, 0) for k in ("cholesky", "schur", "eigen")}


def reset_factorization_counts() -> None:
    with _counts_lock:
        _counts.clear()


@dataclass(frozen=True)
class CholeskyFactor:
    L: np.ndarray
    source_dim: int


@dataclass(frozen=True)
class SchurFactor:
    """A = U @ T @ U.T with T lower quasi-triangular (1x1 and 2x2 diagonal blocks)."""
    U: np.ndarray
    T: np.ndarray

    def diagonal_blocks(self) -> List[Tuple[int, int]]:
        return diagonal_blocks(self.T)

    def eigenvalues(self) -> np.ndarray:
        out: List[complex] = []
        for start, size in self.diagonal_blocks():
            if size == 1:
                out.append(complex(self.T[start, start]))
            else:
                blk = self.T[start:start + 2, start:start + 2]
                tr = blk[0, 0] + blk[1, 1]
                det = blk[0, 0] * blk[1, 1] - blk[0, 1] * blk[1, 0]
                disc = np.sqrt(complex(tr * tr / 4.0 - det))
                out.extend([tr / 2.0 + disc, tr / 2.0 - disc])
        return np.array(out)


@dataclass(frozen=True)
class SpectralFactor:
    V: np.ndarray
    d: np.ndarray


def _as_square(A, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {A.shape}")
    return A


def check_symmetric(A: np.ndarray, tol: float = DEFAULT_TOLERANCES.symmetry) -> None:
    scale = float(np.max(np.abs(A))) if A.size else 0.0
    asym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
    if asym > tol * max(scale, np.finfo(float).tiny):
        raise NotSymmetric(f"max asymmetry {asym:.3e} exceeds {tol:.0e} relative to max entry {scale:.3e}")


def cholesky(A, tol: Tolerances = DEFAULT_TOLERANCES) -> CholeskyFactor:
    A = _as_square(A)
    check_symmetric(A, tol.symmetry)
    try:
        L = sla.cholesky(A, lower=True, check_finite=True)
    except sla.LinAlgError as e:
        raise NotPositiveDefinite(f"Cholesky failed ({e}); increase the damping delta") from e
    diag = np.diag(L)
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise NotPositiveDefinite("non-positive pivot in Cholesky factor; increase the damping delta")
    _bump("cholesky")
    return CholeskyFactor(L=L, source_dim=A.shape[0])


def cholesky_solve(F: CholeskyFactor, B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.shape[0] != F.source_dim:
        raise DimensionMismatch(f"right-hand side has {B.shape[0]} rows, factor has dimension {F.source_dim}")
    return sla.cho_solve((F.L, True), B, check_finite=False)


def diagonal_blocks(T: np.ndarray) -> List[Tuple[int, int]]:
    """(start, size) of the diagonal blocks of a lower quasi-triangular matrix."""
    m = T.shape[0]
    blocks: List[Tuple[int, int]] = []
    i = 0
    while i < m:
        if i + 1 < m and T[i, i + 1] != 0.0:
            blocks.append((i, 2))
            i += 2
        else:
            blocks.append((i, 1))
            i += 1
    return blocks


def real_schur_lower(A) -> SchurFactor:
    A = _as_square(A)
    if not np.all(np.isfinite(A)):
        raise NonFiniteInput("real Schur input has non-finite entries")
    # upper real Schur of A.T, transposed: A = U T_upper.T U.T
    try:
        T_upper, U = sla.schur(A.T, output="real")
    except sla.LinAlgError as e:
        raise NoConvergence(f"real Schur QR iteration did not converge: {e}") from e
    _bump("schur")
    return SchurFactor(U=U, T=np.ascontiguousarray(T_upper.T))


def symmetric_eigen(A, tol: Tolerances = DEFAULT_TOLERANCES) -> SpectralFactor:
    A = _as_square(A)
    check_symmetric(A, tol.symmetry)
    try:
        d, V = sla.eigh(A)
    except sla.LinAlgError as e:
        raise NoConvergence(f"symmetric eigensolver did not converge: {e}") from e
    _bump("eigen")
    return SpectralFactor(V=V, d=d)


def relative_frobenius(residual: np.ndarray, reference: np.ndarray) -> float:
    ref = float(np.linalg.norm(reference))
    return float(np.linalg.norm(residual)) / (ref if ref > 0 else 1.0)


def power_iteration(matvec, shape, tol: float = DEFAULT_TOLERANCES.power_iteration,
                    max_iters: int = DEFAULT_TOLERANCES.power_iteration_max_iters,
                    seed: Optional[int] = 0) -> float:
    """Largest eigenvalue of a symmetric PSD operator given only its action."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iters):
        w = matvec(v)
        new_est = float(np.sum(v * w))
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(new_est - est) <= tol * abs(new_est):
            return new_est
        est = new_est
    logger.warning(f"power iteration stopped after {max_iters} steps at estimate {est:.6e}")
    return est
