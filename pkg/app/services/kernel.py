# app/services/kernel.py
"""
RBF kernels, Nystrom row sketches and the sketched problem blocks.

G selects m rows of the n x n identity, so every block the solvers need is a
slice or a product of K G':

    KGt   = K G'        (n x m)
    GKGt  = G K G'      (m x m, rows of KGt at the sketch indices)
    GK2Gt = G K K G'    (m x m, KGt' KGt)
"""
from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from app.errors import ClassTooSmallWarning, DimensionMismatch

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_ROWS = 1024


class KernelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    sigma: float = Field(gt=0)
    kind: Literal["rbf"] = "rbf"


class SketchStrategy(str, Enum):
    UNIFORM = "uniform"
    STRATIFIED = "stratified"


class SketchSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    m: int = Field(ge=1)
    strategy: SketchStrategy = SketchStrategy.UNIFORM
    rng_seed: int = 0


@dataclass(frozen=True)
class SketchedBlocks:
    KGt: np.ndarray
    GKGt: np.ndarray
    GK2Gt: np.ndarray
    delta: float
    rows: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.KGt.shape[0]

    @property
    def m(self) -> int:
        return self.KGt.shape[1]

    def with_delta(self, delta: float) -> "SketchedBlocks":
        return replace(self, delta=float(delta))


def _rbf(sq_dist: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-sq_dist / (2.0 * sigma * sigma))


def _row_blocks(n: int, block_rows: int) -> List[Tuple[int, int]]:
    return [(i, min(i + block_rows, n)) for i in range(0, n, block_rows)]


def _workers(workers: Optional[int]) -> int:
    return max(1, workers or min(8, os.cpu_count() or 1))


def gram_matrix(A, spec: KernelSpec, workers: Optional[int] = None,
                block_rows: int = DEFAULT_BLOCK_ROWS) -> np.ndarray:
    """K_ij = exp(-||a_i - a_j||^2 / (2 sigma^2)).

    Row blocks of the upper triangle are computed in a thread pool and mirrored,
    so K is exactly symmetric with a unit diagonal whatever the worker count.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch(f"data matrix must be 2-d, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("data matrix has non-finite entries")
    n = A.shape[0]
    K = np.empty((n, n))

    def fill(bounds: Tuple[int, int]) -> None:
        i, j = bounds
        K[i:j, i:] = _rbf(cdist(A[i:j], A[i:], "sqeuclidean"), spec.sigma)

    blocks = _row_blocks(n, block_rows)
    with ThreadPoolExecutor(max_workers=_workers(workers)) as pool:
        list(pool.map(fill, blocks))

    # mirror the upper triangle
    for i, j in blocks:
        diag = K[i:j, i:j]
        K[i:j, i:j] = np.triu(diag) + np.triu(diag, 1).T
        K[j:, i:j] = K[i:j, j:].T
    np.fill_diagonal(K, 1.0)
    return K


def cross_kernel(A_new, A_ref, spec: KernelSpec, workers: Optional[int] = None,
                 block_rows: int = DEFAULT_BLOCK_ROWS) -> np.ndarray:
    A_new = np.asarray(A_new, dtype=float)
    A_ref = np.asarray(A_ref, dtype=float)
    if A_new.ndim != 2 or A_ref.ndim != 2 or A_new.shape[1] != A_ref.shape[1]:
        raise DimensionMismatch(f"feature dimensions differ: {A_new.shape} vs {A_ref.shape}")
    out = np.empty((A_new.shape[0], A_ref.shape[0]))

    def fill(bounds: Tuple[int, int]) -> None:
        i, j = bounds
        out[i:j] = _rbf(cdist(A_new[i:j], A_ref, "sqeuclidean"), spec.sigma)

    with ThreadPoolExecutor(max_workers=_workers(workers)) as pool:
        list(pool.map(fill, _row_blocks(A_new.shape[0], block_rows)))
    return out


def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    counts = np.floor(quotas).astype(int)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _stratified_counts(class_sizes: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = int(class_sizes.sum())
    alloc = _largest_remainder(m * class_sizes / n, m)
    deficit = int(np.maximum(alloc - class_sizes, 0).sum())
    if deficit:
        alloc = np.minimum(alloc, class_sizes)
        warnings.warn(
            f"{deficit} sketch rows exceed their class sizes and were reallocated",
            ClassTooSmallWarning, stacklevel=3,
        )
        while deficit:
            spare = np.flatnonzero(alloc < class_sizes)
            alloc[rng.choice(spare)] += 1
            deficit -= 1
    return alloc


def make_sketch(n: int, labels: Optional[Sequence] = None,
                spec: Optional[SketchSpec] = None) -> np.ndarray:
    """Row indices selected by G, sampled without replacement."""
    if spec is None:
        raise ValueError("a SketchSpec is required")
    if spec.m > n:
        raise ValueError(f"sketch size m={spec.m} exceeds n={n}")
    rng = np.random.default_rng(spec.rng_seed)

    if spec.strategy == SketchStrategy.UNIFORM:
        return rng.choice(n, size=spec.m, replace=False)

    if labels is None:
        raise ValueError("stratified sketching requires class labels")
    labels = np.asarray(labels)
    if labels.shape[0] != n:
        raise DimensionMismatch(f"got {labels.shape[0]} labels for n={n}")
    classes, inverse = np.unique(labels, return_inverse=True)
    sizes = np.bincount(inverse, minlength=classes.size)
    alloc = _stratified_counts(sizes, spec.m, rng)
    picked = [rng.choice(np.flatnonzero(inverse == c), size=int(a), replace=False)
              for c, a in enumerate(alloc) if a > 0]
    return np.sort(np.concatenate(picked))


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def assemble_blocks(K, rows, delta: float) -> SketchedBlocks:
    K = np.asarray(K, dtype=float)
    rows = np.asarray(rows, dtype=int)
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if rows.ndim != 1 or rows.size == 0 or rows.min() < 0 or rows.max() >= K.shape[0]:
        raise DimensionMismatch(f"sketch indices out of range for n={K.shape[0]}")
    KGt = np.ascontiguousarray(K[:, rows])
    return SketchedBlocks(
        KGt=KGt,
        GKGt=_symmetrize(KGt[rows]),
        GK2Gt=_symmetrize(KGt.T @ KGt),
        delta=float(delta),
        rows=rows,
    )


def assemble_blocks_from_data(A, rows, spec: KernelSpec, delta: float,
                              workers: Optional[int] = None) -> SketchedBlocks:
    """Same blocks as assemble_blocks(gram_matrix(A), rows) without forming K."""
    A = np.asarray(A, dtype=float)
    rows = np.asarray(rows, dtype=int)
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    KGt = cross_kernel(A, A[rows], spec, workers=workers)
    logger.debug(f"assembled streaming sketch blocks n={A.shape[0]} m={rows.size}")
    return SketchedBlocks(
        KGt=KGt,
        GKGt=_symmetrize(KGt[rows]),
        GK2Gt=_symmetrize(KGt.T @ KGt),
        delta=float(delta),
        rows=rows,
    )


def assemble_blocks_dense(K, G, delta: float) -> SketchedBlocks:
    """Blocks for an explicit dense sketching matrix G (m x n)."""
    K = np.asarray(K, dtype=float)
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[1] != K.shape[0]:
        raise DimensionMismatch(f"G {G.shape} does not match K {K.shape}")
    KGt = K @ G.T
    return SketchedBlocks(
        KGt=KGt,
        GKGt=_symmetrize(G @ KGt),
        GK2Gt=_symmetrize(KGt.T @ KGt),
        delta=float(delta),
    )
