# app/services/codon.py
"""
Codon-usage classification data.

The CSV has a header row; column 1 holds the taxonomic class, columns 6-69 the
64 codon frequencies. Only the first two feature columns may be missing or
unparsable; those entries are imputed with the column mean before every
feature column is standardized.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from app.errors import MalformedRow, NonNumericFeature, QmmeError
from app.services.baselines import BaselineConfig
from app.services.kernel import KernelSpec, SketchSpec, SketchStrategy, assemble_blocks_from_data, cross_kernel, make_sketch
from app.services.losses import MultinomialSpec, Parameterization, ProblemFactory
from app.services.path import MetricKind, PathConfig, PathResult, ValidationData, predict, run_path, run_solver, validation_metric
from app.services.qmme import QmmeConfig

logger = logging.getLogger(__name__)

LABEL_COLUMN = 0
FEATURE_START = 5
N_FEATURES = 64
IMPUTABLE = 2

SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class CodonDataset:
    labels: np.ndarray
    features: np.ndarray
    meta: List[str]
    class_names: List[str]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def q(self) -> int:
        return len(self.class_names)


def _parse_feature(raw: str, row_number: int, column: str, imputable: bool) -> float:
    raw = raw.strip()
    try:
        value = float(raw)
    except ValueError:
        if imputable:
            return float("nan")
        raise NonNumericFeature(row_number, column, raw) from None
    if not np.isfinite(value):
        if imputable:
            return float("nan")
        raise NonNumericFeature(row_number, column, raw)
    return value


def load_codon_csv(path) -> CodonDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(1, "file is empty") from None
        if len(header) < FEATURE_START + N_FEATURES:
            raise MalformedRow(1, f"header has {len(header)} columns, need {FEATURE_START + N_FEATURES}")
        feature_names = header[FEATURE_START:FEATURE_START + N_FEATURES]

        raw_labels: List[str] = []
        meta: List[str] = []
        rows: List[List[float]] = []
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(row_number, f"expected {len(header)} columns, found {len(row)}")
            raw_labels.append(row[LABEL_COLUMN].strip())
            meta.append(row[2].strip() if len(row) > 2 else str(row_number))
            rows.append([
                _parse_feature(row[FEATURE_START + j], row_number, feature_names[j], j < IMPUTABLE)
                for j in range(N_FEATURES)
            ])

    if not rows:
        raise MalformedRow(2, "no data rows")
    X = np.array(rows)
    for j in range(IMPUTABLE):
        missing = np.isnan(X[:, j])
        if missing.any():
            X[missing, j] = np.nanmean(X[:, j])
            logger.info(f"imputed {int(missing.sum())} missing values in column {feature_names[j]}")

    sd = X.std(axis=0)
    X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)

    class_names = sorted(set(raw_labels))
    index = {name: i + 1 for i, name in enumerate(class_names)}
    labels = np.array([index[name] for name in raw_labels], dtype=int)
    logger.info(f"loaded {X.shape[0]} rows, {len(class_names)} classes from {path}")
    return CodonDataset(labels=labels, features=X, meta=meta, class_names=class_names)


def split_indices(n: int, seed: int, fractions: Tuple[float, float, float] = SPLIT_FRACTIONS):
    """Seeded shuffle into train / validation / test index arrays."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


@dataclass
class CodonOutcome:
    path: PathResult
    best_lambda: float
    test_accuracy: float
    test_loglik: float
    seed: int
    error: Optional[str] = None


def _factory(A, labels, q, kernel: KernelSpec, m: int, delta: float, seed: int,
             parameterization: Parameterization):
    rows = make_sketch(A.shape[0], labels, SketchSpec(m=m, strategy=SketchStrategy.STRATIFIED, rng_seed=seed))
    blocks = assemble_blocks_from_data(A, rows, kernel, delta)
    loss = MultinomialSpec(q=q, parameterization=parameterization)
    return ProblemFactory(blocks=blocks, loss=loss, responses=labels), rows


def codon_workflow(ds: CodonDataset, kernel: KernelSpec, m: int, delta: float, seed: int,
                   path_config: PathConfig, qmme_config: Optional[QmmeConfig] = None,
                   baseline_config: Optional[BaselineConfig] = None,
                   parameterization: Parameterization = Parameterization.STANDARD) -> CodonOutcome:
    """Validation path on 70%, refit on 80% at the best lambda, score on the held-out 20%."""
    train, val, test = split_indices(ds.n, seed)
    A, y = ds.features, ds.labels

    factory, rows = _factory(A[train], y[train], ds.q, kernel, m, delta, seed, parameterization)
    val_data = ValidationData(K_new=cross_kernel(A[val], A[train][rows], kernel),
                              truth=y[val], kind=MetricKind.LOGLIK)
    path = run_path(factory, val_data, path_config, qmme_config, baseline_config)
    if not np.isfinite(path.best_lambda):
        return CodonOutcome(path, float("nan"), float("nan"), float("nan"), seed, "no lambda solved")

    refit = np.concatenate([train, val])
    factory, rows = _factory(A[refit], y[refit], ds.q, kernel, m, delta, seed + 1, parameterization)
    inst = factory(path.best_lambda)
    try:
        res = run_solver(inst, inst.initial_point(), path_config.solver, qmme_config, baseline_config)
    except QmmeError as e:
        logger.warning(f"refit at lambda={path.best_lambda:.3e} failed: {e}")
        return CodonOutcome(path, path.best_lambda, float("nan"), float("nan"), seed, str(e))

    probs = predict(inst, res.x, cross_kernel(A[test], A[refit][rows], kernel)).probabilities
    acc = validation_metric(MetricKind.ACCURACY, probs, y[test])
    ll = validation_metric(MetricKind.LOGLIK, probs, y[test])
    logger.info(f"codon seed={seed} lambda*={path.best_lambda:.3e} test accuracy={acc:.4f} loglik={ll:.2f}")
    return CodonOutcome(path, path.best_lambda, acc, ll, seed)
