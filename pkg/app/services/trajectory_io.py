# app/services/trajectory_io.py
"""CSV and JSON outputs: trajectories, path tables, bench tables, datasets, run metadata."""
from __future__ import annotations

import csv
import json
import logging
import platform
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import scipy

from app.errors import TrajectoryIoError
from app.services.datagen import SimData
from app.services.path import PathResult
from app.services.qmme import IterationRecord

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["k", "f", "grad_norm", "E_k", "beta", "restarted", "wall_time_s"]
PATH_COLUMNS = ["lambda", "iterations", "wall_time_s", "grad_norm", "metric", "objective",
                "data_fit", "reason", "error"]
BENCH_COLUMNS = ["family", "solver", "m", "q", "lambda_best", "total_time_s", "metric", "seed"]


def fmt(value: Optional[float]) -> str:
    """17 significant digits, so float(fmt(x)) == x."""
    if value is None:
        return ""
    return format(float(value), ".17g")


def _parse_float(raw: str) -> Optional[float]:
    return None if raw == "" else float(raw)


def _write_rows(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise TrajectoryIoError(f"cannot write {path}: {e}") from e
    return path


def emit_trajectory(trajectory: List[IterationRecord], path) -> Path:
    if not trajectory:
        raise ValueError("trajectory is empty")
    rows = ([r.k, fmt(r.f), fmt(r.grad_norm), fmt(r.E_k), fmt(r.beta), int(r.restarted), fmt(r.wall_time_s)]
            for r in trajectory)
    return _write_rows(path, TRAJECTORY_COLUMNS, rows)


def read_trajectory(path) -> List[IterationRecord]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != TRAJECTORY_COLUMNS:
                raise TrajectoryIoError(f"{path}: unexpected header {reader.fieldnames}")
            return [IterationRecord(
                k=int(row["k"]),
                f=float(row["f"]),
                grad_norm=float(row["grad_norm"]),
                E_k=_parse_float(row["E_k"]),
                beta=float(row["beta"]),
                restarted=row["restarted"] == "1",
                wall_time_s=float(row["wall_time_s"]),
            ) for row in reader]
    except OSError as e:
        raise TrajectoryIoError(f"cannot read {path}: {e}") from e


def write_path_table(result: PathResult, path) -> Path:
    rows = ([fmt(e.lam), e.iterations, fmt(e.wall_time_s), fmt(e.grad_norm), fmt(e.metric),
             fmt(e.objective), fmt(e.data_fit), e.reason, e.error or ""]
            for e in result.entries)
    return _write_rows(path, PATH_COLUMNS, rows)


def bench_sort_key(row: Dict[str, Any]):
    return (row["family"], row["m"], row["q"], row["seed"], row["solver"])


def write_bench_table(rows: List[Dict[str, Any]], path) -> Path:
    ordered = sorted(rows, key=bench_sort_key)
    out = ([r["family"], r["solver"], r["m"], r["q"], fmt(r["lambda_best"]), fmt(r["total_time_s"]),
            fmt(r["metric"]), r["seed"]] for r in ordered)
    return _write_rows(path, BENCH_COLUMNS, out)


def read_table(path) -> List[Dict[str, str]]:
    try:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except OSError as e:
        raise TrajectoryIoError(f"cannot read {path}: {e}") from e


def write_dataset_csv(data: SimData, path) -> Path:
    d = data.A.shape[1]
    signal = np.atleast_2d(data.signal.T).T
    header = [f"a{j + 1}" for j in range(d)] + ["response"] + [f"eta{j + 1}" for j in range(signal.shape[1])]
    rows = ([fmt(v) for v in data.A[i]] + [fmt(data.responses[i])] + [fmt(v) for v in signal[i]]
            for i in range(data.A.shape[0]))
    return _write_rows(path, header, rows)


def package_versions() -> Dict[str, str]:
    try:
        pkg = metadata.version("qmme-kernel")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "qmme-kernel": pkg,
    }


def write_metadata(path, config: Dict[str, Any], seeds: List[int], command: str) -> Path:
    """JSON sidecar: config echo, versions and seeds of a run."""
    path = Path(path)
    doc = {
        "command": command,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config": config,
        "seeds": list(seeds),
        "versions": package_versions(),
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    except OSError as e:
        raise TrajectoryIoError(f"cannot write {path}: {e}") from e
    return path
