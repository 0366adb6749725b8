# app/services/results_repo.py
from __future__ import annotations

import logging
import math
import threading
from typing import Any, Dict, List, Optional

from sqlalchemy import select

from app.db.models import BenchResult, PathRow
from app.services.database import session_for
from app.services.path import PathResult

logger = logging.getLogger(__name__)

# SQLite allows one writer at a time
_write_lock = threading.Lock()


def _nullable(x: Optional[float]) -> Optional[float]:
    return None if x is None or not math.isfinite(x) else float(x)


def record_bench_row(url: str, run_tag: str, preset: str, row: Dict[str, Any]) -> int:
    """Persist one finished bench task immediately; returns the row id."""
    with _write_lock, session_for(url) as session:
        obj = BenchResult(
            run_tag=run_tag, preset=preset,
            family=row["family"], solver=row["solver"], m=int(row["m"]), q=int(row["q"]),
            seed=int(row["seed"]), lambda_best=_nullable(row["lambda_best"]),
            total_time_s=_nullable(row["total_time_s"]), metric=_nullable(row["metric"]),
            error=row.get("error"),
        )
        session.add(obj)
        session.commit()
        return obj.id


def record_path(url: str, run_tag: str, family: str, result: PathResult) -> List[int]:
    with _write_lock, session_for(url) as session:
        objs = [
            PathRow(
                run_tag=run_tag, family=family, solver=result.solver.value, position=pos,
                lam=e.lam, iterations=e.iterations, wall_time_s=e.wall_time_s,
                grad_norm=_nullable(e.grad_norm), metric=_nullable(e.metric),
                reason=e.reason, error=e.error,
            )
            for pos, e in enumerate(result.entries, start=1)
        ]
        session.add_all(objs)
        session.commit()
        return [o.id for o in objs]


def fetch_bench_rows(url: str, run_tag: str) -> List[Dict[str, Any]]:
    """Rows of one run in deterministic (family, m, q, seed, solver) order."""
    with session_for(url) as session:
        rows = session.execute(
            select(BenchResult)
            .where(BenchResult.run_tag == run_tag)
            .order_by(BenchResult.family, BenchResult.m, BenchResult.q, BenchResult.seed, BenchResult.solver)
        ).scalars().all()
        return [
            {
                "family": r.family, "solver": r.solver, "m": r.m, "q": r.q, "seed": r.seed,
                "lambda_best": r.lambda_best if r.lambda_best is not None else float("nan"),
                "total_time_s": r.total_time_s if r.total_time_s is not None else float("nan"),
                "metric": r.metric if r.metric is not None else float("nan"),
                "error": r.error,
            }
            for r in rows
        ]


def fetch_path_rows(url: str, run_tag: str) -> List[PathRow]:
    with session_for(url) as session:
        return list(session.execute(
            select(PathRow).where(PathRow.run_tag == run_tag).order_by(PathRow.position)
        ).scalars().all())
