# app/db/models.py
from __future__ import annotations

from datetime import datetime, timezone
from typing import Optional

from sqlalchemy import DateTime, Float, Index, Integer, String, Text
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column


class Base(DeclarativeBase):
    pass


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class BenchResult(Base):
    __tablename__ = "bench_results"

    id: Mapped[int] = mapped_column(primary_key=True)
    run_tag: Mapped[str] = mapped_column(String(80), nullable=False, index=True)
    preset: Mapped[str] = mapped_column(String(20), nullable=False)

    family: Mapped[str] = mapped_column(String(20), nullable=False)
    solver: Mapped[str] = mapped_column(String(20), nullable=False)
    m: Mapped[int] = mapped_column(Integer, nullable=False)
    q: Mapped[int] = mapped_column(Integer, nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)

    lambda_best: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    total_time_s: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    metric: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    error: Mapped[Optional[str]] = mapped_column(Text, nullable=True)

    created_at: Mapped[datetime] = mapped_column(DateTime(timezone=True), default=_utcnow, nullable=False)


Index("ix_bench_results_setting", BenchResult.run_tag, BenchResult.family, BenchResult.m, BenchResult.q)


class PathRow(Base):
    __tablename__ = "path_rows"

    id: Mapped[int] = mapped_column(primary_key=True)
    run_tag: Mapped[str] = mapped_column(String(80), nullable=False, index=True)
    family: Mapped[str] = mapped_column(String(20), nullable=False)
    solver: Mapped[str] = mapped_column(String(20), nullable=False)
    position: Mapped[int] = mapped_column(Integer, nullable=False)

    lam: Mapped[float] = mapped_column(Float, nullable=False)
    iterations: Mapped[int] = mapped_column(Integer, nullable=False)
    wall_time_s: Mapped[float] = mapped_column(Float, nullable=False)
    grad_norm: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    metric: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    reason: Mapped[str] = mapped_column(String(20), nullable=False)
    error: Mapped[Optional[str]] = mapped_column(Text, nullable=True)

    created_at: Mapped[datetime] = mapped_column(DateTime(timezone=True), default=_utcnow, nullable=False)
