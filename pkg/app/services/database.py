# app/services/database.py
from __future__ import annotations

import logging
import threading
from pathlib import Path
from typing import Dict

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine, make_url
from sqlalchemy.orm import Session, sessionmaker

from app.db.models import Base

logger = logging.getLogger(__name__)

_engines: Dict[str, Engine] = {}
_factories: Dict[str, sessionmaker] = {}
_lock = threading.Lock()


def get_engine(url: str) -> Engine:
    with _lock:
        if url not in _engines:
            parsed = make_url(url)
            if parsed.get_backend_name() == "sqlite" and parsed.database not in (None, "", ":memory:"):
                Path(parsed.database).parent.mkdir(parents=True, exist_ok=True)
            _engines[url] = create_engine(url, pool_pre_ping=True)
            _factories[url] = sessionmaker(bind=_engines[url], autoflush=False, autocommit=False)
        return _engines[url]


def session_for(url: str) -> Session:
    get_engine(url)
    return _factories[url]()


def init_db(url: str) -> None:
    Base.metadata.create_all(bind=get_engine(url))
    logger.debug(f"results store ready at {url}")
