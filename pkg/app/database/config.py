import logging
from typing import Optional

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from app.config import Config

logger = logging.getLogger(__name__)

engine: Optional[Engine] = None
SessionLocal = sessionmaker(autocommit=False,
                            autoflush=False)
_configured_url: Optional[str] = None


def configure_database(url: Optional[str] = None) -> Engine:
    """Bind the session factory to the ledger database; reuses the engine for the same URL."""
    global engine, _configured_url
    if engine is not None and url in (None, _configured_url):
        return engine
    url = url or Config.LEDGER_DATABASE_URL

    if url.startswith('sqlite'):
        options = {
            'connect_args': {
                'check_same_thread': False}}  # Required for SQLite with multiple threads
        if url in ('sqlite://', 'sqlite:///:memory:'):
            # One shared connection keeps the in-memory database alive across sessions
            options['poolclass'] = StaticPool
    else:
        options = {}
    engine = create_engine(url,
                           echo=False,
                           **options)
    SessionLocal.configure(bind=engine)
    _configured_url = url
    logger.debug(f"Ledger database bound to {url}")
    return engine


def get_db():
    """Get database session."""
    if engine is None:
        configure_database()
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
