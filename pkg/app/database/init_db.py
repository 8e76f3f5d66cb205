import logging
from pathlib import Path
from typing import Optional

from app.database.config import configure_database
from app.models.models import Base

logger = logging.getLogger(__name__)


def init_db(url: Optional[str] = None):
    """Initialize the ledger database by creating all tables."""
    try:
        engine = configure_database(url)
        database = engine.url.database
        if engine.url.get_backend_name() == 'sqlite' and database and database != ':memory:':
            Path(database).parent.mkdir(parents=True,
                                        exist_ok=True)
        logger.info("Creating ledger tables...")
        Base.metadata.create_all(bind=engine)
        logger.info("Ledger tables created successfully!")
        return engine
    except Exception as e:
        logger.error(f"Error creating ledger tables: {str(e)}")
        raise


if __name__ == "__main__":
    from app.config import configure_cli_logging

    configure_cli_logging('INFO')
    init_db()
