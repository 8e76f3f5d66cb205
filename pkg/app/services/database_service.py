import hashlib
import json
import logging
from typing import List, \
    Optional

from sqlalchemy.orm import Session, \
    selectinload

from app.database.config import get_db
from app.database.init_db import init_db
from app.models.models import AccuracyRecord, \
    EvaluationRun
from app.services.evaluation_service import PHASES, \
    SETS, \
    EvaluationReport

logger = logging.getLogger(__name__)


def config_digest(report: EvaluationReport) -> str:
    """SHA-256 over the mode, domains and echoed configuration of a report."""
    payload = json.dumps({
        'mode': report.mode,
        'domains': list(report.domains),
        'config': report.config},
        sort_keys=True)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


class DatabaseService:
    """Service class for recording evaluation runs in the ledger."""

    def __init__(self, url: Optional[str] = None):
        self.url = url
        self.db: Optional[Session] = None

    def __enter__(self):
        """Context manager entry."""
        init_db(self.url)
        self.db = next(get_db())
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Context manager exit."""
        if self.db:
            self.db.close()

    def store_report(self, report: EvaluationReport, label: Optional[str] = None) -> EvaluationRun:
        """
        Store an evaluation report with one AccuracyRecord per non-empty cell.

        Args:
            report (EvaluationReport): Report produced by the evaluator
            label (Optional[str]): Run label; defaults to the report's own label

        Returns:
            EvaluationRun: The stored run, or the existing one if a run with the
                           same label and configuration digest is already recorded

        Raises:
            Exception: If database operation fails
        """
        try:
            if not self.db:
                raise Exception("Database session not initialized")

            run_label = label or report.label
            digest = config_digest(report)
            existing_run = self.db.query(EvaluationRun).filter(EvaluationRun.label == run_label,
                                                               EvaluationRun.config_digest == digest).first()
            if existing_run:
                logger.info(f"Run '{run_label}' already recorded as #{existing_run.id}")
                return existing_run

            run = EvaluationRun(mode=report.mode.get('kind',
                                                     ''),
                                label=run_label,
                                config_digest=digest,
                                document=report.render_document())
            document = report.to_document()
            for domain in report.domains:
                for subset in SETS:
                    for phase in PHASES:
                        accuracy = document['accuracy'][phase][domain][subset]
                        if accuracy is None:
                            continue
                        run.records.append(AccuracyRecord(domain=domain,
                                                          set=subset,
                                                          phase=phase,
                                                          accuracy=accuracy,
                                                          mia=document['mia'][domain]))

            self.db.add(run)
            self.db.commit()
            self.db.refresh(run)

            logger.info(f"Stored run '{run_label}' as #{run.id} with {len(run.records)} accuracy records")
            return run

        except Exception as e:
            logger.error(f"Error storing evaluation run: {str(e)}",
                         exc_info=True)
            if self.db:
                self.db.rollback()
            raise

    def list_runs(self, limit: int = 20) -> List[EvaluationRun]:
        """Most recent runs first, records loaded."""
        try:
            if not self.db:
                raise Exception("Database session not initialized")

            return (self.db.query(EvaluationRun)
                    .options(selectinload(EvaluationRun.records))
                    .order_by(EvaluationRun.created_at.desc(),
                              EvaluationRun.id.desc())
                    .limit(limit)
                    .all())

        except Exception as e:
            logger.error(f"Error listing evaluation runs: {str(e)}",
                         exc_info=True)
            raise

    def get_run(self, run_id: int) -> Optional[EvaluationRun]:
        try:
            if not self.db:
                raise Exception("Database session not initialized")
            return self.db.query(EvaluationRun).filter(EvaluationRun.id == run_id).first()
        except Exception as e:
            logger.error(f"Error retrieving evaluation run: {str(e)}",
                         exc_info=True)
            raise
