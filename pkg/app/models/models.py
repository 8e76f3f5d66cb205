from datetime import datetime, \
    timezone

from sqlalchemy import Column, \
    DateTime, \
    Float, \
    ForeignKey, \
    Integer, \
    String, \
    Text, \
    UniqueConstraint
from sqlalchemy.orm import declarative_base, \
    relationship

Base = declarative_base()


def utc_now():
    return datetime.now(timezone.utc)


class EvaluationRun(Base):
    __tablename__ = 'evaluation_runs'
    id = Column(Integer,
                primary_key=True)
    mode = Column(String)
    label = Column(String)
    config_digest = Column(String(64))
    document = Column(Text)
    created_at = Column(DateTime,
                        default=utc_now)

    # A rerun with the same label and configuration is the same run
    __table_args__ = (
        UniqueConstraint('label',
                         'config_digest',
                         name='uq_run_label_digest'),
    )

    # Relationships
    records = relationship("AccuracyRecord",
                           back_populates="run",
                           cascade="all, delete-orphan",
                           order_by="AccuracyRecord.id")

    def to_dict(self):
        return {
            'id': self.id,
            'mode': self.mode,
            'label': self.label,
            'config_digest': self.config_digest,
            'created_at': self.created_at.isoformat() if self.created_at else None,
            'records': [record.to_dict() for record in self.records]}


class AccuracyRecord(Base):
    __tablename__ = 'accuracy_records'
    id = Column(Integer,
                primary_key=True)
    run_id = Column(Integer,
                    ForeignKey('evaluation_runs.id'))
    domain = Column(String)
    set = Column(String)
    phase = Column(String(2))
    accuracy = Column(Float)
    mia = Column(Float,
                 nullable=True)

    # Relationships
    run = relationship("EvaluationRun",
                       back_populates="records")

    def to_dict(self):
        return {
            'domain': self.domain,
            'set': self.set,
            'phase': self.phase,
            'accuracy': self.accuracy,
            'mia': self.mia}
