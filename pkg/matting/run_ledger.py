"""
Run ledger: one row per CLI invocation plus one row per written artifact.

Enabled by MATTING_LEDGER_URL (any SQLAlchemy URL, e.g. sqlite:///runs.db).
"""
from datetime import datetime
import uuid

from sqlalchemy import JSON, Column, DateTime, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from matting.shared.utils import to_dict_helper, to_json_primitive

Base = declarative_base()


class Run(Base):
    __tablename__ = 'runs'
    run_id = Column(String(255), primary_key=True, default=lambda: f"run_{uuid.uuid4()}")
    subcommand = Column(String(50), nullable=False)
    seed = Column(String(20))  # u64 seeds overflow SQLite integers
    tool_version = Column(String(50), nullable=False)
    config = Column(JSON)
    status = Column(String(50), nullable=False)  # 'success' or 'error'
    message = Column(Text)
    duration_ms = Column(Integer)
    created_at = Column(DateTime, default=datetime.now)

    def to_dict(self):
        return to_dict_helper(self)


class Artifact(Base):
    __tablename__ = 'artifacts'
    artifact_id = Column(String(255), primary_key=True, default=lambda: f"artifact_{uuid.uuid4()}")
    run_id = Column(String(255), ForeignKey('runs.run_id'), nullable=False)
    path = Column(Text, nullable=False)
    kind = Column(String(50))

    def to_dict(self):
        return to_dict_helper(self)


class RunLedger:
    def __init__(self, url: str):
        self.url = url
        self.engine = create_engine(url)
        Base.metadata.create_all(self.engine)
        self.Session = sessionmaker(bind=self.engine, expire_on_commit=False)

    def record_run(self, subcommand: str, seed, tool_version: str, config: dict, status: str,
                   message: str = None, duration_ms: int = None) -> str:
        with self.Session() as session:
            try:
                run = Run(
                    subcommand=subcommand,
                    seed=None if seed is None else str(seed),
                    tool_version=tool_version,
                    config=to_json_primitive(config),
                    status=status,
                    message=message,
                    duration_ms=duration_ms,
                )
                session.add(run)
                session.commit()
                return run.run_id
            except Exception:
                session.rollback()
                raise

    def record_artifacts(self, run_id: str, artifacts) -> int:
        """Store (path, kind) pairs for a run; returns how many were written."""
        rows = [Artifact(run_id=run_id, path=str(path), kind=kind) for path, kind in artifacts]
        with self.Session() as session:
            try:
                session.add_all(rows)
                session.commit()
            except Exception:
                session.rollback()
                raise
        return len(rows)

    def list_runs(self, limit: int = 50):
        with self.Session() as session:
            runs = session.query(Run).order_by(Run.created_at.desc()).limit(limit).all()
            return [run.to_dict() for run in runs]

    def list_artifacts(self, run_id: str):
        with self.Session() as session:
            rows = session.query(Artifact).filter_by(run_id=run_id).all()
            return [row.to_dict() for row in rows]
