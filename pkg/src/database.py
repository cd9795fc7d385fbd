"""
Run registry for persisted sweeps.
Records every stored experiment and its per-eps headline numbers using SQLAlchemy with SQLite.
"""
from sqlalchemy import create_engine, Column, Integer, String, Text, Float, DateTime, Boolean, ForeignKey
from sqlalchemy.orm import declarative_base, sessionmaker, relationship
from datetime import datetime
from typing import Optional, List, Dict, Any
import math
import logging

from src.config import DEFAULT_DATABASE_URL

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Base = declarative_base()


def _finite_or_none(value) -> Optional[float]:
    if value is None:
        return None
    try:
        value = float(value)
    except (TypeError, ValueError):
        return None
    return value if math.isfinite(value) else None


class ExperimentRun(Base):
    """One persisted sweep"""
    __tablename__ = 'experiment_runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    name = Column(String(255), nullable=False)
    config_hash = Column(String(64), nullable=False, index=True)
    output_dir = Column(String(1024), nullable=False)
    row_count = Column(Integer, default=0)
    all_passed = Column(Boolean, default=False)
    notes = Column(Text)
    created_at = Column(DateTime, default=datetime.utcnow)

    results = relationship("SweepResult", back_populates="run", cascade="all, delete-orphan")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'name': self.name,
            'config_hash': self.config_hash,
            'output_dir': self.output_dir,
            'row_count': self.row_count,
            'all_passed': self.all_passed,
            'notes': self.notes,
            'created_at': self.created_at.isoformat() if self.created_at else None,
        }


class SweepResult(Base):
    """Headline measurements of one eps of a sweep"""
    __tablename__ = 'sweep_results'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey('experiment_runs.id'), nullable=False)
    eps = Column(Float, nullable=False)
    status = Column(String(20), nullable=False)  # ok, censored, failed
    exit_time = Column(Float)
    drift_speed = Column(Float)
    energy_excess = Column(Float)
    dissipation_residual = Column(Float)
    ut_budget = Column(Float)
    error = Column(Text)

    run = relationship("ExperimentRun", back_populates="results")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'run_id': self.run_id,
            'eps': self.eps,
            'status': self.status,
            'exit_time': self.exit_time,
            'drift_speed': self.drift_speed,
            'energy_excess': self.energy_excess,
            'dissipation_residual': self.dissipation_residual,
            'ut_budget': self.ut_budget,
            'error': self.error,
        }


class DatabaseManager:
    """Manager class for registry operations"""

    def __init__(self, database_url: str = DEFAULT_DATABASE_URL):
        self.engine = create_engine(database_url, echo=False)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
        logger.info(f"Database initialized: {database_url}")

    def init_db(self) -> None:
        Base.metadata.create_all(bind=self.engine)
        logger.info("Database tables created successfully")

    def get_session(self):
        """Get a new database session"""
        session = self.SessionLocal()
        try:
            yield session
        finally:
            session.close()

    def record_run(self, session, run_data: Dict[str, Any], rows: List[Dict[str, Any]]) -> ExperimentRun:
        """
        Store a sweep and its per-eps rows.

        Args:
            session: open session
            run_data: name, config_hash, output_dir, all_passed and optional notes
            rows: sweep rows as produced by the harness

        Returns:
            The stored ExperimentRun
        """
        run = ExperimentRun(row_count=len(rows), **run_data)
        for row in rows:
            run.results.append(SweepResult(
                eps=float(row['eps']),
                status=str(row.get('status', 'ok')),
                exit_time=_finite_or_none(row.get('exit_time')),
                drift_speed=_finite_or_none(row.get('drift_speed')),
                energy_excess=_finite_or_none(row.get('energy_excess')),
                dissipation_residual=_finite_or_none(row.get('dissipation_residual')),
                ut_budget=_finite_or_none(row.get('ut_budget')),
                error=row.get('error') or None,
            ))
        session.add(run)
        session.commit()
        session.refresh(run)
        logger.info(f"Run recorded: {run.name} ({run.config_hash[:12]}) with {len(rows)} rows")
        return run

    def get_run(self, session, run_id: int) -> Optional[ExperimentRun]:
        return session.query(ExperimentRun).filter(ExperimentRun.id == run_id).first()

    def get_runs_by_hash(self, session, config_hash: str) -> List[ExperimentRun]:
        return (session.query(ExperimentRun).filter(ExperimentRun.config_hash == config_hash)
                .order_by(ExperimentRun.id).all())

    def get_all_runs(self, session) -> List[ExperimentRun]:
        return session.query(ExperimentRun).order_by(ExperimentRun.created_at.desc()).all()

    def get_results(self, session, run_id: int) -> List[SweepResult]:
        """Rows of one run ordered by decreasing eps"""
        return (session.query(SweepResult).filter(SweepResult.run_id == run_id)
                .order_by(SweepResult.eps.desc()).all())

    def get_status_stats(self, session) -> Dict[str, int]:
        stats = {}
        for result in session.query(SweepResult).all():
            stats[result.status] = stats.get(result.status, 0) + 1
        return stats


# Singleton instance
_db_manager: Optional[DatabaseManager] = None


def get_db_manager(database_url: str = DEFAULT_DATABASE_URL) -> DatabaseManager:
    """Get or create database manager singleton"""
    global _db_manager
    if _db_manager is None:
        _db_manager = DatabaseManager(database_url)
    return _db_manager


if __name__ == "__main__":
    db = get_db_manager()
    db.init_db()
    print("Database initialized")
