# utils/db_utils.py

import json
import duckdb
import shortuuid
from typing import Any, Dict, List, Optional

from utils.config_utils import to_plain
from utils.file_utils import utc_now

RUN_COLUMNS = ["id", "command", "digest", "seed", "start_timestamp", "updated_timestamp", "status"]


def new_run_id() -> str:
    return shortuuid.uuid()[:8]  # Generate shorter ID (8 chars)


class RunsDB:
    """Ledger of runs and their eval records, one DuckDB file per output root."""

    def __init__(self, db_file: str = "runs/runs.duckdb"):
        self.conn = duckdb.connect(db_file)
        self._create_tables()

    def _create_tables(self):
        self.conn.execute("""
        CREATE TABLE IF NOT EXISTS runs (
            id TEXT PRIMARY KEY,
            command TEXT,
            digest TEXT,
            seed UBIGINT,
            start_timestamp TEXT,
            updated_timestamp TEXT,
            status TEXT
        )
        """)
        self.conn.execute("""
        CREATE TABLE IF NOT EXISTS steps (
            id TEXT PRIMARY KEY,
            run_id TEXT,
            step BIGINT,
            timestamp TEXT,
            record TEXT,
            FOREIGN KEY(run_id) REFERENCES runs(id)
        )
        """)

    # Create a new run
    def create_run(self, command: str, digest: str, seed: int, run_id: Optional[str] = None) -> str:
        run_id = run_id or new_run_id()
        timestamp = utc_now()
        self.conn.execute("""
        INSERT INTO runs (id, command, digest, seed, start_timestamp, updated_timestamp, status)
        VALUES (?, ?, ?, ?, ?, ?, ?)
        """, (run_id, command, digest, int(seed), timestamp, timestamp, "running"))
        return run_id

    # Update a run's timestamp
    def update_run_timestamp(self, run_id: str):
        self.conn.execute("""
        UPDATE runs SET updated_timestamp = ? WHERE id = ?
        """, (utc_now(), run_id))

    # Add an eval record to a run
    def add_step(self, run_id: str, step: int, record: Dict[str, Any]) -> str:
        step_id = new_run_id()
        self.conn.execute("""
        INSERT INTO steps (id, run_id, step, timestamp, record) VALUES (?, ?, ?, ?, ?)
        """, (step_id, run_id, int(step), utc_now(), json.dumps(to_plain(record), sort_keys=True)))
        self.update_run_timestamp(run_id)
        return step_id

    def finish_run(self, run_id: str, status: str = "completed"):
        self.conn.execute("""
        UPDATE runs SET status = ?, updated_timestamp = ? WHERE id = ?
        """, (status, utc_now(), run_id))

    def get_all_runs(self) -> List[Dict]:
        results = self.conn.execute(f"SELECT {', '.join(RUN_COLUMNS)} FROM runs ORDER BY start_timestamp").fetchall()
        return [dict(zip(RUN_COLUMNS, row)) for row in results]

    def get_steps_for_run(self, run_id: str) -> List[Dict]:
        results = self.conn.execute("""
        SELECT id, run_id, step, timestamp, record FROM steps WHERE run_id = ? ORDER BY step
        """, (run_id,)).fetchall()
        return [
            {
                "id": row[0],
                "run_id": row[1],
                "step": row[2],
                "timestamp": row[3],
                "record": json.loads(row[4]),
            } for row in results
        ]

    def close(self):
        self.conn.close()

    # Clear the database (useful for testing)
    def clear_database(self):
        self.conn.execute("DELETE FROM steps")
        self.conn.execute("DELETE FROM runs")
