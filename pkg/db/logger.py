import os
import json
import logging
from datetime import datetime, timezone
from typing import Dict, List, Optional

import sqlite_utils

from src.utils.digests import RunManifest

logger = logging.getLogger(__name__)

# Run log lives next to this module unless DFORGE_RUN_DB points elsewhere
DEFAULT_DB_PATH = os.path.join(os.path.dirname(__file__), "runs.db")
TABLE = "run_log"


def db_path() -> str:
    return os.environ.get("DFORGE_RUN_DB") or DEFAULT_DB_PATH


def get_db(path: Optional[str] = None) -> sqlite_utils.Database:
    return sqlite_utils.Database(path or db_path())


def log_run(manifest: RunManifest, manifest_path: str = "", path: Optional[str] = None) -> int:
    """Append one CLI run to the run log and return its row id."""
    db = get_db(path)
    table = db[TABLE]
    table.insert({
        "command": manifest.command,
        "argv": json.dumps(manifest.argv),
        "config_hash": manifest.config_hash,
        "seed": manifest.seed,
        "exit_code": manifest.exit_code,
        "wall_time": manifest.wall_time,
        "output_digests": json.dumps(manifest.output_digests, sort_keys=True),
        "manifest_path": manifest_path,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }, alter=True)
    row_id = table.last_pk
    logger.debug(f"Logged run {row_id} ({manifest.command})")
    return row_id


def recent_runs(limit: int = 20, command: Optional[str] = None, path: Optional[str] = None) -> List[Dict]:
    db = get_db(path)
    if TABLE not in db.table_names():
        return []
    where = "command = ?" if command else None
    args = [command] if command else None
    return list(db[TABLE].rows_where(where, args, order_by="rowid desc", limit=limit))
