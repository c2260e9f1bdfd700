"""
CSV and JSON writers for reports and traces
"""
import csv
import json
from pathlib import Path
from typing import Any, Sequence

import structlog
from pydantic import BaseModel

from app.utils.errors import StorageError

logger = structlog.get_logger(__name__)


def write_csv(path, rows: Sequence[BaseModel], columns: Sequence[str] = ()) -> Path:
    """
    Write flat models as CSV rows

    Args:
        path: Destination file
        rows: Models sharing one schema
        columns: Column order; the model's field order when omitted
    """
    path = Path(path)
    if not columns:
        columns = list(type(rows[0]).model_fields) if rows else []
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                values = row.model_dump()
                writer.writerow([_cell(values[column]) for column in columns])
    except OSError as e:
        logger.error("csv_write_failed", path=str(path), error=str(e))
        raise StorageError(path, f"cannot write report: {str(e)}")
    logger.debug("csv_written", path=str(path), rows=len(rows))
    return path


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_json(path, payload: Any) -> Path:
    """Write a model or plain structure as indented, key-sorted JSON"""
    path = Path(path)
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    elif isinstance(payload, (list, tuple)):
        payload = [p.model_dump(mode="json") if isinstance(p, BaseModel) else p for p in payload]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        logger.error("json_write_failed", path=str(path), error=str(e))
        raise StorageError(path, f"cannot write report: {str(e)}")
    logger.debug("json_written", path=str(path))
    return path
