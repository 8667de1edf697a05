"""
Shared utilities for ranger commands: logging, deterministic JSON and dates.
"""
import json
import logging
import os
import sys
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Optional, Union

import structlog

from ranger.errors import IoError


def setup_logging(level: Optional[str] = None) -> None:
    """Configure structured logging on stderr; stdout is reserved for results."""
    log_level = (level or os.getenv("RANGER_LOG_LEVEL", "INFO")).upper()

    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, log_level, logging.INFO),
        force=True,
    )

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer()
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def _json_default(value: Any) -> Any:
    if isinstance(value, (date, datetime)):
        return value.isoformat()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if hasattr(value, "to_dict"):
        return value.to_dict()
    return str(value)


def dumps_json(payload: Any) -> str:
    """Render payload as stable, sorted, indented JSON."""
    return json.dumps(payload, default=_json_default, sort_keys=True, indent=2, ensure_ascii=False)


def write_text(path: Union[str, Path], text: str) -> None:
    """Write text with newline normalization disabled so output is byte-stable."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def write_json(path: Union[str, Path], payload: Any) -> None:
    write_text(path, dumps_json(payload) + "\n")


def parse_utc_date(value: Any) -> Optional[date]:
    """
    Normalize an ISO date or timestamp to a UTC calendar date.

    Returns None for empty values; raises ValueError for unparseable text.
    """
    if value is None or value == "":
        return None
    if isinstance(value, datetime):
        moment = value
    elif isinstance(value, date):
        return value
    else:
        text = str(value).strip()
        if len(text) == 10:
            return date.fromisoformat(text)
        moment = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if moment.tzinfo is not None:
        moment = moment.astimezone(timezone.utc)
    return moment.date()


def utc_today() -> date:
    return datetime.now(timezone.utc).date()
