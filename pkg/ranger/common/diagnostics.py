"""
Collector for non-fatal findings raised while ingesting, resolving and restoring.
"""
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional

import structlog

log = structlog.get_logger(__name__)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    subject: str = ""

    def to_dict(self) -> Dict[str, str]:
        return {"code": self.code, "message": self.message, "subject": self.subject}


class Diagnostics:
    """Ordered list of diagnostics; every entry is also logged as a warning."""

    def __init__(self) -> None:
        self._items: List[Diagnostic] = []

    def add(self, code: str, message: str, subject: str = "") -> Diagnostic:
        item = Diagnostic(code, message, subject)
        self._items.append(item)
        log.warning(code, detail=message, subject=subject)
        return item

    def extend(self, other: Optional["Diagnostics"]) -> None:
        if other is not None:
            self._items.extend(other)

    def by_code(self, code: str) -> List[Diagnostic]:
        return [d for d in self._items if d.code == code]

    def counts(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for d in self._items:
            out[d.code] = out.get(d.code, 0) + 1
        return dict(sorted(out.items()))

    def __iter__(self) -> Iterator[Diagnostic]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def to_list(self) -> List[Dict[str, str]]:
        return [d.to_dict() for d in self._items]
