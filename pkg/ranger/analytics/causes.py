"""
Why patches fail to reach downstream releases.

Each affected record's witness path is investigated bottom-up, from the
vulnerable library towards the record's release, and blamed on the first
role that misbehaved:

    C1  vulnerable library had no patched release at evaluation time
    C2  First Dept released after a fix yet still pins a vulnerable version
    C3  First Dept released nothing after the fix became available
    C4  Medium Dept released after a fix yet still pins a vulnerable version
    C5  Medium Dept released nothing after the fix became available
    C6  End user override keeps a vulnerable version

The evaluation time is the release date of the record's release. A Dept
that shipped releases after the fix, all still vulnerable, counts as stale
(C2/C4) rather than inactive (C3/C5).

The End User is examined last. A path is blamed on it only when no Dept
below pins a vulnerable version, so the vulnerable version came in through
the root's dependencyManagement, or when the record's own direct pin of the
vulnerable library is listed in the explicit overrides.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from enum import Enum
from typing import AbstractSet, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import structlog

from ranger.alsearch import AffectedRecord, find_affected, validate_dependent
from ranger.corpus import LibraryId, ReleaseId, Scope, Vulnerability
from ranger.errors import MissingReleaseDates
from ranger.graph import DependencyGraph
from ranger.resolver import DEFAULT_MAX_DEPTH
from ranger.version import VersionNumber

log = structlog.get_logger(__name__)


class Cause(str, Enum):
    C1 = "C1"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"
    C5 = "C5"
    C6 = "C6"


class Role(str, Enum):
    VULNERABLE_LIBRARY = "VulnerableLibrary"
    FIRST_DEPT = "FirstDept"
    MEDIUM_DEPT = "MediumDept"
    END_USER = "EndUser"


CAUSE_ROLES: Dict[Cause, Role] = {
    Cause.C1: Role.VULNERABLE_LIBRARY,
    Cause.C2: Role.FIRST_DEPT,
    Cause.C3: Role.FIRST_DEPT,
    Cause.C4: Role.MEDIUM_DEPT,
    Cause.C5: Role.MEDIUM_DEPT,
    Cause.C6: Role.END_USER,
}


@dataclass(frozen=True)
class CauseLabel:
    cause: Cause
    blamed_role: Role
    path: tuple
    blamed: Optional[ReleaseId] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "cause": self.cause.value,
            "blamed_role": self.blamed_role.value,
            "blamed": str(self.blamed) if self.blamed is not None else None,
            "path": [str(r) for r in self.path],
        }


def _label(cause: Cause, path: tuple, blamed: Optional[ReleaseId]) -> CauseLabel:
    return CauseLabel(cause, CAUSE_ROLES[cause], path, blamed)


class _Judge:
    """Vulnerability checks for one record, memoized across the walk."""

    def __init__(
        self,
        graph: DependencyGraph,
        vuln: Vulnerability,
        affected: Optional[AbstractSet[ReleaseId]],
        max_depth: int,
    ):
        self.graph = graph
        self.vuln = vuln
        self.affected = affected
        self.max_depth = max_depth
        self._verdicts: Dict[ReleaseId, bool] = {}

    def vulnerable(self, release: ReleaseId) -> bool:
        if release.library == self.vuln.library:
            return self.vuln.affected.contains(release.version)
        if self.affected is not None:
            return release in self.affected
        if release not in self._verdicts:
            self._verdicts[release] = validate_dependent(self.graph, release, self.vuln, self.max_depth)
        return self._verdicts[release]

    def fix_date(self, release: ReleaseId, until: date) -> Optional[date]:
        """Earliest date a higher, non-vulnerable release of the same library appeared, up to `until`."""
        dates = [
            candidate.released_at
            for candidate in self.graph.releases_of(release.library)
            if candidate.version > release.version
            and candidate.released_at is not None
            and candidate.released_at <= until
            and not self.vulnerable(candidate)
        ]
        return min(dates) if dates else None

    def released_between(self, release: ReleaseId, start: date, until: date) -> bool:
        """Whether the library of `release` shipped anything dated in [start, until]."""
        return any(
            candidate.released_at is not None and start <= candidate.released_at <= until
            for candidate in self.graph.releases_of(release.library)
        )

    def pins_vulnerable(self, parent: ReleaseId, child: ReleaseId) -> bool:
        """Whether the parent's own declaration of the child's library resolves to a vulnerable release."""
        for decl in self.graph.dependencies_of(parent):
            if decl.target != child.library or decl.scope is Scope.IMPORT:
                continue
            version = self.graph.resolve_spec(decl.target, decl.spec)
            if version is None:
                return False
            declared = self.graph.release(decl.target, version)
            return declared is not None and self.vulnerable(declared)
        return False


def _explicit_override(
    record: AffectedRecord,
    vuln: Vulnerability,
    overrides: Optional[Mapping[ReleaseId, VersionNumber]],
) -> bool:
    if not overrides or record.release not in overrides:
        return False
    return vuln.affected.contains(overrides[record.release])


def _vulnerability_for(graph: DependencyGraph, record: AffectedRecord) -> Vulnerability:
    library = record.vulnerable_release.library
    for vuln in graph.vulnerability(record.vuln_id):
        if vuln.library == library:
            return vuln
    return graph.vulnerability(record.vuln_id)[0]


def classify_cause(
    graph: DependencyGraph,
    record: AffectedRecord,
    overrides: Optional[Mapping[ReleaseId, VersionNumber]] = None,
    affected: Optional[AbstractSet[ReleaseId]] = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> CauseLabel:
    """
    Blame the first misbehaving role on the record's witness path.

    Args:
        graph: graph snapshot the record was computed on
        record: validated affected record
        overrides: end-user pins of the vulnerable library, keyed by release
        affected: affected releases of the same vulnerability, if already known
        max_depth: resolution depth used to validate intermediate releases

    Raises:
        MissingReleaseDates: the record or a release on its path is undated
    """
    path = tuple(record.witness_path)
    undated = [str(r) for r in path if r.released_at is None]
    if record.released_at is None or undated:
        raise MissingReleaseDates(f"{record.release}: undated releases on path: {', '.join(undated) or record.release}")

    vuln = _vulnerability_for(graph, record)
    judge = _Judge(graph, vuln, affected, max_depth)
    evaluated_at = record.released_at

    fix_date = judge.fix_date(path[-1], evaluated_at)
    if fix_date is None:
        return _label(Cause.C1, path, path[-1])

    first_dept = len(path) - 2
    for index in range(first_dept, -1, -1):
        parent, child = path[index], path[index + 1]
        if not judge.pins_vulnerable(parent, child):
            # the vulnerable version came from above; nothing to blame here
            continue
        if index == 0 and child.library == vuln.library and _explicit_override(record, vuln, overrides):
            break
        stale, inactive = (Cause.C2, Cause.C3) if index == first_dept else (Cause.C4, Cause.C5)
        if parent.released_at >= fix_date:
            return _label(stale, path, parent)
        parent_fix = judge.fix_date(parent, evaluated_at)
        if parent_fix is None:
            if judge.released_between(parent, fix_date, evaluated_at):
                return _label(stale, path, parent)
            return _label(inactive, path, parent)
        fix_date = parent_fix

    return _label(Cause.C6, path, record.release)


def cause_proportions(
    graph: DependencyGraph,
    vulns: Iterable[Vulnerability],
    overrides: Optional[Mapping[ReleaseId, VersionNumber]] = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
    records: Optional[Mapping[Tuple[str, LibraryId], Sequence[AffectedRecord]]] = None,
) -> Dict[str, object]:
    """
    Classify every witness path once and report cause and role shares.

    `records` holds precomputed ALSearch results keyed by (vulnerability id,
    vulnerable library). C1 paths are counted but left out of the
    blocked-path denominator, so the C2..C6 shares describe only paths where
    a patch was blocked.
    """
    counts = {cause: 0 for cause in Cause}
    undated = 0
    for vuln in vulns:
        key = (vuln.id, vuln.library)
        found = list(records[key]) if records and key in records else find_affected(graph, vuln, max_depth)
        affected = frozenset(r.release for r in found)
        for record in found:
            try:
                label = classify_cause(graph, record, overrides, affected, max_depth)
            except MissingReleaseDates:
                undated += 1
                continue
            counts[label.cause] += 1

    total = sum(counts.values())
    blocked = total - counts[Cause.C1]

    def share(value: int, denominator: int) -> float:
        return value / denominator if denominator else 0.0

    roles = {
        Role.FIRST_DEPT.value: share(counts[Cause.C2] + counts[Cause.C3], blocked),
        Role.MEDIUM_DEPT.value: share(counts[Cause.C4] + counts[Cause.C5], blocked),
        Role.END_USER.value: share(counts[Cause.C6], blocked),
    }
    proportions = {cause.value: share(counts[cause], blocked) for cause in Cause if cause is not Cause.C1}
    proportions[Cause.C1.value] = share(counts[Cause.C1], total)

    log.info("causes_classified", total_paths=total, blocked_paths=blocked, undated=undated)
    return {
        "counts": {cause.value: counts[cause] for cause in Cause},
        "proportions": dict(sorted(proportions.items())),
        "roles": roles,
        "total_paths": total,
        "blocked_paths": blocked,
        "undated_paths": undated,
    }
