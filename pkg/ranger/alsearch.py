"""
Backward affected-library search.

Tracking walks reverse dependency edges from the affected releases of a
vulnerable library, keeping only hops whose declared version points at the
frontier release and whose attributes let the vulnerable library through.
Tracking over-approximates; every candidate is then validated by forward
resolution, which decides membership and the reported depth.
"""
from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from typing import Deque, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import structlog

from ranger.corpus import LibraryId, ReleaseId, Scope, Vulnerability
from ranger.graph import DependencyGraph
from ranger.resolver import DEFAULT_COUNT_SCOPES, DEFAULT_MAX_DEPTH, resolve_tree

log = structlog.get_logger(__name__)


@dataclass(frozen=True)
class AffectedRecord:
    release: ReleaseId
    vuln_id: str
    depth: int
    released_at: Optional[date]
    witness_path: Tuple[ReleaseId, ...]
    validated: bool = True

    @property
    def vulnerable_release(self) -> ReleaseId:
        return self.witness_path[-1]

    def to_dict(self) -> Dict[str, object]:
        return {
            "release": str(self.release),
            "vuln_id": self.vuln_id,
            "depth": self.depth,
            "released_at": self.released_at.isoformat() if self.released_at else None,
            "witness_path": [str(r) for r in self.witness_path],
            "validated": self.validated,
        }


def _sort_key(record: AffectedRecord):
    return (record.depth, record.release)


def affected_record(
    graph: DependencyGraph,
    candidate: ReleaseId,
    vuln: Vulnerability,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> Optional[AffectedRecord]:
    """Record for `candidate` when its resolved tree holds a vulnerable release of vuln.library."""
    if candidate.library == vuln.library:
        return None
    tree = resolve_tree(graph, candidate, max_depth)
    index = tree.index_of(vuln.library)
    if index is None:
        return None
    node = tree.nodes[index]
    if node.dangling or node.via_scope not in DEFAULT_COUNT_SCOPES:
        return None
    if node.release not in graph.affected_releases(vuln):
        return None
    return AffectedRecord(
        release=candidate,
        vuln_id=vuln.id,
        depth=node.depth,
        released_at=candidate.released_at,
        witness_path=tuple(tree.path_to(index)),
    )


def validate_dependent(
    graph: DependencyGraph,
    candidate: ReleaseId,
    vuln: Vulnerability,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> bool:
    """Dependencies validation: the resolved version of vuln.library is an affected one."""
    return affected_record(graph, candidate, vuln, max_depth) is not None


def upstream_libraries(graph: DependencyGraph, library: LibraryId) -> FrozenSet[LibraryId]:
    """Libraries with some release that can reach `library` through declared edges, `library` included."""
    seen = {library}
    queue: Deque[LibraryId] = deque([library])
    while queue:
        current = queue.popleft()
        for dependent in graph.dependents_of(current):
            if dependent.library not in seen:
                seen.add(dependent.library)
                queue.append(dependent.library)
    return frozenset(seen)


def _first_direct_version(graph: DependencyGraph, release: ReleaseId, library: LibraryId):
    for decl in graph.dependencies_of(release):
        if decl.target == library and decl.scope is not Scope.IMPORT:
            return graph.resolve_spec(library, decl.spec)
    return None


def track_dependents(graph: DependencyGraph, vuln: Vulnerability, max_depth: int = DEFAULT_MAX_DEPTH) -> Dict[ReleaseId, int]:
    """
    Candidate releases with the hop count at which tracking reached them.

    States are (release, extendable): reaching a release over an optional edge
    makes it a candidate root that cannot be extended further.
    """
    affected = graph.affected_releases(vuln)
    library = vuln.library
    candidates: Dict[ReleaseId, int] = {}
    visited: Set[Tuple[ReleaseId, bool]] = set()
    queue: Deque[Tuple[ReleaseId, int]] = deque((release, 0) for release in sorted(affected))

    while queue:
        frontier, hops = queue.popleft()
        if hops >= max_depth:
            continue
        first_hop = frontier.library == library
        for dependent in sorted(graph.dependents_of(frontier.library)):
            if dependent.library == library:
                continue
            for decl in graph.dependencies_of(dependent):
                if decl.target != frontier.library or not decl.scope.transitive:
                    continue
                if graph.resolve_spec(decl.target, decl.spec) != frontier.version:
                    continue
                if not first_hop and decl.excludes(library):
                    continue
                extendable = not decl.optional
                state = (dependent, extendable)
                if state in visited:
                    continue
                visited.add(state)
                candidates.setdefault(dependent, hops + 1)
                if extendable:
                    queue.append((dependent, hops + 1))
    return candidates


def _passes_multiple_version_rule(graph: DependencyGraph, candidate: ReleaseId, hops: int, vuln: Vulnerability) -> bool:
    # a direct non-vulnerable pin is nearer than any vulnerable version found two or more hops away
    if hops < 2:
        return True
    direct = _first_direct_version(graph, candidate, vuln.library)
    if direct is None:
        return True
    return vuln.affected.contains(direct)


def find_affected(
    graph: DependencyGraph,
    vuln: Vulnerability,
    max_depth: int = DEFAULT_MAX_DEPTH,
    workers: int = 1,
) -> List[AffectedRecord]:
    """
    All releases whose resolved dependencies include a vulnerable version of vuln.library.

    Args:
        graph: graph snapshot
        vuln: vulnerability to trace
        max_depth: deepest dependency level considered
        workers: threads used for validation

    Returns:
        Records sorted by (depth, group, artifact, version)
    """
    tracked = track_dependents(graph, vuln, max_depth)
    candidates: Set[ReleaseId] = {
        release for release, hops in tracked.items()
        if _passes_multiple_version_rule(graph, release, hops, vuln)
    }

    upstream = upstream_libraries(graph, vuln.library)
    for release in graph.releases:
        if release.library != vuln.library and any(d.target in upstream for d in graph.management_of(release)):
            candidates.add(release)

    ordered = sorted(candidates)
    if workers > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: affected_record(graph, r, vuln, max_depth), ordered))
    else:
        results = [affected_record(graph, r, vuln, max_depth) for r in ordered]

    records = sorted((r for r in results if r is not None), key=_sort_key)
    log.info(
        "alsearch_complete",
        vuln=vuln.id,
        library=str(vuln.library),
        tracked=len(tracked),
        candidates=len(ordered),
        affected=len(records),
        epoch=graph.epoch,
    )
    return records


def find_affected_many(
    graph: DependencyGraph,
    vulns: Iterable[Vulnerability],
    max_depth: int = DEFAULT_MAX_DEPTH,
    workers: int = 1,
) -> Dict[Tuple[str, LibraryId], List[AffectedRecord]]:
    """find_affected per vulnerability record, keyed by (id, library)."""
    return {(v.id, v.library): find_affected(graph, v, max_depth, workers) for v in vulns}
