"""
How often the ecosystem uses the countermeasures Maven already offers:
version ranges on dependency edges and dependencyManagement overrides.
"""
from __future__ import annotations

from typing import Dict, FrozenSet, Iterable, Optional, Set

import structlog

from ranger.corpus import LibraryId, Scope, Vulnerability
from ranger.graph import DependencyGraph
from ranger.resolver import DEFAULT_COUNT_SCOPES, DEFAULT_MAX_DEPTH, ResolvedTree, resolve_tree
from ranger.version import RangeSet, VersionNumber

log = structlog.get_logger(__name__)


def _percent(part: int, whole: int) -> float:
    return 100.0 * part / whole if whole else 0.0


def _vulnerable_versions(graph: DependencyGraph, vulns: Iterable[Vulnerability]) -> Dict[LibraryId, FrozenSet[VersionNumber]]:
    found: Dict[LibraryId, Set[VersionNumber]] = {}
    for vuln in vulns:
        found.setdefault(vuln.library, set()).update(r.version for r in graph.affected_releases(vuln))
    return {library: frozenset(versions) for library, versions in found.items()}


def range_usage_stats(graph: DependencyGraph, vulns: Iterable[Vulnerability]) -> Dict[str, object]:
    """
    Range usage over every dependency edge.

    A range is vulnerability-targeted when one of its corpus members is
    vulnerable. Among those, the report gives the share where every member is
    vulnerable, the share whose highest member (the one Maven resolves) is
    vulnerable, and, for ranges whose highest member is safe, the share with
    an open upper bound.
    """
    vulnerable = _vulnerable_versions(graph, vulns)
    edges_total = 0
    with_ranges = 0
    targeted = 0
    all_vulnerable = 0
    latest_vulnerable = 0
    latest_safe = 0
    open_upper = 0

    for declarations in graph.edges:
        for decl in declarations:
            edges_total += 1
            if not isinstance(decl.spec, RangeSet):
                continue
            with_ranges += 1
            bad = vulnerable.get(decl.target)
            if not bad:
                continue
            members = decl.spec.members(graph.versions_of(decl.target))
            if not any(v in bad for v in members):
                continue
            targeted += 1
            if all(v in bad for v in members):
                all_vulnerable += 1
            if members[-1] in bad:
                latest_vulnerable += 1
            else:
                latest_safe += 1
                if decl.spec.open_upper:
                    open_upper += 1

    log.info("range_usage_computed", edges=edges_total, ranges=with_ranges, targeted=targeted)
    return {
        "edges_total": edges_total,
        "edges_with_ranges": with_ranges,
        "pct_ranges": _percent(with_ranges, edges_total),
        "vuln_targeted_ranges": targeted,
        "pct_all_versions_vulnerable": _percent(all_vulnerable, targeted),
        "pct_latest_vulnerable": _percent(latest_vulnerable, targeted),
        "pct_open_upper": _percent(open_upper, latest_safe),
    }


def _vulnerable_node(tree: ResolvedTree, library: LibraryId, bad: FrozenSet[VersionNumber]) -> Optional[bool]:
    node = tree.node_for(library)
    if node is None or node.dangling or node.via_scope not in DEFAULT_COUNT_SCOPES:
        return None
    return node.release.version in bad


def dependency_management_stats(
    graph: DependencyGraph,
    vulns: Iterable[Vulnerability],
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> Dict[str, int]:
    """
    Per POM, compare the default resolution of each vulnerable library with the
    dependencyManagement-overridden one.

    A POM is Affected when some override still resolves a vulnerable version,
    Bypass when an override replaces a vulnerable default with a safe version,
    and Overlapping when both happen; the three categories are disjoint.
    """
    vulnerable = _vulnerable_versions(graph, vulns)
    poms_with_dm = 0
    poms_with_vuln_overrides = 0
    affected = bypass = overlapping = 0

    for release in graph.releases:
        entries = [d for d in graph.management_of(release) if d.scope is not Scope.IMPORT]
        if not entries:
            continue
        poms_with_dm += 1
        targets = sorted({d.target for d in entries if d.target in vulnerable})
        if not targets:
            continue
        poms_with_vuln_overrides += 1

        default = resolve_tree(graph, release, max_depth, apply_management=False)
        overridden = resolve_tree(graph, release, max_depth, apply_management=True)
        still_vulnerable = False
        bypassed = False
        for target in targets:
            node = overridden.node_for(target)
            if node is None or node.depth < 2:
                continue
            after = _vulnerable_node(overridden, target, vulnerable[target])
            before = _vulnerable_node(default, target, vulnerable[target])
            if after:
                still_vulnerable = True
            elif before:
                bypassed = True

        if still_vulnerable and bypassed:
            overlapping += 1
        elif still_vulnerable:
            affected += 1
        elif bypassed:
            bypass += 1

    log.info("dependency_management_computed", poms_with_dm=poms_with_dm, overrides=poms_with_vuln_overrides)
    return {
        "poms_with_dm": poms_with_dm,
        "poms_with_vuln_overrides": poms_with_vuln_overrides,
        "affected": affected,
        "bypass": bypass,
        "overlapping": overlapping,
    }
