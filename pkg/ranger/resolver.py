"""
Forward Maven dependency resolution.

resolve_tree walks declarations breadth-first from a root release:
    - the first resolution of a library wins (shallowest, then document order)
    - only compile and runtime dependencies are expanded past depth 1
    - optional dependencies of non-root releases are skipped
    - exclusions accumulate along the path
    - the root's dependencyManagement overrides versions from depth 2 on
    - ranges resolve to their highest corpus member
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

import structlog

from ranger.corpus import DependencyDecl, LibraryId, ReleaseId, Scope
from ranger.errors import NoSuchRelease
from ranger.graph import DependencyGraph
from ranger.version import RangeSet, VersionNumber

log = structlog.get_logger(__name__)

DEFAULT_MAX_DEPTH = 10
DEFAULT_COUNT_SCOPES: Tuple[Scope, ...] = (Scope.COMPILE, Scope.RUNTIME)


@dataclass(frozen=True)
class TreeNode:
    release: ReleaseId
    depth: int
    parent: Optional[int]  # None when the parent is the root
    via_scope: Scope
    dangling: bool = False


@dataclass(frozen=True)
class MediationEvent:
    library: LibraryId
    winner: Optional[VersionNumber]
    losers: Tuple[VersionNumber, ...]
    kind: str  # nearest | range | management | cycle | unresolved

    def to_dict(self) -> Dict[str, object]:
        return {
            "library": str(self.library),
            "winner": str(self.winner) if self.winner is not None else None,
            "losers": [str(v) for v in self.losers],
            "kind": self.kind,
        }


@dataclass(frozen=True)
class ResolvedTree:
    root: ReleaseId
    nodes: Tuple[TreeNode, ...]
    mediation_log: Tuple[MediationEvent, ...] = ()
    _by_library: Mapping[LibraryId, int] = field(default_factory=dict, repr=False, compare=False)

    def node_for(self, library: LibraryId) -> Optional[TreeNode]:
        index = self._by_library.get(library)
        return self.nodes[index] if index is not None else None

    def index_of(self, library: LibraryId) -> Optional[int]:
        return self._by_library.get(library)

    def path_to(self, index: int) -> List[ReleaseId]:
        """Releases from the root down to nodes[index], both included."""
        path = []
        current: Optional[int] = index
        while current is not None:
            node = self.nodes[current]
            path.append(node.release)
            current = node.parent
        path.append(self.root)
        return list(reversed(path))


@dataclass(frozen=True)
class VulnerabilityCount:
    per_node: Mapping[ReleaseId, int]
    total: int


def _propagate(parent_scope: Scope, declared: Scope) -> Scope:
    if parent_scope is Scope.RUNTIME and declared is Scope.COMPILE:
        return Scope.RUNTIME
    return declared


def _management_map(graph: DependencyGraph, root: ReleaseId) -> Dict[LibraryId, DependencyDecl]:
    out: Dict[LibraryId, DependencyDecl] = {}
    for decl in graph.management_of(root):
        if decl.scope is not Scope.IMPORT:
            out.setdefault(decl.target, decl)
    return out


@dataclass
class _Pending:
    release: ReleaseId
    depth: int
    index: Optional[int]
    scope: Optional[Scope]
    exclusions: FrozenSet[LibraryId]
    expandable: bool


def _resolve(graph: DependencyGraph, root: ReleaseId, max_depth: int, apply_management: bool) -> ResolvedTree:
    """
    Breadth-first mediation from `root`.

    A declaration of a library missing from the corpus becomes a dangling
    leaf, whether it is a soft pin or a range; a range lands on its highest
    admitted textual bound. Only a spec with no usable version, such as a
    range no corpus member satisfies, is logged as an "unresolved" event.
    """
    management = _management_map(graph, root) if apply_management else {}
    nodes: List[TreeNode] = []
    events: List[MediationEvent] = []
    claimed: Dict[LibraryId, Optional[int]] = {root.library: None}
    claimed_specs: Dict[LibraryId, object] = {}
    ancestors: Dict[Optional[int], FrozenSet[LibraryId]] = {None: frozenset({root.library})}

    queue: Deque[_Pending] = deque([_Pending(root, 0, None, None, frozenset(), True)])
    while queue:
        current = queue.popleft()
        if not current.expandable or current.depth >= max_depth:
            continue
        for decl in graph.dependencies_of(current.release):
            if decl.scope is Scope.IMPORT:
                continue
            if current.depth >= 1 and (not decl.scope.transitive or decl.optional):
                continue
            target = decl.target
            if any(pattern.matches(target) for pattern in current.exclusions):
                continue

            spec = decl.spec
            if current.depth >= 1 and target in management:
                spec = management[target].spec
                declared_version = graph.resolve_spec(target, decl.spec)
                managed_version = graph.resolve_spec(target, spec)
                if declared_version is not None and declared_version != managed_version:
                    events.append(MediationEvent(target, managed_version, (declared_version,), "management"))
            version = graph.resolve_spec(target, spec)

            if target in claimed:
                if target in ancestors[current.index]:
                    events.append(MediationEvent(target, None, (version,) if version else (), "cycle"))
                    continue
                winner_index = claimed[target]
                winner = nodes[winner_index].release.version if winner_index is not None else root.version
                if version is not None and version != winner:
                    ranged = isinstance(spec, RangeSet) or isinstance(claimed_specs.get(target), RangeSet)
                    events.append(MediationEvent(target, winner, (version,), "range" if ranged else "nearest"))
                continue
            if version is None:
                events.append(MediationEvent(target, None, (), "unresolved"))
                continue

            scope = decl.scope if current.depth == 0 else _propagate(current.scope, decl.scope)
            release = graph.release(target, version)
            dangling = release is None
            if dangling:
                release = ReleaseId(target, version)
            index = len(nodes)
            nodes.append(TreeNode(release, current.depth + 1, current.index, scope, dangling))
            claimed[target] = index
            claimed_specs[target] = spec
            ancestors[index] = ancestors[current.index] | {target}
            queue.append(_Pending(
                release,
                current.depth + 1,
                index,
                scope,
                current.exclusions | decl.exclusions,
                not dangling and scope.transitive,
            ))

    by_library = {node.release.library: i for i, node in enumerate(nodes)}
    return ResolvedTree(root, tuple(nodes), tuple(events), by_library)


def resolve_tree(
    graph: DependencyGraph,
    root: ReleaseId,
    max_depth: int = DEFAULT_MAX_DEPTH,
    apply_management: bool = True,
) -> ResolvedTree:
    """
    Resolve the dependency tree of `root` on this graph epoch.

    Args:
        graph: graph snapshot
        root: release to resolve; must be indexed
        max_depth: deepest node depth kept
        apply_management: apply the root's dependencyManagement to transitive nodes

    Returns:
        ResolvedTree with nodes in BFS order
    """
    if not graph.has_release(root):
        raise NoSuchRelease(f"release not in graph: {root}")
    return graph.cached(
        ("tree", root, max_depth, apply_management),
        lambda: _resolve(graph, root, max_depth, apply_management),
    )


def _count_scopes(scopes: Optional[Iterable[object]]) -> FrozenSet[Scope]:
    if scopes is None:
        return frozenset(DEFAULT_COUNT_SCOPES)
    return frozenset(Scope(s) if not isinstance(s, Scope) else s for s in scopes)


def count_vulnerabilities(
    graph: DependencyGraph,
    tree: ResolvedTree,
    scopes: Optional[Iterable[object]] = None,
) -> VulnerabilityCount:
    """Vulnerabilities affecting the root and every counted node of the tree."""
    counted = _count_scopes(scopes)
    per_node: Dict[ReleaseId, int] = {tree.root: len(graph.vulnerabilities_of(tree.root))}
    for node in tree.nodes:
        if node.via_scope in counted and not node.dangling:
            per_node[node.release] = len(graph.vulnerabilities_of(node.release))
    return VulnerabilityCount(per_node, sum(per_node.values()))


def resolved_node(
    graph: DependencyGraph,
    root: ReleaseId,
    target: LibraryId,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> Optional[TreeNode]:
    if root.library == target:
        return None
    return resolve_tree(graph, root, max_depth).node_for(target)


def resolved_version_of(
    graph: DependencyGraph,
    root: ReleaseId,
    target: LibraryId,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> Optional[VersionNumber]:
    """Mediated version of `target` in the tree of `root`, or None when absent."""
    node = resolved_node(graph, root, target, max_depth)
    return node.release.version if node is not None else None


def render_tree(tree: ResolvedTree) -> str:
    lines = [str(tree.root)]
    children: Dict[Optional[int], List[int]] = {}
    for i, node in enumerate(tree.nodes):
        children.setdefault(node.parent, []).append(i)

    stack: List[int] = list(reversed(children.get(None, [])))
    while stack:
        i = stack.pop()
        node = tree.nodes[i]
        marker = " (dangling)" if node.dangling else ""
        lines.append(f"{'  ' * node.depth}{node.release} [{node.via_scope.value}] ({node.depth}){marker}")
        stack.extend(reversed(children.get(i, [])))
    return "\n".join(lines)


def tree_to_dict(tree: ResolvedTree) -> Dict[str, object]:
    return {
        "root": str(tree.root),
        "nodes": [
            {
                "release": str(node.release),
                "depth": node.depth,
                "parent": node.parent,
                "scope": node.via_scope.value,
                "dangling": node.dangling,
            }
            for node in tree.nodes
        ],
        "mediation": [event.to_dict() for event in tree.mediation_log],
    }
