"""
Dependency-vulnerability graph with copy-on-write epochs and a binary snapshot container.

Snapshot layout (all integers big-endian):

    b"RGSN"
    u32 header length, header JSON {"format", "epoch", "sections": [{name, length, sha256}]}
    for each section: u32 length, JSON payload

Coordinates and version texts are interned in the "strings" section and
referenced by index from the other sections.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import replace
from datetime import date
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import structlog

from ranger.common.diagnostics import Diagnostics
from ranger.corpus import (
    DependencyDecl,
    LibraryId,
    PomDocument,
    ReleaseId,
    Scope,
    Vulnerability,
    match_affected_versions,
)
from ranger.errors import NoSuchEdge, NoSuchRelease, SnapshotError, UnknownVulnerability, VersionMismatch
from ranger.version import (
    RangeSet,
    SoftVersion,
    UnresolvedSpec,
    VersionNumber,
    VersionSpec,
    parse_version,
    parse_version_spec,
)

log = structlog.get_logger(__name__)

SNAPSHOT_MAGIC = b"RGSN"
SNAPSHOT_FORMAT = 1
_SECTIONS = ("strings", "releases", "edges", "management", "vulnerabilities")

AffectedIndex = Tuple[Tuple[Vulnerability, FrozenSet[ReleaseId]], ...]


class _Indices:
    """Lookup tables derived from releases, edges and vulnerabilities; shared across epochs."""

    def __init__(self, releases: Sequence[ReleaseId], edges: Sequence[Sequence[DependencyDecl]],
                 vulnerabilities: Sequence[Vulnerability]):
        self.handles: Dict[ReleaseId, int] = {release: h for h, release in enumerate(releases)}

        by_library: Dict[LibraryId, List[ReleaseId]] = {}
        for release in releases:
            by_library.setdefault(release.library, []).append(release)
        self.by_library: Mapping[LibraryId, Tuple[ReleaseId, ...]] = MappingProxyType(
            {library: tuple(sorted(found)) for library, found in by_library.items()}
        )

        reverse: Dict[LibraryId, set] = {}
        for handle, declarations in enumerate(edges):
            for decl in declarations:
                reverse.setdefault(decl.target, set()).add(releases[handle])
        self.reverse_index: Mapping[LibraryId, FrozenSet[ReleaseId]] = MappingProxyType(
            {library: frozenset(found) for library, found in reverse.items()}
        )

        vuln_index: Dict[LibraryId, List[Tuple[Vulnerability, FrozenSet[ReleaseId]]]] = {}
        for vuln in vulnerabilities:
            affected = frozenset(match_affected_versions(vuln, by_library.get(vuln.library, ())))
            vuln_index.setdefault(vuln.library, []).append((vuln, affected))
        self.vuln_index: Mapping[LibraryId, AffectedIndex] = MappingProxyType(
            {library: tuple(entries) for library, entries in vuln_index.items()}
        )


class DependencyGraph:
    """
    Immutable snapshot of releases, dependency edges and vulnerabilities.

    Releases are addressed by dense integer handles (their position in the
    sorted release tuple). apply_range_update returns a new epoch that shares
    every untouched adjacency tuple and all derived indices with this one.
    """

    def __init__(
        self,
        releases: Sequence[ReleaseId],
        edges: Sequence[Sequence[DependencyDecl]],
        management: Sequence[Sequence[DependencyDecl]],
        vulnerabilities: Sequence[Vulnerability],
        epoch: int = 0,
        _indices: Optional[_Indices] = None,
    ):
        self.releases: Tuple[ReleaseId, ...] = tuple(releases)
        self.edges: Tuple[Tuple[DependencyDecl, ...], ...] = tuple(tuple(e) for e in edges)
        self.management: Tuple[Tuple[DependencyDecl, ...], ...] = tuple(tuple(m) for m in management)
        self.vulnerabilities: Tuple[Vulnerability, ...] = tuple(vulnerabilities)
        self.epoch = epoch
        self._indices = _indices or _Indices(self.releases, self.edges, self.vulnerabilities)
        self._memo: Dict[Any, Any] = {}

    # -- structure -----------------------------------------------------

    @property
    def libraries(self) -> Tuple[LibraryId, ...]:
        return tuple(sorted(self._indices.by_library))

    @property
    def reverse_index(self) -> Mapping[LibraryId, FrozenSet[ReleaseId]]:
        return self._indices.reverse_index

    @property
    def vuln_index(self) -> Mapping[LibraryId, AffectedIndex]:
        return self._indices.vuln_index

    def handle(self, release: ReleaseId) -> int:
        try:
            return self._indices.handles[release]
        except KeyError:
            raise NoSuchRelease(f"release not in graph: {release}") from None

    def has_release(self, release: ReleaseId) -> bool:
        return release in self._indices.handles

    def release(self, library: LibraryId, version: VersionNumber) -> Optional[ReleaseId]:
        """The dated corpus release for (library, version), if indexed."""
        handle = self._indices.handles.get(ReleaseId(library, version))
        return self.releases[handle] if handle is not None else None

    def releases_of(self, library: LibraryId) -> Tuple[ReleaseId, ...]:
        return self._indices.by_library.get(library, ())

    def versions_of(self, library: LibraryId) -> List[VersionNumber]:
        return [release.version for release in self.releases_of(library)]

    def is_dangling(self, library: LibraryId) -> bool:
        return library not in self._indices.by_library

    def dependencies_of(self, release: ReleaseId) -> Tuple[DependencyDecl, ...]:
        return self.edges[self.handle(release)]

    def management_of(self, release: ReleaseId) -> Tuple[DependencyDecl, ...]:
        return self.management[self.handle(release)]

    def dependents_of(self, library: LibraryId) -> FrozenSet[ReleaseId]:
        return self.reverse_index.get(library, frozenset())

    def affected_releases(self, vuln: Vulnerability) -> FrozenSet[ReleaseId]:
        for indexed, affected in self.vuln_index.get(vuln.library, ()):
            if indexed == vuln:
                return affected
        return frozenset(match_affected_versions(vuln, self.releases_of(vuln.library)))

    def vulnerabilities_of(self, release: ReleaseId) -> List[Vulnerability]:
        return [vuln for vuln, affected in self.vuln_index.get(release.library, ()) if release in affected]

    def vulnerability(self, vuln_id: str) -> List[Vulnerability]:
        """All records carrying this id, one per affected library."""
        found = [v for v in self.vulnerabilities if v.id == vuln_id]
        if not found:
            raise UnknownVulnerability(f"unknown vulnerability: {vuln_id}")
        return found

    def resolve_spec(self, library: LibraryId, spec: VersionSpec) -> Optional[VersionNumber]:
        """
        Version Maven would pick for a declaration: the pin itself, or the highest
        corpus member of a range. A range on a library missing from the corpus
        falls back to its highest admitted textual bound, like a soft pin on a
        missing library falls back to the pinned text.
        """
        if isinstance(spec, SoftVersion):
            return spec.preferred
        if isinstance(spec, RangeSet):
            if self.is_dangling(library):
                return spec.highest_bound()
            return spec.highest_member(self.versions_of(library))
        return None

    def cached(self, key: Any, factory: Callable[[], Any]) -> Any:
        """Per-epoch memo used by resolution; values depend only on this snapshot."""
        try:
            return self._memo[key]
        except KeyError:
            value = factory()
            self._memo[key] = value
            return value

    def stats(self) -> Dict[str, int]:
        return {
            "libraries": len(self._indices.by_library),
            "releases": len(self.releases),
            "edges": sum(len(e) for e in self.edges),
            "vulns": len(self.vulnerabilities),
            "epoch": self.epoch,
        }

    def with_edges(self, edges: Tuple[Tuple[DependencyDecl, ...], ...]) -> "DependencyGraph":
        """Next epoch with replaced edge specs; targets must be unchanged so indices stay valid."""
        return DependencyGraph(self.releases, edges, self.management, self.vulnerabilities, self.epoch + 1, self._indices)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DependencyGraph):
            return NotImplemented
        return (
            self.epoch == other.epoch
            and self.releases == other.releases
            and [r.released_at for r in self.releases] == [r.released_at for r in other.releases]
            and self.edges == other.edges
            and self.management == other.management
            and self.vulnerabilities == other.vulnerabilities
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"DependencyGraph(epoch={self.epoch}, releases={len(self.releases)})"


def build_graph(
    releases: Iterable[ReleaseId],
    poms: Mapping[ReleaseId, PomDocument],
    vulns: Iterable[Vulnerability],
    diagnostics: Optional[Diagnostics] = None,
) -> DependencyGraph:
    """Index corpus records into epoch 0 of a dependency graph."""
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    ordered = sorted(releases)
    edges, management = [], []
    for release in ordered:
        document = poms.get(release)
        edges.append(document.dependencies if document else ())
        management.append(document.dependency_management if document else ())

    vulnerabilities = sorted(vulns, key=lambda v: (v.id, v.library))
    graph = DependencyGraph(ordered, edges, management, vulnerabilities)
    for vuln in vulnerabilities:
        if not graph.affected_releases(vuln):
            diagnostics.add("vulnerability_without_releases", "no corpus release is affected", f"{vuln.id} {vuln.library}")

    log.info("graph_built", **graph.stats())
    return graph


def apply_range_update(graph: DependencyGraph, release: ReleaseId, target: LibraryId, new_spec: VersionSpec) -> DependencyGraph:
    """
    Replace the spec of the first declaration of `target` in `release`.

    Returns the next epoch; `graph` itself is left untouched.
    """
    if not graph.has_release(release):
        raise NoSuchEdge(f"{release} is not in the graph")
    handle = graph.handle(release)
    declarations = graph.edges[handle]
    for position, decl in enumerate(declarations):
        if decl.target == target:
            updated = declarations[:position] + (replace(decl, spec=new_spec, managed=False),) + declarations[position + 1:]
            edges = graph.edges[:handle] + (updated,) + graph.edges[handle + 1:]
            log.debug("range_applied", release=str(release), target=str(target), spec=str(new_spec), epoch=graph.epoch + 1)
            return graph.with_edges(edges)
    raise NoSuchEdge(f"{release} does not depend on {target}")


# ============================================================
# Snapshot container
# ============================================================


class _StringTable:
    def __init__(self, strings: Optional[List[str]] = None):
        self.strings: List[str] = list(strings or [])
        self._index: Dict[str, int] = {s: i for i, s in enumerate(self.strings)}

    def intern(self, value: str) -> int:
        index = self._index.get(value)
        if index is None:
            index = len(self.strings)
            self.strings.append(value)
            self._index[value] = index
        return index

    def __getitem__(self, index: int) -> str:
        return self.strings[index]


def _encode_spec(spec: VersionSpec) -> List[Any]:
    if isinstance(spec, SoftVersion):
        return ["s", spec.preferred.raw]
    if isinstance(spec, RangeSet):
        return ["r", str(spec)]
    return ["u", spec.raw]


def _decode_spec(encoded: Sequence[Any]) -> VersionSpec:
    kind, text = encoded
    if kind == "s":
        return SoftVersion(parse_version(text))
    if kind == "r":
        return parse_version_spec(text)
    return UnresolvedSpec(text)


def _encode_decl(decl: DependencyDecl, table: _StringTable) -> List[Any]:
    exclusions = sorted(decl.exclusions)
    return [
        table.intern(decl.target.group),
        table.intern(decl.target.artifact),
        _encode_spec(decl.spec),
        decl.scope.value,
        int(decl.optional),
        int(decl.managed),
        [[table.intern(e.group), table.intern(e.artifact)] for e in exclusions],
    ]


def _decode_decl(encoded: Sequence[Any], table: _StringTable) -> DependencyDecl:
    group, artifact, spec, scope, optional, managed, exclusions = encoded
    return DependencyDecl(
        target=LibraryId(table[group], table[artifact]),
        spec=_decode_spec(spec),
        scope=Scope(scope),
        optional=bool(optional),
        exclusions=frozenset(LibraryId(table[g], table[a]) for g, a in exclusions),
        managed=bool(managed),
    )


def _encode_sections(graph: DependencyGraph) -> Dict[str, Any]:
    table = _StringTable()
    releases = [
        [table.intern(r.library.group), table.intern(r.library.artifact), table.intern(r.version.raw),
         r.released_at.isoformat() if r.released_at else None]
        for r in graph.releases
    ]
    edges = [[_encode_decl(d, table) for d in declarations] for declarations in graph.edges]
    management = [[_encode_decl(d, table) for d in declarations] for declarations in graph.management]
    vulnerabilities = [
        {
            "id": v.id,
            "library": [table.intern(v.library.group), table.intern(v.library.artifact)],
            "affected": str(v.affected),
            "published_at": v.published_at.isoformat(),
            "severity": v.severity,
        }
        for v in graph.vulnerabilities
    ]
    return {
        "strings": table.strings,
        "releases": releases,
        "edges": edges,
        "management": management,
        "vulnerabilities": vulnerabilities,
    }


def save_snapshot(graph: DependencyGraph, path: Union[str, Path]) -> None:
    """Write the graph atomically; a partially written file never replaces a good one."""
    payloads = {
        name: json.dumps(section, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
        for name, section in _encode_sections(graph).items()
    }
    header = {
        "format": SNAPSHOT_FORMAT,
        "epoch": graph.epoch,
        "sections": [
            {"name": name, "length": len(payloads[name]), "sha256": hashlib.sha256(payloads[name]).hexdigest()}
            for name in _SECTIONS
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    target = Path(path)
    temporary = target.with_name(target.name + ".tmp")
    try:
        with open(temporary, "wb") as handle:
            handle.write(SNAPSHOT_MAGIC)
            handle.write(struct.pack(">I", len(header_bytes)))
            handle.write(header_bytes)
            for name in _SECTIONS:
                handle.write(struct.pack(">I", len(payloads[name])))
                handle.write(payloads[name])
        os.replace(temporary, target)
    except OSError as e:
        raise SnapshotError(f"cannot write snapshot {target}: {e}") from e
    log.info("snapshot_saved", path=str(target), **graph.stats())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise VersionMismatch("snapshot is truncated")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]


def load_snapshot(path: Union[str, Path]) -> DependencyGraph:
    """Read a snapshot; any truncation, digest mismatch or unknown format fails closed."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise SnapshotError(f"cannot read snapshot {path}: {e}") from e

    reader = _Reader(data)
    if reader.take(len(SNAPSHOT_MAGIC)) != SNAPSHOT_MAGIC:
        raise VersionMismatch(f"{path} is not a ranger snapshot")
    try:
        header = json.loads(reader.take(reader.u32()).decode("utf-8"))
        if header.get("format") != SNAPSHOT_FORMAT:
            raise VersionMismatch(f"unsupported snapshot format {header.get('format')!r}")
        sections: Dict[str, Any] = {}
        for entry in header["sections"]:
            payload = reader.take(reader.u32())
            if len(payload) != entry["length"] or hashlib.sha256(payload).hexdigest() != entry["sha256"]:
                raise VersionMismatch(f"section {entry['name']} is corrupt")
            sections[entry["name"]] = json.loads(payload.decode("utf-8"))
        if reader.offset != len(data):
            raise VersionMismatch("trailing bytes after last section")
        graph = _decode_graph(sections, header["epoch"])
    except VersionMismatch:
        raise
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as e:
        raise VersionMismatch(f"snapshot {path} is corrupt: {e}") from e

    log.info("snapshot_loaded", path=str(path), **graph.stats())
    return graph


def _decode_graph(sections: Mapping[str, Any], epoch: int) -> DependencyGraph:
    table = _StringTable(sections["strings"])
    releases = [
        ReleaseId(LibraryId(table[g], table[a]), parse_version(table[v]), date.fromisoformat(d) if d else None)
        for g, a, v, d in sections["releases"]
    ]
    edges = [[_decode_decl(d, table) for d in declarations] for declarations in sections["edges"]]
    management = [[_decode_decl(d, table) for d in declarations] for declarations in sections["management"]]
    if len(edges) != len(releases) or len(management) != len(releases):
        raise VersionMismatch("adjacency sections do not match the release table")
    vulnerabilities = [
        Vulnerability(
            id=v["id"],
            library=LibraryId(table[v["library"][0]], table[v["library"][1]]),
            affected=parse_version_spec(v["affected"]),
            published_at=date.fromisoformat(v["published_at"]),
            severity=v.get("severity"),
        )
        for v in sections["vulnerabilities"]
    ]
    return DependencyGraph(releases, edges, management, vulnerabilities, epoch=int(epoch))
