"""
Corpus ingestion: repository index, POM documents and the merged vulnerability file.

Inputs are local files only:
    index.jsonl   one {group, artifact, version, released_at} object per line
    poms/         <group>__<artifact>__<version>.xml raw POM files
    vulns.json    array of {id, group, artifact, severity?, published_at, ranges}
"""
from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple, Union

import structlog

from ranger.common.diagnostics import Diagnostics
from ranger.common.utils import parse_utc_date
from ranger.errors import MalformedRange, MissingCoordinates, SchemaError, UnorderedEvents, XmlError
from ranger.version import (
    Interval,
    RangeSet,
    SoftVersion,
    UnresolvedSpec,
    VersionNumber,
    VersionSpec,
    compare_versions,
    merge_intervals,
    parse_version,
    parse_version_spec,
)

log = structlog.get_logger(__name__)

WILDCARD = "*"
MAX_PARENT_CHAIN = 10
_PLACEHOLDER = re.compile(r"\$\{([^}]+)\}")


@dataclass(frozen=True, order=True)
class LibraryId:
    group: str
    artifact: str

    def __post_init__(self) -> None:
        if not self.group or not self.artifact:
            raise MissingCoordinates(f"library needs group and artifact, got {self.group!r}:{self.artifact!r}")

    def __str__(self) -> str:
        return f"{self.group}:{self.artifact}"

    def matches(self, other: "LibraryId") -> bool:
        """Exclusion matching; '*' in this id matches any group or artifact."""
        return (self.group in (WILDCARD, other.group)) and (self.artifact in (WILDCARD, other.artifact))

    @classmethod
    def parse(cls, text: str) -> "LibraryId":
        parts = text.strip().split(":")
        if len(parts) != 2:
            raise MissingCoordinates(f"expected G:A, got {text!r}")
        return cls(parts[0], parts[1])


@dataclass(frozen=True, order=True)
class ReleaseId:
    library: LibraryId
    version: VersionNumber
    released_at: Optional[date] = field(default=None, compare=False)

    def __str__(self) -> str:
        return f"{self.library}:{self.version}"

    @classmethod
    def parse(cls, text: str, released_at: Optional[date] = None) -> "ReleaseId":
        parts = text.strip().split(":")
        if len(parts) != 3:
            raise MissingCoordinates(f"expected G:A:V, got {text!r}")
        return cls(LibraryId(parts[0], parts[1]), parse_version(parts[2]), released_at)


class Scope(str, Enum):
    COMPILE = "compile"
    PROVIDED = "provided"
    RUNTIME = "runtime"
    TEST = "test"
    SYSTEM = "system"
    IMPORT = "import"

    @property
    def transitive(self) -> bool:
        return self in (Scope.COMPILE, Scope.RUNTIME)


@dataclass(frozen=True)
class DependencyDecl:
    target: LibraryId
    spec: VersionSpec
    scope: Scope = Scope.COMPILE
    optional: bool = False
    exclusions: FrozenSet[LibraryId] = frozenset()
    managed: bool = False  # version taken from dependencyManagement

    def excludes(self, library: LibraryId) -> bool:
        return any(pattern.matches(library) for pattern in self.exclusions)


@dataclass(frozen=True)
class PomDocument:
    release: ReleaseId
    parent: Optional[ReleaseId] = None
    properties: Mapping[str, str] = field(default_factory=dict)
    dependencies: Tuple[DependencyDecl, ...] = ()
    dependency_management: Tuple[DependencyDecl, ...] = ()


@dataclass(frozen=True)
class Vulnerability:
    id: str
    library: LibraryId
    affected: RangeSet
    published_at: date
    severity: Optional[str] = None

    def affects(self, release: ReleaseId) -> bool:
        return release.library == self.library and self.affected.contains(release.version)


# ============================================================
# Repository index
# ============================================================


def _required_text(record: Mapping[str, Any], key: str, line: int) -> str:
    value = record.get(key)
    if not isinstance(value, str) or not value.strip():
        raise SchemaError(f"missing or empty '{key}'", line)
    return value.strip()


def load_index(path: Union[str, Path], diagnostics: Optional[Diagnostics] = None) -> List[ReleaseId]:
    """
    Load the repository index.

    Args:
        path: index.jsonl file
        diagnostics: collector for duplicate and undated releases

    Returns:
        Deduplicated releases sorted by group, artifact and version
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    releases: Dict[Tuple[LibraryId, VersionNumber], ReleaseId] = {}

    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON: {e.msg}", number) from e
            if not isinstance(record, dict):
                raise SchemaError("expected a JSON object", number)

            library = LibraryId(_required_text(record, "group", number), _required_text(record, "artifact", number))
            version = parse_version(_required_text(record, "version", number))
            try:
                released_at = parse_utc_date(record.get("released_at"))
            except ValueError as e:
                raise SchemaError(f"invalid released_at: {record.get('released_at')!r}", number) from e

            release = ReleaseId(library, version, released_at)
            key = (library, version)
            existing = releases.get(key)
            if existing is None:
                releases[key] = release
                continue
            diagnostics.add("duplicate_release", f"line {number} repeats {release}", str(release))
            if existing.released_at is None or (released_at is not None and released_at < existing.released_at):
                releases[key] = release

    result = sorted(releases.values())
    for release in result:
        if release.released_at is None:
            diagnostics.add("missing_release_date", "release has no date and is left out of time series", str(release))
        if release.version.needs_lexical_fallback:
            diagnostics.add("lexical_fallback", "version carries an unknown qualifier", str(release))

    log.info("index_loaded", path=str(path), releases=len(result))
    return result


# ============================================================
# POM documents
# ============================================================


@dataclass
class _RawDependency:
    group: Optional[str]
    artifact: Optional[str]
    version: Optional[str]
    scope: Optional[str]
    optional: Optional[str]
    exclusions: List[Tuple[Optional[str], Optional[str]]]


@dataclass
class _RawPom:
    group: Optional[str]
    artifact: Optional[str]
    version: Optional[str]
    parent: Optional[Tuple[str, str, str]]
    properties: Dict[str, str]
    dependencies: List[_RawDependency]
    management: List[_RawDependency]


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _child(element: Optional[ET.Element], name: str) -> Optional[ET.Element]:
    if element is None:
        return None
    for child in element:
        if _local(child.tag) == name:
            return child
    return None


def _children(element: Optional[ET.Element], name: str) -> List[ET.Element]:
    if element is None:
        return []
    return [child for child in element if _local(child.tag) == name]


def _text(element: Optional[ET.Element], name: str) -> Optional[str]:
    child = _child(element, name)
    if child is None or child.text is None:
        return None
    value = child.text.strip()
    return value or None


def _raw_dependencies(container: Optional[ET.Element]) -> List[_RawDependency]:
    out = []
    for dep in _children(_child(container, "dependencies"), "dependency"):
        exclusions = [
            (_text(ex, "groupId"), _text(ex, "artifactId"))
            for ex in _children(_child(dep, "exclusions"), "exclusion")
        ]
        out.append(_RawDependency(
            group=_text(dep, "groupId"),
            artifact=_text(dep, "artifactId"),
            version=_text(dep, "version"),
            scope=_text(dep, "scope"),
            optional=_text(dep, "optional"),
            exclusions=exclusions,
        ))
    return out


def read_pom_xml(data: bytes) -> _RawPom:
    """Extract coordinates, properties and dependency sections without interpolation."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as e:
        raise XmlError(f"malformed POM: {e}") from e

    parent_element = _child(root, "parent")
    parent = None
    if parent_element is not None:
        pg, pa, pv = (_text(parent_element, k) for k in ("groupId", "artifactId", "version"))
        if pg and pa and pv:
            parent = (pg, pa, pv)

    properties: Dict[str, str] = {}
    properties_element = _child(root, "properties")
    for prop in (list(properties_element) if properties_element is not None else []):
        properties[_local(prop.tag)] = (prop.text or "").strip()

    return _RawPom(
        group=_text(root, "groupId") or (parent[0] if parent else None),
        artifact=_text(root, "artifactId"),
        version=_text(root, "version") or (parent[2] if parent else None),
        parent=parent,
        properties=properties,
        dependencies=_raw_dependencies(root),
        management=_raw_dependencies(_child(root, "dependencyManagement")),
    )


def _builtin_properties(raw: _RawPom, release: ReleaseId) -> Dict[str, str]:
    version = str(release.version)
    builtins = {
        "project.groupId": release.library.group,
        "project.artifactId": release.library.artifact,
        "project.version": version,
        "pom.groupId": release.library.group,
        "pom.artifactId": release.library.artifact,
        "pom.version": version,
        "version": version,
    }
    if raw.parent:
        builtins["project.parent.groupId"] = raw.parent[0]
        builtins["project.parent.artifactId"] = raw.parent[1]
        builtins["project.parent.version"] = raw.parent[2]
        builtins["parent.version"] = raw.parent[2]
    return builtins


def interpolate(value: Optional[str], properties: Mapping[str, str]) -> Tuple[Optional[str], bool]:
    """
    Substitute ${name} placeholders, following nested references.

    Returns the substituted text and whether every placeholder was resolved.
    """
    if value is None:
        return None, True
    current = value
    for _ in range(MAX_PARENT_CHAIN):
        replaced = _PLACEHOLDER.sub(lambda m: properties.get(m.group(1), m.group(0)), current)
        if replaced == current:
            break
        current = replaced
    return current, _PLACEHOLDER.search(current) is None


class _DocumentBuilder:
    """Turns raw dependency sections into declarations for one release."""

    def __init__(self, release: ReleaseId, properties: Mapping[str, str], diagnostics: Diagnostics):
        self.release = release
        self.properties = properties
        self.diagnostics = diagnostics

    def _resolve(self, value: Optional[str]) -> Optional[str]:
        text, complete = interpolate(value, self.properties)
        if not complete:
            self.diagnostics.add("unresolved_property", f"placeholder left in {text!r}", str(self.release))
        return text

    def library(self, raw: _RawDependency) -> LibraryId:
        group, artifact = self._resolve(raw.group), self._resolve(raw.artifact)
        if not group or not artifact:
            raise MissingCoordinates(f"{self.release}: dependency without groupId/artifactId")
        return LibraryId(group, artifact)

    def scope(self, raw_scope: Optional[str]) -> Optional[Scope]:
        if raw_scope is None:
            return None
        text = (self._resolve(raw_scope) or "").lower()
        try:
            return Scope(text)
        except ValueError:
            self.diagnostics.add("unknown_scope", f"scope {text!r} treated as compile", str(self.release))
            return Scope.COMPILE

    def spec(self, raw_version: str, target: LibraryId) -> VersionSpec:
        text, complete = interpolate(raw_version, self.properties)
        subject = f"{self.release} -> {target}"
        if not complete:
            self.diagnostics.add("unresolved_property", f"version {text!r} keeps a placeholder", subject)
            return UnresolvedSpec(raw_version)
        try:
            return parse_version_spec(text)
        except (MalformedRange, ValueError) as e:
            self.diagnostics.add("malformed_version", str(e), subject)
            return UnresolvedSpec(raw_version)

    def exclusions(self, raw: _RawDependency) -> FrozenSet[LibraryId]:
        found = set()
        for group, artifact in raw.exclusions:
            group, artifact = self._resolve(group) or WILDCARD, self._resolve(artifact) or WILDCARD
            found.add(LibraryId(group, artifact))
        return frozenset(found)

    def management(self, raws: Iterable[_RawDependency]) -> List[DependencyDecl]:
        out = []
        for raw in raws:
            target = self.library(raw)
            spec = self.spec(raw.version, target) if raw.version else UnresolvedSpec("")
            out.append(DependencyDecl(
                target=target,
                spec=spec,
                scope=self.scope(raw.scope) or Scope.COMPILE,
                optional=(raw.optional or "").lower() == "true",
                exclusions=self.exclusions(raw),
            ))
        return out

    def dependencies(self, raws: Iterable[_RawDependency], managed: Mapping[LibraryId, DependencyDecl]) -> List[DependencyDecl]:
        out = []
        for raw in raws:
            target = self.library(raw)
            scope = self.scope(raw.scope)
            entry = managed.get(target)
            from_management = False
            if raw.version:
                spec = self.spec(raw.version, target)
            elif entry is not None:
                spec, from_management = entry.spec, True
                scope = scope or entry.scope
            else:
                self.diagnostics.add("missing_version", "no version declared or managed", f"{self.release} -> {target}")
                spec = UnresolvedSpec("")
            out.append(DependencyDecl(
                target=target,
                spec=spec,
                scope=scope or Scope.COMPILE,
                optional=(raw.optional or "").lower() == "true",
                exclusions=self.exclusions(raw),
                managed=from_management,
            ))
        return out


def _management_map(entries: Iterable[DependencyDecl]) -> Dict[LibraryId, DependencyDecl]:
    out: Dict[LibraryId, DependencyDecl] = {}
    for entry in entries:
        if entry.scope is not Scope.IMPORT:
            out.setdefault(entry.target, entry)
    return out


def _parent_release(raw: _RawPom) -> Optional[ReleaseId]:
    if raw.parent is None:
        return None
    try:
        return ReleaseId(LibraryId(raw.parent[0], raw.parent[1]), parse_version(raw.parent[2]))
    except (MissingCoordinates, ValueError):
        return None


def parse_pom(data: bytes, release: ReleaseId, diagnostics: Optional[Diagnostics] = None) -> PomDocument:
    """
    Parse one POM using only its own properties and dependencyManagement.

    Parent merging and BOM imports need the whole corpus; see load_poms.
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    raw = read_pom_xml(data)
    return _build_document(raw, release, [raw], {}, diagnostics)


def _build_document(
    raw: _RawPom,
    release: ReleaseId,
    lineage: List[_RawPom],
    imported: Mapping[LibraryId, DependencyDecl],
    diagnostics: Diagnostics,
) -> PomDocument:
    # lineage is ordered child first; properties of the child win
    properties: Dict[str, str] = {}
    for ancestor in reversed(lineage):
        properties.update(ancestor.properties)
    properties.update(_builtin_properties(raw, release))

    builder = _DocumentBuilder(release, properties, diagnostics)
    management: List[DependencyDecl] = []
    seen: Set[LibraryId] = set()
    for ancestor in lineage:
        for entry in builder.management(ancestor.management):
            key = entry.target if entry.scope is not Scope.IMPORT else None
            if key is not None and key in seen:
                continue
            if key is not None:
                seen.add(key)
            management.append(entry)
    for target, entry in imported.items():
        if target not in seen:
            seen.add(target)
            management.append(entry)

    dependencies = builder.dependencies(raw.dependencies, _management_map(management))
    return PomDocument(
        release=release,
        parent=_parent_release(raw),
        properties=dict(sorted(properties.items())),
        dependencies=tuple(dependencies),
        dependency_management=tuple(management),
    )


def _pom_file_key(path: Path) -> Optional[Tuple[LibraryId, VersionNumber]]:
    parts = path.stem.split("__")
    if len(parts) != 3 or not all(parts):
        return None
    return LibraryId(parts[0], parts[1]), parse_version(parts[2])


def _read_raw(path: Path) -> Tuple[Path, Union[_RawPom, XmlError]]:
    try:
        return path, read_pom_xml(path.read_bytes())
    except XmlError as e:
        return path, e


class _PomCorpus:
    """Parent-chain and BOM resolution over every raw POM of a directory."""

    def __init__(self, raws: Mapping[Tuple[LibraryId, VersionNumber], _RawPom], diagnostics: Diagnostics):
        self.raws = raws
        self.diagnostics = diagnostics
        self._bom_cache: Dict[Tuple[LibraryId, VersionNumber], Dict[LibraryId, DependencyDecl]] = {}

    def lineage(self, raw: _RawPom, subject: str) -> List[_RawPom]:
        chain = [raw]
        current = raw
        while current.parent is not None and len(chain) <= MAX_PARENT_CHAIN:
            parent = _parent_release(current)
            found = self.raws.get((parent.library, parent.version)) if parent else None
            if found is None:
                self.diagnostics.add("missing_parent", f"parent {':'.join(current.parent)} not in corpus", subject)
                break
            if found in chain:
                self.diagnostics.add("parent_cycle", "parent chain loops", subject)
                break
            chain.append(found)
            current = found
        return chain

    def bom_management(self, release: ReleaseId, subject: str) -> Dict[LibraryId, DependencyDecl]:
        key = (release.library, release.version)
        if key in self._bom_cache:
            return self._bom_cache[key]
        raw = self.raws.get(key)
        if raw is None:
            self.diagnostics.add("missing_bom", f"imported BOM {release} not in corpus", subject)
            return {}
        # imports are expanded one level only
        document = _build_document(raw, release, self.lineage(raw, str(release)), {}, self.diagnostics)
        self._bom_cache[key] = _management_map(document.dependency_management)
        return self._bom_cache[key]

    def document(self, release: ReleaseId) -> PomDocument:
        raw = self.raws[(release.library, release.version)]
        lineage = self.lineage(raw, str(release))
        first_pass = _build_document(raw, release, lineage, {}, Diagnostics())
        imported: Dict[LibraryId, DependencyDecl] = {}
        for entry in first_pass.dependency_management:
            if entry.scope is not Scope.IMPORT:
                continue
            if not isinstance(entry.spec, SoftVersion):
                self.diagnostics.add("missing_bom", f"import of {entry.target} has no fixed version", str(release))
                continue
            bom = ReleaseId(entry.target, entry.spec.preferred)
            for target, managed in self.bom_management(bom, str(release)).items():
                imported.setdefault(target, managed)
        return _build_document(raw, release, lineage, imported, self.diagnostics)


def load_poms(
    directory: Union[str, Path],
    releases: Iterable[ReleaseId],
    diagnostics: Optional[Diagnostics] = None,
    workers: int = 4,
) -> Dict[ReleaseId, PomDocument]:
    """
    Parse every POM of a poms/ directory for the indexed releases.

    Parents and imported BOMs are resolved against all files of the
    directory, including those whose release is not indexed.
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    files = sorted(Path(directory).glob("*.xml"))

    raws: Dict[Tuple[LibraryId, VersionNumber], _RawPom] = {}
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for path, result in pool.map(_read_raw, files):
            key = _pom_file_key(path)
            if key is None:
                diagnostics.add("bad_pom_name", "expected <group>__<artifact>__<version>.xml", path.name)
                continue
            if isinstance(result, XmlError):
                diagnostics.add("malformed_pom", str(result), path.name)
                continue
            raws[key] = result

    corpus = _PomCorpus(raws, diagnostics)
    indexed = sorted(releases)
    indexed_keys = {(r.library, r.version) for r in indexed}
    documents: Dict[ReleaseId, PomDocument] = {}
    for release in indexed:
        if (release.library, release.version) not in raws:
            diagnostics.add("missing_pom", "release has no POM file", str(release))
            continue
        try:
            documents[release] = corpus.document(release)
        except MissingCoordinates as e:
            diagnostics.add("missing_coordinates", str(e), str(release))

    for library, version in sorted(set(raws) - indexed_keys):
        diagnostics.add("pom_not_indexed", "POM only used as parent or BOM", f"{library}:{version}")

    log.info("poms_loaded", directory=str(directory), documents=len(documents), files=len(files))
    return documents


# ============================================================
# Vulnerabilities
# ============================================================


def _event_version(value: Any, subject: str) -> Optional[VersionNumber]:
    if value is None or value == "" or value == "0":
        return None
    if not isinstance(value, str):
        raise SchemaError(f"{subject}: range events must be strings")
    return parse_version(value)


def _event_interval(event: Mapping[str, Any], subject: str) -> Interval:
    if not isinstance(event, dict):
        raise SchemaError(f"{subject}: range must be an object")
    introduced = _event_version(event.get("introduced"), subject)
    fixed = _event_version(event.get("fixed"), subject)
    last = _event_version(event.get("last_affected"), subject)

    upper, upper_closed = (fixed, False) if fixed is not None else (last, True)
    if upper is not None and introduced is not None:
        c = compare_versions(upper, introduced)
        if c < 0 or (c == 0 and not upper_closed):
            raise UnorderedEvents(f"{subject}: upper event {upper} precedes introduced {introduced}")
    return Interval(introduced, introduced is not None, upper, upper_closed and upper is not None)


def load_vulnerabilities(path: Union[str, Path]) -> List[Vulnerability]:
    """
    Load the merged vulnerability file.

    Records sharing (id, library) are merged: their ranges are united and the
    earliest publication date is kept.
    """
    with open(path, encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as e:
            raise SchemaError(f"invalid JSON: {e.msg}", e.lineno) from e
    if not isinstance(payload, list):
        raise SchemaError("vulnerability file must be a JSON array")

    intervals: Dict[Tuple[str, LibraryId], List[Interval]] = {}
    meta: Dict[Tuple[str, LibraryId], Tuple[date, Optional[str]]] = {}
    for position, record in enumerate(payload):
        subject = f"record {position}"
        if not isinstance(record, dict):
            raise SchemaError(f"{subject}: expected an object")
        vuln_id = record.get("id")
        if not isinstance(vuln_id, str) or not vuln_id:
            raise SchemaError(f"{subject}: missing id")
        subject = f"{vuln_id} ({subject})"
        try:
            library = LibraryId(record.get("group") or "", record.get("artifact") or "")
        except MissingCoordinates as e:
            raise SchemaError(f"{subject}: {e}") from e
        try:
            published = parse_utc_date(record.get("published_at"))
        except ValueError as e:
            raise SchemaError(f"{subject}: invalid published_at") from e
        if published is None:
            raise SchemaError(f"{subject}: published_at is required")
        ranges = record.get("ranges")
        if not isinstance(ranges, list) or not ranges:
            raise SchemaError(f"{subject}: at least one affected range is required")

        key = (vuln_id, library)
        intervals.setdefault(key, []).extend(_event_interval(event, subject) for event in ranges)
        severity = record.get("severity")
        if key in meta:
            earliest, known_severity = meta[key]
            meta[key] = (min(earliest, published), known_severity or severity)
        else:
            meta[key] = (published, severity)

    result = []
    for key in sorted(intervals, key=lambda k: (k[0], k[1])):
        published, severity = meta[key]
        result.append(Vulnerability(key[0], key[1], merge_intervals(intervals[key]), published, severity))
    log.info("vulnerabilities_loaded", path=str(path), vulnerabilities=len(result))
    return result


def match_affected_versions(vuln: Vulnerability, releases: Iterable[ReleaseId]) -> Set[ReleaseId]:
    """Releases of the vulnerable library whose version falls inside the affected ranges."""
    return {release for release in releases if vuln.affects(release)}
