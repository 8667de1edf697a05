"""
Version range restoration for a soft-pinned dependency.

Given a dependent that pins `target` at v_s, restore_range picks the versions
of `target` that are no more vulnerable than v_s (counting the whole resolved
tree of each candidate), compatible with v_s on the APIs the dependent uses,
and as few vulnerabilities as possible; among those it keeps as many versions
as it can and renders them as a Maven range.
"""
from __future__ import annotations

import json
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple, Union
from xml.parsers import expat
from xml.sax.saxutils import escape

import structlog

from ranger.common.diagnostics import Diagnostic, Diagnostics
from ranger.corpus import LibraryId, ReleaseId
from ranger.errors import HookSpawnError, MissingSurface, RewriteError, SchemaError, XmlError
from ranger.graph import DependencyGraph
from ranger.resolver import DEFAULT_MAX_DEPTH, count_vulnerabilities, resolve_tree
from ranger.version import VersionNumber, parse_version, synthesize_range

log = structlog.get_logger(__name__)

DEFAULT_HOOK_TIMEOUT = 300.0


# ============================================================
# API surfaces and compatibility
# ============================================================


@dataclass(frozen=True)
class ApiDescriptor:
    signature_hash: str
    behavior_tag: str = ""


@dataclass(frozen=True)
class ApiSurface:
    release: ReleaseId
    entries: Mapping[str, ApiDescriptor] = field(default_factory=dict)


class CompatKind(str, Enum):
    SOURCE_BINARY = "source_binary"
    BEHAVIORAL = "behavioral"


@dataclass(frozen=True, order=True)
class Incompatibility:
    api_id: str
    kind: CompatKind


@dataclass(frozen=True)
class CompatReport:
    base: ReleaseId
    candidate: ReleaseId
    incompatible: FrozenSet[Incompatibility] = frozenset()

    @property
    def api_ids(self) -> FrozenSet[str]:
        return frozenset(item.api_id for item in self.incompatible)


@dataclass(frozen=True)
class UsageManifest:
    project: str
    dependency: LibraryId
    used_apis: FrozenSet[str] = frozenset()


def compatibility_check(surface_base: ApiSurface, surface_cand: ApiSurface) -> CompatReport:
    """APIs of the base surface that the candidate removes, re-signs, or changes the behaviour of."""
    incompatible = set()
    for api_id, base in surface_base.entries.items():
        candidate = surface_cand.entries.get(api_id)
        if candidate is None or candidate.signature_hash != base.signature_hash:
            incompatible.add(Incompatibility(api_id, CompatKind.SOURCE_BINARY))
        elif candidate.behavior_tag != base.behavior_tag:
            incompatible.add(Incompatibility(api_id, CompatKind.BEHAVIORAL))
    return CompatReport(surface_base.release, surface_cand.release, frozenset(incompatible))


def reachable_incompatibilities(report: CompatReport, usage: Optional[UsageManifest]) -> FrozenSet[str]:
    """Incompatible APIs the dependent uses; without usage data every incompatible API counts."""
    if usage is None or not usage.used_apis:
        return report.api_ids
    return report.api_ids & usage.used_apis


class SurfaceProvider(Protocol):
    def get(self, release: ReleaseId) -> ApiSurface:
        ...


def _surface_from_payload(payload: Mapping[str, object], source: str) -> ApiSurface:
    try:
        library = LibraryId(str(payload["group"]), str(payload["artifact"]))
        release = ReleaseId(library, parse_version(str(payload["version"])))
        entries: Dict[str, ApiDescriptor] = {}
        for api in payload.get("apis", []):
            api_id = str(api["id"])
            if api_id in entries:
                raise SchemaError(f"{source}: duplicate api id {api_id!r}")
            entries[api_id] = ApiDescriptor(str(api.get("signature_hash", "")), str(api.get("behavior_tag", "")))
    except (KeyError, TypeError) as e:
        raise SchemaError(f"{source}: malformed surface: {e}") from e
    return ApiSurface(release, entries)


class StaticSurfaceProvider:
    """Surfaces held in memory, keyed by (library, version)."""

    def __init__(self, surfaces: Iterable[ApiSurface] = ()):
        self._surfaces = {(s.release.library, s.release.version): s for s in surfaces}

    def add(self, surface: ApiSurface) -> None:
        self._surfaces[(surface.release.library, surface.release.version)] = surface

    def get(self, release: ReleaseId) -> ApiSurface:
        try:
            return self._surfaces[(release.library, release.version)]
        except KeyError:
            raise MissingSurface(f"no API surface for {release}") from None


class DirectorySurfaceProvider:
    """Surfaces read lazily from `<group>__<artifact>__<version>.json` files."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self._cache: Dict[Tuple[LibraryId, VersionNumber], ApiSurface] = {}

    def path_for(self, release: ReleaseId) -> Path:
        library = release.library
        return self.directory / f"{library.group}__{library.artifact}__{release.version}.json"

    def get(self, release: ReleaseId) -> ApiSurface:
        key = (release.library, release.version)
        if key not in self._cache:
            path = self.path_for(release)
            try:
                payload = json.loads(path.read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise MissingSurface(f"no API surface for {release}") from None
            except (OSError, json.JSONDecodeError) as e:
                raise MissingSurface(f"unreadable API surface for {release}: {e}") from e
            self._cache[key] = _surface_from_payload(payload, path.name)
        return self._cache[key]


def load_usage_manifest(path: Union[str, Path]) -> UsageManifest:
    with open(path, encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as e:
            raise SchemaError(f"invalid JSON: {e.msg}", e.lineno) from e
    try:
        dependency = payload["dependency"]
        return UsageManifest(
            project=str(payload.get("project", "")),
            dependency=LibraryId(str(dependency["group"]), str(dependency["artifact"])),
            used_apis=frozenset(str(api) for api in payload.get("used_apis", [])),
        )
    except (KeyError, TypeError) as e:
        raise SchemaError(f"{path}: malformed usage manifest: {e}") from e


# ============================================================
# Validation hook
# ============================================================


def run_validation_hook(
    command_template: str,
    candidate: VersionNumber,
    timeout: float = DEFAULT_HOOK_TIMEOUT,
    diagnostics: Optional[Diagnostics] = None,
) -> bool:
    """
    Run the configured test command for one candidate version.

    Returns True iff the command exits 0 within the timeout.

    Raises:
        HookSpawnError: the command cannot be started
    """
    command = shlex.split(command_template.replace("{version}", str(candidate)))
    if not command:
        raise HookSpawnError("validation command is empty")
    try:
        result = subprocess.run(command, capture_output=True, timeout=timeout, check=False)
    except subprocess.TimeoutExpired:
        if diagnostics is not None:
            diagnostics.add("hook_timeout", f"validation exceeded {timeout}s", str(candidate))
        return False
    except OSError as e:
        raise HookSpawnError(f"cannot start {command[0]!r}: {e}") from e
    log.debug("validation_hook_finished", version=str(candidate), returncode=result.returncode)
    return result.returncode == 0


class ValidationHook:
    """Callable wrapper binding a command template, timeout and diagnostics sink."""

    def __init__(self, command_template: str, timeout: float = DEFAULT_HOOK_TIMEOUT,
                 diagnostics: Optional[Diagnostics] = None):
        self.command_template = command_template
        self.timeout = timeout
        self.diagnostics = diagnostics

    def __call__(self, candidate: VersionNumber) -> bool:
        return run_validation_hook(self.command_template, candidate, self.timeout, self.diagnostics)

    def reporting_to(self, diagnostics: Diagnostics) -> "ValidationHook":
        return ValidationHook(self.command_template, self.timeout, diagnostics)


Validator = Callable[[VersionNumber], bool]


# ============================================================
# Restoration
# ============================================================


class Outcome(str, Enum):
    RESTORED = "Restored"
    NO_COMPATIBLE_PATCH = "NoCompatiblePatch"
    NO_SECURE_VERSION = "NoSecureVersion"
    INTERNAL_ERROR = "InternalError"


@dataclass(frozen=True)
class VersionAssessment:
    vuln_total: int
    compat_ok: Optional[bool] = None
    test_ok: Optional[bool] = None
    breaking: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, object]:
        return {
            "vuln_total": self.vuln_total,
            "compat_ok": self.compat_ok,
            "test_ok": self.test_ok,
            "breaking": list(self.breaking),
        }


@dataclass(frozen=True)
class RestoredRange:
    dependent: ReleaseId
    target: LibraryId
    v_s: VersionNumber
    outcome: Outcome
    selected: Tuple[VersionNumber, ...] = ()
    range_text: Optional[str] = None
    per_version: Mapping[VersionNumber, VersionAssessment] = field(default_factory=dict)
    detail: str = ""
    diagnostics: Tuple[Diagnostic, ...] = ()

    @property
    def restored(self) -> bool:
        return self.outcome is Outcome.RESTORED

    @property
    def breaking_apis(self) -> Tuple[str, ...]:
        """Reachable incompatible APIs over every rejected candidate."""
        found = {api for assessment in self.per_version.values() for api in assessment.breaking}
        return tuple(sorted(found))

    def to_dict(self) -> Dict[str, object]:
        return {
            "dependent": str(self.dependent),
            "target": str(self.target),
            "v_s": str(self.v_s),
            "outcome": self.outcome.value,
            "selected": [str(v) for v in self.selected],
            "range": self.range_text,
            "per_version": {str(v): a.to_dict() for v, a in sorted(self.per_version.items())},
            "detail": self.detail,
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }


def _map(function, items: Sequence, workers: int) -> List:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(function, items))
    return [function(item) for item in items]


class _Restoration:
    """State of one restore_range call."""

    def __init__(self, graph, dependent, target, v_s, usage, surfaces, max_depth, scopes, diagnostics):
        self.graph: DependencyGraph = graph
        self.dependent: ReleaseId = dependent
        self.target: LibraryId = target
        self.v_s: VersionNumber = v_s
        self.usage: Optional[UsageManifest] = usage
        self.surfaces: SurfaceProvider = surfaces
        self.max_depth = max_depth
        self.scopes = scopes
        self.diagnostics = diagnostics
        self.assessments: Dict[VersionNumber, VersionAssessment] = {}

    def release(self, version: VersionNumber) -> ReleaseId:
        return self.graph.release(self.target, version) or ReleaseId(self.target, version)

    def vuln_total(self, version: VersionNumber) -> int:
        tree = resolve_tree(self.graph, self.release(version), self.max_depth)
        return count_vulnerabilities(self.graph, tree, self.scopes).total

    def result(self, outcome: Outcome, detail: str = "", selected: Sequence[VersionNumber] = (),
               range_text: Optional[str] = None) -> RestoredRange:
        return RestoredRange(
            dependent=self.dependent,
            target=self.target,
            v_s=self.v_s,
            outcome=outcome,
            selected=tuple(selected),
            range_text=range_text,
            per_version=dict(sorted(self.assessments.items())),
            detail=detail,
            diagnostics=tuple(self.diagnostics),
        )

    def scan(self, ordered: Sequence[VersionNumber], base: ApiSurface, totals: Mapping[VersionNumber, int],
             allow_holes: bool) -> List[VersionNumber]:
        """Admit compatible versions in order; without holes the scan stops at the first incompatible one."""
        admitted = []
        for version in ordered:
            try:
                surface = self.surfaces.get(self.release(version))
            except MissingSurface as e:
                self.diagnostics.add("missing_surface", str(e), f"{self.target}:{version}")
                continue
            breaking = reachable_incompatibilities(compatibility_check(base, surface), self.usage)
            ok = not breaking
            self.assessments[version] = VersionAssessment(totals[version], ok, None, tuple(sorted(breaking)))
            if ok:
                admitted.append(version)
            elif not allow_holes:
                break
        return admitted


def restore_range(
    graph: DependencyGraph,
    dependent: ReleaseId,
    target: LibraryId,
    v_s: VersionNumber,
    usage: Optional[UsageManifest],
    surfaces: SurfaceProvider,
    validator: Optional[Validator] = None,
    open_upper: bool = False,
    allow_holes: bool = False,
    workers: int = 1,
    max_depth: int = DEFAULT_MAX_DEPTH,
    scopes: Optional[Iterable[object]] = None,
) -> RestoredRange:
    """
    Restore a version range for the dependent's pin of `target` at v_s.

    Args:
        graph: graph snapshot
        dependent: release declaring the pin
        target: pinned library
        v_s: pinned version
        usage: APIs of `target` the dependent uses; None treats every API as used
        surfaces: API surface provider for releases of `target`
        validator: optional callable(version) -> bool run on the selected versions
        open_upper: leave the upper bound open when the selection reaches the newest version
        allow_holes: keep scanning past incompatible versions
        workers: parallelism for candidate evaluation and validation
        max_depth: resolution depth for vulnerability counting
        scopes: scopes counted by count_vulnerabilities

    Returns:
        RestoredRange; failures are reported through its outcome, never raised
    """
    diagnostics = Diagnostics()
    state = _Restoration(graph, dependent, target, v_s, usage, surfaces, max_depth, scopes, diagnostics)
    universe = graph.versions_of(target)
    if v_s not in universe:
        return state.result(Outcome.INTERNAL_ERROR, f"{target}:{v_s} is not in the corpus")
    try:
        base = surfaces.get(state.release(v_s))
    except MissingSurface as e:
        return state.result(Outcome.INTERNAL_ERROR, str(e))

    totals = dict(zip(universe, _map(state.vuln_total, universe, workers)))
    limit = totals[v_s]
    feasible = [v for v in universe if totals[v] <= limit]
    state.assessments.update({v: VersionAssessment(totals[v]) for v in universe})
    state.assessments[v_s] = VersionAssessment(limit, True)

    upper = [v for v in feasible if v > v_s]
    lower = [v for v in reversed(feasible) if v < v_s]
    admitted = sorted([v_s] + state.scan(upper, base, totals, allow_holes) + state.scan(lower, base, totals, allow_holes))

    best = min(totals[v] for v in admitted)
    selected = [v for v in admitted if totals[v] == best]
    if limit > 0 and best == limit:
        safer = [v for v in feasible if totals[v] < limit]
        if safer:
            return state.result(Outcome.NO_COMPATIBLE_PATCH, f"{len(safer)} safer version(s) are incompatible")
        return state.result(Outcome.NO_SECURE_VERSION, f"no version of {target} has fewer than {limit} vulnerabilities")

    if validator is not None:
        check = validator.reporting_to(diagnostics) if isinstance(validator, ValidationHook) else validator
        try:
            verdicts = _map(check, selected, workers)
        except HookSpawnError as e:
            return state.result(Outcome.INTERNAL_ERROR, str(e))
        for version, passed in zip(selected, verdicts):
            state.assessments[version] = replace(state.assessments[version], test_ok=passed)
        selected = [v for v, passed in zip(selected, verdicts) if passed]
        if not selected:
            return state.result(Outcome.NO_COMPATIBLE_PATCH, "every compatible candidate failed validation")

    range_text = synthesize_range(selected, universe, open_upper=open_upper)
    if totals[selected[-1]] > 0:
        diagnostics.add("vulnerable_highest_member", f"resolved member has {totals[selected[-1]]} vulnerabilities",
                        f"{target}:{selected[-1]}")
    log.info("range_restored", dependent=str(dependent), target=str(target), v_s=str(v_s), range=range_text,
             selected=len(selected))
    return state.result(Outcome.RESTORED, selected=selected, range_text=range_text)


# ============================================================
# POM rewriting
# ============================================================


def _local_name(name: str) -> str:
    return name.rsplit(":", 1)[-1]


_DEPENDENCY_PATH = ("project", "dependencies", "dependency")


class _VersionLocator:
    """Finds the byte span of the <version> text of the first matching dependency."""

    def __init__(self, data: bytes, target: LibraryId):
        self.data = data
        self.target = target
        self.stack: List[str] = []
        self.fields: Dict[str, str] = {}
        self.text: List[str] = []
        self.version_span: Optional[Tuple[int, int]] = None
        self.found: Optional[Tuple[int, int]] = None
        self.parser = expat.ParserCreate()
        self.parser.StartElementHandler = self.start
        self.parser.EndElementHandler = self.end
        self.parser.CharacterDataHandler = self.chars

    def in_dependency(self) -> bool:
        return tuple(self.stack[:3]) == _DEPENDENCY_PATH

    def start(self, name: str, attrs) -> None:
        self.stack.append(_local_name(name))
        self.text = []
        if self.in_dependency() and len(self.stack) == 3:
            self.fields = {}
            self.version_span = None
        if self.in_dependency() and len(self.stack) == 4 and self.stack[3] == "version":
            opening = self.parser.CurrentByteIndex
            close = self.data.index(b">", opening)
            if self.data[close - 1:close] == b"/":
                self.version_span = (close + 1, close + 1)
            else:
                self.version_span = (close + 1, -1)

    def end(self, name: str) -> None:
        local = _local_name(name)
        if self.in_dependency() and len(self.stack) == 4:
            self.fields[local] = "".join(self.text).strip()
            if local == "version" and self.version_span is not None and self.version_span[1] == -1:
                self.version_span = (self.version_span[0], self.parser.CurrentByteIndex)
        if self.in_dependency() and len(self.stack) == 3 and self.found is None:
            if (self.fields.get("groupId"), self.fields.get("artifactId")) == (self.target.group, self.target.artifact):
                if self.version_span is None:
                    raise RewriteError(f"dependency {self.target} has no <version> element")
                self.found = self.version_span
        self.stack.pop()
        self.text = []

    def chars(self, data: str) -> None:
        self.text.append(data)

    def locate(self) -> Tuple[int, int]:
        try:
            self.parser.Parse(self.data, True)
        except expat.ExpatError as e:
            raise XmlError(f"malformed POM: {e}") from e
        if self.found is None:
            raise RewriteError(f"no dependency on {self.target} in project/dependencies")
        return self.found


def rewrite_pom_version(pom_bytes: bytes, target: LibraryId, range_text: str) -> bytes:
    """Replace the text of the first project-level dependency <version> on target; other bytes are kept."""
    start, end = _VersionLocator(pom_bytes, target).locate()
    if start == end and pom_bytes[start - 2:start] == b"/>":
        raise RewriteError(f"dependency {target} has an empty <version/> element")
    return pom_bytes[:start] + escape(range_text).encode("utf-8") + pom_bytes[end:]
