"""
Depth-by-depth remediation campaign for one vulnerability.

Each depth d restores the pins of the releases affected at exactly depth d
(against their next hop towards the vulnerable library), applies the
restored ranges to a new graph epoch, and reruns ALSearch before moving on.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd
import structlog

from ranger.alsearch import AffectedRecord, find_affected
from ranger.analytics.persistence import bucket_dates
from ranger.common.utils import dumps_json, utc_today, write_text
from ranger.corpus import LibraryId, ReleaseId, Vulnerability
from ranger.errors import NoSuchEdge, SchemaError
from ranger.graph import DependencyGraph, apply_range_update
from ranger.resolver import DEFAULT_MAX_DEPTH
from ranger.restore import (
    Outcome,
    RestoredRange,
    SurfaceProvider,
    UsageManifest,
    Validator,
    load_usage_manifest,
    restore_range,
)
from ranger.version import parse_version_spec

log = structlog.get_logger(__name__)


@dataclass
class CampaignConfig:
    surfaces: SurfaceProvider
    usages: Mapping[Tuple[str, LibraryId], UsageManifest] = field(default_factory=dict)
    validator: Optional[Validator] = None
    open_upper: bool = False
    allow_holes: bool = False
    eager: bool = False
    max_depth: int = DEFAULT_MAX_DEPTH
    bucket: str = "month"
    horizon: Optional[date] = None
    workers: int = 1

    def usage_for(self, dependent: LibraryId, target: LibraryId) -> Optional[UsageManifest]:
        return self.usages.get((str(dependent), target))


def load_usage_directory(directory: Union[str, Path]) -> Dict[Tuple[str, LibraryId], UsageManifest]:
    """Usage manifests of a directory keyed by (project, dependency); project is the dependent's G:A."""
    manifests: Dict[Tuple[str, LibraryId], UsageManifest] = {}
    for path in sorted(Path(directory).glob("*.json")):
        try:
            manifest = load_usage_manifest(path)
        except (SchemaError, OSError) as e:
            log.warning("usage_manifest_skipped", path=str(path), error=str(e))
            continue
        manifests[(manifest.project, manifest.dependency)] = manifest
    return manifests


# ============================================================
# Failure categories
# ============================================================


class FailureKind(str, Enum):
    NO_COMPATIBLE_PATCH = "NoCompatiblePatch"
    NO_SECURE_VERSION = "NoSecureVersion"
    INTERNAL_ERROR = "InternalError"


@dataclass(frozen=True)
class FailureContext:
    vuln: Vulnerability
    witness_path: Tuple[ReleaseId, ...]
    usage: Optional[UsageManifest] = None


@dataclass(frozen=True)
class FailureCategory:
    category: FailureKind
    detail: str
    suggestion: str
    keep_monitoring: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {
            "category": self.category.value,
            "detail": self.detail,
            "suggestion": self.suggestion,
            "keep_monitoring": self.keep_monitoring,
        }


def categorize_failure(result: RestoredRange, context: FailureContext) -> FailureCategory:
    """Turn a failed restoration into a report entry with a suggested manual action."""
    chain = " -> ".join(str(r) for r in context.witness_path)
    if result.outcome is Outcome.NO_COMPATIBLE_PATCH:
        apis = ", ".join(result.breaking_apis) or "none recorded"
        return FailureCategory(
            FailureKind.NO_COMPATIBLE_PATCH,
            result.detail,
            f"Upgrade {result.target} manually; breaking APIs: {apis}; call chain: {chain}",
        )
    if result.outcome is Outcome.NO_SECURE_VERSION:
        library = context.vuln.library
        reachable = (
            context.usage is not None
            and context.usage.dependency == library
            and bool(context.usage.used_apis)
        )
        if reachable:
            suggestion = f"Substitute {library}: its APIs are used and no secure version is available"
        else:
            suggestion = f"Exclude {library} from {result.target}; no used API reaches it"
        return FailureCategory(FailureKind.NO_SECURE_VERSION, result.detail, suggestion, keep_monitoring=True)
    return FailureCategory(FailureKind.INTERNAL_ERROR, result.detail, "Inspect the diagnostic detail and rerun")


# ============================================================
# Campaign
# ============================================================


@dataclass(frozen=True)
class RemainingPoint:
    date: date
    count: int
    epoch: int

    def to_dict(self) -> Dict[str, object]:
        return {"date": self.date.isoformat(), "count": self.count, "epoch": self.epoch}


@dataclass
class DepthSummary:
    depth: int
    dependents: int = 0
    restored: int = 0
    failures: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "depth": self.depth,
            "dependents": self.dependents,
            "restored": self.restored,
            "failures": dict(sorted(self.failures.items())),
        }


@dataclass(frozen=True)
class RestorationEntry:
    depth: int
    result: RestoredRange
    failure: Optional[FailureCategory] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "depth": self.depth,
            "dependent": str(self.result.dependent),
            "target": str(self.result.target),
            "v_s": str(self.result.v_s),
            "outcome": self.result.outcome.value,
            "range": self.result.range_text,
            "failure": self.failure.to_dict() if self.failure else None,
        }


@dataclass
class CampaignReport:
    vuln_id: str
    library: LibraryId
    per_depth: List[DepthSummary] = field(default_factory=list)
    remaining_libvers: List[RemainingPoint] = field(default_factory=list)
    restorations: List[RestorationEntry] = field(default_factory=list)
    iterations: int = 0
    final_epoch: int = 0

    def remaining_at(self, epoch: int) -> Dict[date, int]:
        return {p.date: p.count for p in self.remaining_libvers if p.epoch == epoch}

    def to_dict(self) -> Dict[str, object]:
        return {
            "vuln_id": self.vuln_id,
            "library": str(self.library),
            "per_depth": [d.to_dict() for d in self.per_depth],
            "remaining_libvers": [p.to_dict() for p in self.remaining_libvers],
            "restorations": [r.to_dict() for r in self.restorations],
            "iterations": self.iterations,
            "final_epoch": self.final_epoch,
        }


def _blocking_records(graph: DependencyGraph, vuln: Vulnerability, depth: int,
                      records: Sequence[AffectedRecord]) -> List[AffectedRecord]:
    affected = graph.affected_releases(vuln)
    if not any(r not in affected for r in graph.releases_of(vuln.library)):
        return []
    return sorted((r for r in records if r.depth == depth and r.vuln_id == vuln.id), key=lambda r: r.release)


def find_blocking_dependents(
    graph: DependencyGraph,
    vuln: Vulnerability,
    depth: int,
    records: Optional[Sequence[AffectedRecord]] = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> List[ReleaseId]:
    """
    Releases affected at exactly `depth` while a non-vulnerable release of the
    vulnerable library exists in the corpus.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if records is None:
        records = find_affected(graph, vuln, max_depth)
    return [r.release for r in _blocking_records(graph, vuln, depth, records)]


def _remaining_points(records: Sequence[AffectedRecord], dates: Sequence[date], epoch: int) -> List[RemainingPoint]:
    released = sorted(r.released_at for r in records if r.released_at is not None)
    points = []
    for day in dates:
        points.append(RemainingPoint(day, sum(1 for d in released if d <= day), epoch))
    return points


def _restore_one(graph: DependencyGraph, record: AffectedRecord, config: CampaignConfig) -> RestoredRange:
    hop = record.witness_path[1]
    return restore_range(
        graph,
        record.release,
        hop.library,
        hop.version,
        config.usage_for(record.release.library, hop.library),
        config.surfaces,
        config.validator,
        open_upper=config.open_upper,
        allow_holes=config.allow_holes,
        max_depth=config.max_depth,
    )


def _apply(graph: DependencyGraph, result: RestoredRange) -> Tuple[DependencyGraph, RestoredRange]:
    if not result.restored:
        return graph, result
    try:
        spec = parse_version_spec(result.range_text or "")
        return apply_range_update(graph, result.dependent, result.target, spec), result
    except (NoSuchEdge, ValueError) as e:
        failed = RestoredRange(result.dependent, result.target, result.v_s, Outcome.INTERNAL_ERROR,
                               per_version=result.per_version, detail=str(e))
        return graph, failed


def run_campaign(
    graph: DependencyGraph,
    vuln: Vulnerability,
    config: CampaignConfig,
) -> Tuple[CampaignReport, DependencyGraph]:
    """
    Sweep depths 1..max_depth, restoring and applying ranges for blocking dependents.

    Restorations of one depth run against the same frozen epoch unless
    config.eager is set, in which case each range is applied as soon as it
    is restored. ALSearch reruns once per depth on the updated graph.

    Returns:
        The campaign report and the final graph epoch
    """
    horizon = config.horizon or utc_today()
    dates = bucket_dates(vuln.published_at, horizon, config.bucket)
    records = find_affected(graph, vuln, config.max_depth, config.workers)
    report = CampaignReport(vuln.id, vuln.library)
    report.remaining_libvers.extend(_remaining_points(records, dates, graph.epoch))

    for depth in range(1, config.max_depth + 1):
        if not any(r.depth >= depth for r in records):
            break
        blocking = _blocking_records(graph, vuln, depth, records)
        summary = DepthSummary(depth, dependents=len(blocking))

        if config.eager:
            results = []
            for record in blocking:
                graph, result = _apply(graph, _restore_one(graph, record, config))
                results.append(result)
        else:
            frozen = graph
            if config.workers > 1 and len(blocking) > 1:
                with ThreadPoolExecutor(max_workers=config.workers) as pool:
                    results = list(pool.map(lambda r: _restore_one(frozen, r, config), blocking))
            else:
                results = [_restore_one(frozen, r, config) for r in blocking]
            applied = []
            for result in results:
                graph, result = _apply(graph, result)
                applied.append(result)
            results = applied

        for record, result in zip(blocking, results):
            report.iterations += 1
            if result.restored:
                summary.restored += 1
                report.restorations.append(RestorationEntry(depth, result))
                continue
            context = FailureContext(vuln, record.witness_path,
                                     config.usage_for(record.release.library, vuln.library))
            failure = categorize_failure(result, context)
            key = failure.category.value
            summary.failures[key] = summary.failures.get(key, 0) + 1
            report.restorations.append(RestorationEntry(depth, result, failure))

        report.per_depth.append(summary)
        if summary.restored:
            records = find_affected(graph, vuln, config.max_depth, config.workers)
            report.remaining_libvers.extend(_remaining_points(records, dates, graph.epoch))
        log.info("campaign_depth_complete", vuln=vuln.id, depth=depth, dependents=summary.dependents,
                 restored=summary.restored, remaining=len(records), epoch=graph.epoch)

    report.final_epoch = graph.epoch
    return report, graph


# ============================================================
# Reports
# ============================================================


def render_markdown(report: CampaignReport) -> str:
    lines = [
        f"# Remediation campaign for {report.vuln_id}",
        "",
        f"Vulnerable library: `{report.library}`",
        f"Iterations: {report.iterations}; final epoch: {report.final_epoch}",
        "",
        "## Per depth",
        "",
        "| depth | dependents | restored | failures |",
        "|---|---|---|---|",
    ]
    for summary in report.per_depth:
        failures = ", ".join(f"{k}: {v}" for k, v in sorted(summary.failures.items())) or "-"
        lines.append(f"| {summary.depth} | {summary.dependents} | {summary.restored} | {failures} |")

    lines += ["", "## Restorations", ""]
    if not report.restorations:
        lines.append("No blocking dependents.")
    for entry in report.restorations:
        result = entry.result
        head = f"- depth {entry.depth}: `{result.dependent}` on `{result.target}` (pinned {result.v_s})"
        if entry.failure is None:
            lines.append(f"{head}: restored `{result.range_text}`")
        else:
            lines.append(f"{head}: {entry.failure.category.value}")
            lines.append(f"  - {entry.failure.suggestion}")
            if entry.failure.detail:
                lines.append(f"  - detail: {entry.failure.detail}")
    return "\n".join(lines) + "\n"


def emit_report(report: CampaignReport, path: Union[str, Path], format: str = "json") -> None:
    """Write the report as JSON or Markdown; raises IoError on I/O failure."""
    if format == "json":
        write_text(path, dumps_json(report.to_dict()) + "\n")
    elif format in ("md", "markdown"):
        write_text(path, render_markdown(report))
    else:
        raise ValueError(f"unknown report format: {format}")


def remaining_frame(report: CampaignReport) -> pd.DataFrame:
    return pd.DataFrame([p.to_dict() for p in report.remaining_libvers], columns=["date", "count", "epoch"])


def write_remaining_csv(report: CampaignReport, path: Union[str, Path]) -> None:
    """Remaining lib-ver counts, one row per epoch; raises IoError on I/O failure."""
    write_text(path, remaining_frame(report).to_csv(index=False, lineterminator="\n"))
