"""
Vulnerability persistence over time.

A downstream library is classified from its latest release at a date:
Affected while that release resolves a vulnerable version, Patched once a
later release stops doing so, Removed when the latest release no longer
reaches the vulnerable library at all. P_vul and P_patch are the shares of
Affected and Patched libraries among all libraries classified at that date.
"""
from __future__ import annotations

import bisect
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import AbstractSet, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd
import structlog

from ranger.alsearch import AffectedRecord, find_affected
from ranger.common.utils import utc_today, write_text
from ranger.corpus import LibraryId, ReleaseId, Vulnerability
from ranger.errors import EmptySeries, NoReleaseBefore, NotDownstream
from ranger.graph import DependencyGraph
from ranger.resolver import DEFAULT_MAX_DEPTH, resolve_tree

log = structlog.get_logger(__name__)

BUCKET_FREQUENCIES = {"day": "D", "month": "MS"}
PERSISTENCE_THRESHOLD = 0.5


class Status(str, Enum):
    AFFECTED = "Affected"
    PATCHED = "Patched"
    REMOVED = "Removed"


@dataclass(frozen=True)
class LibraryStatus:
    library: LibraryId
    status: Status
    as_of: date
    latest: ReleaseId

    def to_dict(self) -> Dict[str, str]:
        return {
            "library": str(self.library),
            "status": self.status.value,
            "as_of": self.as_of.isoformat(),
            "latest": str(self.latest),
        }


@dataclass(frozen=True)
class PvulPoint:
    date: date
    p_vul: float
    p_patch: float
    affected: int
    patched: int
    removed: int
    denominator: int
    new_affected_releases: int = 0

    def to_dict(self) -> Dict[str, object]:
        return {
            "date": self.date.isoformat(),
            "p_vul": self.p_vul,
            "p_patch": self.p_patch,
            "affected": self.affected,
            "patched": self.patched,
            "removed": self.removed,
            "denominator": self.denominator,
            "new_affected_releases": self.new_affected_releases,
        }


@dataclass(frozen=True)
class PvulSeries:
    vuln_id: str
    bucket: str
    published_at: date
    horizon: date
    points: Tuple[PvulPoint, ...]
    by_depth: Mapping[int, Tuple[PvulPoint, ...]] = field(default_factory=dict)

    @property
    def exposure_days(self) -> int:
        return max(1, (self.horizon - self.published_at).days)

    def to_dict(self) -> Dict[str, object]:
        return {
            "vuln_id": self.vuln_id,
            "bucket": self.bucket,
            "published_at": self.published_at.isoformat(),
            "horizon": self.horizon.isoformat(),
            "points": [p.to_dict() for p in self.points],
            "by_depth": {str(d): [p.to_dict() for p in pts] for d, pts in sorted(self.by_depth.items())},
        }


@dataclass(frozen=True)
class LifeMetric:
    """Day count from publication; days is None when the condition is never reached."""
    days: Optional[int]
    normalized: float

    @property
    def reached(self) -> bool:
        return self.days is not None

    def to_dict(self) -> Dict[str, object]:
        return {"days": self.days if self.days is not None else "not_reached", "normalized": self.normalized}


# ============================================================
# Library status
# ============================================================


class _Timeline:
    """Dated releases of one library ordered by (released_at, version)."""

    def __init__(self, releases: Iterable[ReleaseId], affected: AbstractSet[ReleaseId]):
        dated = sorted((r for r in releases if r.released_at is not None), key=lambda r: (r.released_at, r.version))
        self.releases = dated
        self.dates = [r.released_at for r in dated]
        first = next((i for i, r in enumerate(dated) if r in affected), None)
        self.first_affected = first

    def latest_index(self, as_of: date) -> int:
        return bisect.bisect_right(self.dates, as_of) - 1


def _status_from_timeline(
    graph: DependencyGraph,
    timeline: _Timeline,
    library: LibraryId,
    vuln: Vulnerability,
    as_of: date,
    affected: AbstractSet[ReleaseId],
    max_depth: int,
) -> LibraryStatus:
    index = timeline.latest_index(as_of)
    if index < 0:
        raise NoReleaseBefore(f"{library} has no release on or before {as_of}")
    latest = timeline.releases[index]
    if latest in affected:
        return LibraryStatus(library, Status.AFFECTED, as_of, latest)
    if timeline.first_affected is None or timeline.first_affected > index:
        raise NotDownstream(f"{library} had no affected release on or before {as_of}")
    node = resolve_tree(graph, latest, max_depth).node_for(vuln.library)
    status = Status.REMOVED if node is None else Status.PATCHED
    return LibraryStatus(library, status, as_of, latest)


def _affected_set(
    graph: DependencyGraph,
    vuln: Vulnerability,
    records: Optional[Sequence[AffectedRecord]],
    max_depth: int,
) -> Tuple[List[AffectedRecord], frozenset]:
    if records is None:
        records = find_affected(graph, vuln, max_depth)
    records = list(records)
    return records, frozenset(r.release for r in records)


def classify_library_status(
    graph: DependencyGraph,
    library: LibraryId,
    vuln: Vulnerability,
    as_of: date,
    records: Optional[Sequence[AffectedRecord]] = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> LibraryStatus:
    """
    Status of a downstream library from its latest release dated on or before as_of.

    Ties on release date are broken by version order.

    Raises:
        NoReleaseBefore: no dated release on or before as_of
        NotDownstream: no affected release on or before as_of
    """
    _, affected = _affected_set(graph, vuln, records, max_depth)
    timeline = _Timeline(graph.releases_of(library), affected)
    return _status_from_timeline(graph, timeline, library, vuln, as_of, affected, max_depth)


# ============================================================
# P_vul series
# ============================================================


def bucket_dates(start: date, horizon: date, bucket: str) -> List[date]:
    """Evaluation dates: start, every bucket boundary after it, and the horizon."""
    if bucket not in BUCKET_FREQUENCIES:
        raise ValueError(f"unknown bucket: {bucket}")
    if horizon < start:
        return [start]
    boundaries = pd.date_range(start=start, end=horizon, freq=BUCKET_FREQUENCIES[bucket])
    dates = [start] + [ts.date() for ts in boundaries if ts.date() > start]
    if dates[-1] != horizon:
        dates.append(horizon)
    return dates


def _aggregate(
    statuses: Mapping[LibraryId, Status],
    libraries: Iterable[LibraryId],
    day: date,
    new_releases: int,
) -> Optional[PvulPoint]:
    counts = {status: 0 for status in Status}
    for library in libraries:
        status = statuses.get(library)
        if status is not None:
            counts[status] += 1
    denominator = sum(counts.values())
    if denominator == 0:
        return None
    return PvulPoint(
        date=day,
        p_vul=counts[Status.AFFECTED] / denominator,
        p_patch=counts[Status.PATCHED] / denominator,
        affected=counts[Status.AFFECTED],
        patched=counts[Status.PATCHED],
        removed=counts[Status.REMOVED],
        denominator=denominator,
        new_affected_releases=new_releases,
    )


def _new_releases(libraries: AbstractSet[LibraryId], records: Sequence[AffectedRecord],
                  previous: Optional[date], day: date) -> int:
    return sum(
        1 for r in records
        if r.release.library in libraries
        and r.released_at is not None
        and r.released_at <= day
        and (previous is None or r.released_at > previous)
    )


def pvul_series(
    graph: DependencyGraph,
    vuln: Vulnerability,
    bucket: str = "month",
    horizon: Optional[date] = None,
    records: Optional[Sequence[AffectedRecord]] = None,
    start: Optional[date] = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> PvulSeries:
    """
    P_vul and P_patch per bucket from the publication date (or start) to the horizon.

    The denominator at each date is every library classified Affected, Patched
    or Removed by then; dates with no classified library are omitted.
    """
    horizon = horizon or utc_today()
    start = start or vuln.published_at
    records, affected = _affected_set(graph, vuln, records, max_depth)

    min_depth: Dict[LibraryId, int] = {}
    for record in records:
        library = record.release.library
        min_depth[library] = min(record.depth, min_depth.get(library, record.depth))
    libraries = sorted(min_depth)
    timelines = {library: _Timeline(graph.releases_of(library), affected) for library in libraries}
    by_depth_libraries: Dict[int, List[LibraryId]] = {}
    for library in libraries:
        by_depth_libraries.setdefault(min_depth[library], []).append(library)

    dates = bucket_dates(start, horizon, bucket)
    points: List[PvulPoint] = []
    depth_points: Dict[int, List[PvulPoint]] = {depth: [] for depth in by_depth_libraries}
    previous: Optional[date] = None
    for day in dates:
        statuses: Dict[LibraryId, Status] = {}
        for library in libraries:
            try:
                statuses[library] = _status_from_timeline(
                    graph, timelines[library], library, vuln, day, affected, max_depth
                ).status
            except (NoReleaseBefore, NotDownstream):
                continue
        point = _aggregate(statuses, libraries, day, _new_releases(set(libraries), records, previous, day))
        if point is not None:
            points.append(point)
        for depth, members in by_depth_libraries.items():
            fresh = _new_releases(set(members), records, previous, day)
            depth_point = _aggregate(statuses, members, day, fresh)
            if depth_point is not None:
                depth_points[depth].append(depth_point)
        previous = day

    series = PvulSeries(
        vuln_id=vuln.id,
        bucket=bucket,
        published_at=vuln.published_at,
        horizon=horizon,
        points=tuple(points),
        by_depth={depth: tuple(pts) for depth, pts in sorted(depth_points.items())},
    )
    log.debug("pvul_series_built", vuln=vuln.id, libraries=len(libraries), points=len(points))
    return series


# ============================================================
# Series metrics
# ============================================================


def _require_points(series: PvulSeries) -> None:
    if not series.points:
        raise EmptySeries(f"series for {series.vuln_id} has no points")


def half_life(series: PvulSeries, mode: str = "absolute") -> LifeMetric:
    """
    Days from publication to the first point with P_vul at or below the threshold.

    The threshold is 0.5 in absolute mode and half of the first P_vul in
    relative mode. Crossings before publication give negative days; a series
    that never crosses is not_reached with normalized value 1.0.
    """
    _require_points(series)
    if mode == "absolute":
        threshold = PERSISTENCE_THRESHOLD
    elif mode == "relative":
        threshold = PERSISTENCE_THRESHOLD * series.points[0].p_vul
    else:
        raise ValueError(f"unknown half-life mode: {mode}")

    for point in series.points:
        if point.p_vul <= threshold:
            days = (point.date - series.published_at).days
            return LifeMetric(days, min(1.0, days / series.exposure_days))
    return LifeMetric(None, 1.0)


def full_life(series: PvulSeries) -> LifeMetric:
    """Days until P_vul reaches zero and stays there through the last point."""
    _require_points(series)
    if series.points[-1].p_vul > 0:
        return LifeMetric(None, 1.0)
    index = len(series.points) - 1
    while index > 0 and series.points[index - 1].p_vul == 0:
        index -= 1
    days = (series.points[index].date - series.published_at).days
    return LifeMetric(days, min(1.0, days / series.exposure_days))


def new_release_span(
    graph: DependencyGraph,
    vuln: Vulnerability,
    records: Optional[Sequence[AffectedRecord]] = None,
    horizon: Optional[date] = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> LifeMetric:
    """Days from publication to the last release of a newly affected lib-ver, clamped at 0."""
    horizon = horizon or utc_today()
    records, _ = _affected_set(graph, vuln, records, max_depth)
    dated = [r.released_at for r in records if r.released_at is not None]
    if not dated:
        return LifeMetric(0, 0.0)
    days = max(0, (max(dated) - vuln.published_at).days)
    exposure = max(1, (horizon - vuln.published_at).days)
    return LifeMetric(days, min(1.0, days / exposure))


# ============================================================
# Frames and reports
# ============================================================


def series_frame(series: PvulSeries) -> pd.DataFrame:
    """Flat series, one row per evaluation date."""
    columns = ["date", "p_vul", "p_patch", "affected", "patched", "removed", "denominator", "new_affected_releases"]
    return pd.DataFrame([p.to_dict() for p in series.points], columns=columns)


def heatmap_frame(series: PvulSeries) -> pd.DataFrame:
    """P_vul matrix with one row per minimal depth and one column per bucket date."""
    rows = [
        {"depth": depth, "date": point.date.isoformat(), "p_vul": point.p_vul}
        for depth, points in series.by_depth.items()
        for point in points
    ]
    if not rows:
        return pd.DataFrame()
    frame = pd.DataFrame(rows).pivot(index="depth", columns="date", values="p_vul")
    return frame.sort_index().sort_index(axis=1)


def write_heatmap_csv(series: PvulSeries, path: Union[str, Path]) -> None:
    write_text(path, heatmap_frame(series).to_csv(lineterminator="\n"))


def library_rollup(records: Iterable[AffectedRecord]) -> pd.DataFrame:
    """Per library: affected version count, latest affected version and minimal depth."""
    grouped: Dict[LibraryId, List[AffectedRecord]] = {}
    for record in records:
        grouped.setdefault(record.release.library, []).append(record)
    rows = [
        {
            "library": str(library),
            "affected_versions": len(items),
            "latest_affected": str(max(r.release.version for r in items)),
            "min_depth": min(r.depth for r in items),
        }
        for library, items in sorted(grouped.items())
    ]
    return pd.DataFrame(rows, columns=["library", "affected_versions", "latest_affected", "min_depth"])


def _vuln_summary(
    graph: DependencyGraph,
    vuln: Vulnerability,
    horizon: date,
    bucket: str,
    mode: str,
    max_depth: int,
) -> Dict[str, object]:
    records = find_affected(graph, vuln, max_depth)
    series = pvul_series(graph, vuln, bucket, horizon, records, max_depth=max_depth)
    summary: Dict[str, object] = {
        "vuln_id": vuln.id,
        "library": str(vuln.library),
        "published_at": vuln.published_at.isoformat(),
        "affected_libvers": len(records),
        "libraries": len({r.release.library for r in records}),
        "new_release_span": new_release_span(graph, vuln, records, horizon).to_dict(),
    }
    if series.points:
        summary["half_life"] = half_life(series, mode).to_dict()
        summary["full_life"] = full_life(series).to_dict()
        summary["initial_p_vul"] = series.points[0].p_vul
        summary["final_p_vul"] = series.points[-1].p_vul
    else:
        summary["half_life"] = None
        summary["full_life"] = None
        summary["initial_p_vul"] = None
        summary["final_p_vul"] = None
    return summary


def persistence_summary(
    graph: DependencyGraph,
    vulns: Iterable[Vulnerability],
    horizon: Optional[date] = None,
    bucket: str = "month",
    mode: str = "absolute",
    min_affected: int = 0,
    max_depth: int = DEFAULT_MAX_DEPTH,
    workers: int = 1,
) -> Dict[str, object]:
    """
    Persistence metrics for every vulnerability plus ecosystem-level shares.

    Vulnerabilities with fewer than min_affected affected lib-vers are skipped.
    """
    horizon = horizon or utc_today()
    vulns = list(vulns)
    if workers > 1 and len(vulns) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(lambda v: _vuln_summary(graph, v, horizon, bucket, mode, max_depth), vulns))
    else:
        summaries = [_vuln_summary(graph, v, horizon, bucket, mode, max_depth) for v in vulns]

    included = [s for s in summaries if s["affected_libvers"] >= min_affected and s["initial_p_vul"] is not None]
    skipped = len(summaries) - len(included)
    initial_above = sum(1 for s in included if s["initial_p_vul"] > PERSISTENCE_THRESHOLD)
    final_above = sum(1 for s in included if s["final_p_vul"] > PERSISTENCE_THRESHOLD)
    total = len(included)

    log.info("persistence_summary_complete", vulnerabilities=total, skipped=skipped, horizon=horizon.isoformat())
    return {
        "horizon": horizon.isoformat(),
        "bucket": bucket,
        "halflife_mode": mode,
        "vulnerabilities": included,
        "skipped": skipped,
        "share_initial_above_half": initial_above / total if total else 0.0,
        "share_persisting_at_horizon": final_above / total if total else 0.0,
    }
