"""
Persistence, cause and countermeasure analytics over ALSearch results.
"""
from ranger.analytics.causes import Cause, CauseLabel, Role, cause_proportions, classify_cause
from ranger.analytics.persistence import (
    LibraryStatus,
    LifeMetric,
    PvulPoint,
    PvulSeries,
    Status,
    classify_library_status,
    full_life,
    half_life,
    new_release_span,
    persistence_summary,
    pvul_series,
)
from ranger.analytics.usage import dependency_management_stats, range_usage_stats

__all__ = [
    "Cause",
    "CauseLabel",
    "LibraryStatus",
    "LifeMetric",
    "PvulPoint",
    "PvulSeries",
    "Role",
    "Status",
    "cause_proportions",
    "classify_cause",
    "classify_library_status",
    "dependency_management_stats",
    "full_life",
    "half_life",
    "new_release_span",
    "persistence_summary",
    "pvul_series",
    "range_usage_stats",
]
