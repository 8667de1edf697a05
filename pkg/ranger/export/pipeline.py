"""
dlt resources for releases, edges, vulnerabilities and analysis outputs,
loaded into a local DuckDB database for SQL exploration.
"""
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Union

import dlt
import duckdb
import structlog

from ranger.alsearch import AffectedRecord
from ranger.errors import IoError
from ranger.graph import DependencyGraph
from ranger.monitor import CampaignReport

log = structlog.get_logger(__name__)

DEFAULT_DATASET = "ranger_raw"


def _ingested_at() -> str:
    return datetime.now(timezone.utc).isoformat()


@dlt.resource(name="releases", write_disposition="merge", primary_key=("group_id", "artifact_id", "version"))
def releases(graph: DependencyGraph) -> Iterator[Dict[str, Any]]:
    """One row per indexed release."""
    stamp = _ingested_at()
    for release in graph.releases:
        yield {
            "group_id": release.library.group,
            "artifact_id": release.library.artifact,
            "version": str(release.version),
            "released_at": release.released_at.isoformat() if release.released_at else None,
            "vulnerability_count": len(graph.vulnerabilities_of(release)),
            "ingested_at": stamp,
        }


@dlt.resource(name="dependency_edges", write_disposition="merge", primary_key=("dependent", "position"))
def dependency_edges(graph: DependencyGraph) -> Iterator[Dict[str, Any]]:
    """Declared dependencies in document order, keyed by dependent release and position."""
    stamp = _ingested_at()
    for release, declarations in zip(graph.releases, graph.edges):
        for position, decl in enumerate(declarations):
            yield {
                "dependent": str(release),
                "position": position,
                "target": str(decl.target),
                "spec": str(decl.spec),
                "scope": decl.scope.value,
                "optional": decl.optional,
                "managed": decl.managed,
                "exclusions": ",".join(sorted(str(e) for e in decl.exclusions)),
                "epoch": graph.epoch,
                "ingested_at": stamp,
            }


@dlt.resource(name="vulnerabilities", write_disposition="merge", primary_key=("vuln_id", "library"))
def vulnerabilities(graph: DependencyGraph) -> Iterator[Dict[str, Any]]:
    stamp = _ingested_at()
    for vuln in graph.vulnerabilities:
        yield {
            "vuln_id": vuln.id,
            "library": str(vuln.library),
            "affected": str(vuln.affected),
            "published_at": vuln.published_at.isoformat(),
            "severity": vuln.severity,
            "affected_releases": len(graph.affected_releases(vuln)),
            "ingested_at": stamp,
        }


@dlt.resource(name="affected_records", write_disposition="merge", primary_key=("vuln_id", "release", "epoch"))
def affected_records(records: Iterable[AffectedRecord], epoch: int = 0) -> Iterator[Dict[str, Any]]:
    """Affected Version vertices with publishing date and depth."""
    stamp = _ingested_at()
    for record in records:
        row = record.to_dict()
        row["witness_path"] = " > ".join(row["witness_path"])
        row["epoch"] = epoch
        row["ingested_at"] = stamp
        yield row


@dlt.resource(name="campaign_depths", write_disposition="merge", primary_key=("vuln_id", "depth"))
def campaign_depths(report: CampaignReport) -> Iterator[Dict[str, Any]]:
    stamp = _ingested_at()
    for summary in report.per_depth:
        yield {
            "vuln_id": report.vuln_id,
            "depth": summary.depth,
            "dependents": summary.dependents,
            "restored": summary.restored,
            "failures": sum(summary.failures.values()),
            "ingested_at": stamp,
        }


@dlt.resource(name="remaining_libvers", write_disposition="merge", primary_key=("vuln_id", "date", "epoch"))
def remaining_libvers(report: CampaignReport) -> Iterator[Dict[str, Any]]:
    stamp = _ingested_at()
    for point in report.remaining_libvers:
        row = point.to_dict()
        row["vuln_id"] = report.vuln_id
        row["ingested_at"] = stamp
        yield row


def load_to_duckdb(
    resources: Sequence[Any],
    database: Union[str, Path],
    dataset_name: str = DEFAULT_DATASET,
    pipeline_name: str = "ranger",
    pipelines_dir: Optional[str] = None,
):
    """
    Run the given dlt resources into a DuckDB file.

    Returns:
        dlt LoadInfo of the run
    """
    pipeline = dlt.pipeline(
        pipeline_name=pipeline_name,
        destination=dlt.destinations.duckdb(str(database)),
        dataset_name=dataset_name,
        pipelines_dir=pipelines_dir,
    )
    info = pipeline.run(list(resources))
    log.info("warehouse_loaded", database=str(database), dataset=dataset_name, resources=len(resources))
    return info


def warehouse_status(database: Union[str, Path], dataset_name: str = DEFAULT_DATASET) -> Dict[str, int]:
    """Row counts of the loaded tables, dlt bookkeeping tables excluded."""
    if not Path(database).exists():
        raise IoError(f"database not found: {database}")
    conn = duckdb.connect(str(database), read_only=True)
    try:
        tables: List[str] = [
            row[0]
            for row in conn.execute(
                "SELECT table_name FROM information_schema.tables WHERE table_schema = ? ORDER BY table_name",
                [dataset_name],
            ).fetchall()
            if not row[0].startswith("_dlt")
        ]
        return {
            table: conn.execute(f'SELECT COUNT(*) FROM "{dataset_name}"."{table}"').fetchone()[0]
            for table in tables
        }
    finally:
        conn.close()
