"""
Command-line entry point.

    ranger ingest    --index index.jsonl --poms poms/ --vulns vulns.json --snapshot graph.rgsn
    ranger graph stats --snapshot graph.rgsn
    ranger resolve   --snapshot graph.rgsn --root G:A:V
    ranger alsearch  --snapshot graph.rgsn --vuln ID
    ranger metrics   --snapshot graph.rgsn [--vuln ID ...]
    ranger causes    --snapshot graph.rgsn [--vuln ID ...]
    ranger usage     --snapshot graph.rgsn
    ranger restore   --snapshot graph.rgsn --pom pom.xml --dep G:A --surfaces dir/
    ranger monitor   --snapshot graph.rgsn --vuln ID --out report.json --md report.md

Results go to stdout as text or sorted JSON; logs go to stderr.
Exit codes: 0 success, 1 domain or I/O error, 2 usage error.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import structlog
from dotenv import load_dotenv

from ranger.alsearch import find_affected
from ranger.analytics.causes import cause_proportions
from ranger.analytics.persistence import persistence_summary, pvul_series, write_heatmap_csv
from ranger.analytics.usage import dependency_management_stats, range_usage_stats
from ranger.common.diagnostics import Diagnostics
from ranger.common.utils import dumps_json, parse_utc_date, setup_logging, utc_today, write_json
from ranger.corpus import LibraryId, ReleaseId, Vulnerability, load_index, load_poms, load_vulnerabilities, parse_pom, read_pom_xml
from ranger.errors import ConfigError, RangerError, RewriteError, SchemaError
from ranger.graph import DependencyGraph, build_graph, load_snapshot, save_snapshot
from ranger.monitor import CampaignConfig, emit_report, load_usage_directory, run_campaign, write_remaining_csv
from ranger.resolver import count_vulnerabilities, render_tree, resolve_tree, tree_to_dict
from ranger.restore import (
    DirectorySurfaceProvider,
    ValidationHook,
    load_usage_manifest,
    restore_range,
    rewrite_pom_version,
)
from ranger.settings import RangerSettings
from ranger.version import SoftVersion, parse_version

log = structlog.get_logger(__name__)


# ============================================================
# Helpers
# ============================================================


def _emit(payload: Any) -> None:
    sys.stdout.write(dumps_json(payload) + "\n")


def _emit_text(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _horizon(settings: RangerSettings):
    return parse_utc_date(settings.horizon) if settings.horizon else utc_today()


def _ingest(settings: RangerSettings, diagnostics: Diagnostics) -> DependencyGraph:
    missing = [key for key in ("index", "poms", "vulns") if not getattr(settings, key)]
    if missing:
        raise ConfigError(f"ingestion needs: {', '.join('--' + m for m in missing)}")
    releases = load_index(settings.index, diagnostics)
    poms = load_poms(settings.poms, releases, diagnostics, workers=settings.parallelism)
    vulns = load_vulnerabilities(settings.vulns)
    return build_graph(releases, poms, vulns, diagnostics)


def _graph(settings: RangerSettings) -> DependencyGraph:
    if settings.snapshot:
        return load_snapshot(settings.snapshot)
    if settings.index and settings.poms and settings.vulns:
        return _ingest(settings, Diagnostics())
    raise ConfigError("no snapshot configured; pass --snapshot or run 'ranger ingest' first")


def _select_vulns(graph: DependencyGraph, ids: Optional[Sequence[str]]) -> List[Vulnerability]:
    if not ids:
        return list(graph.vulnerabilities)
    selected: List[Vulnerability] = []
    for vuln_id in ids:
        selected.extend(graph.vulnerability(vuln_id))
    return selected


def _single_vuln(graph: DependencyGraph, vuln_id: str, library: Optional[str]) -> Vulnerability:
    records = graph.vulnerability(vuln_id)
    if library:
        wanted = LibraryId.parse(library)
        records = [v for v in records if v.library == wanted]
        if not records:
            raise ConfigError(f"{vuln_id} does not affect {library}")
    if len(records) > 1:
        libraries = ", ".join(str(v.library) for v in records)
        raise ConfigError(f"{vuln_id} affects several libraries ({libraries}); pick one with --library")
    return records[0]


def _export(settings: RangerSettings, resources: Sequence[Any]) -> None:
    if not settings.duckdb:
        return
    # dlt is only imported when a warehouse export is requested
    from ranger.export.pipeline import load_to_duckdb

    load_to_duckdb(resources, settings.duckdb)


# ============================================================
# Commands
# ============================================================


def cmd_ingest(args: argparse.Namespace, settings: RangerSettings) -> int:
    diagnostics = Diagnostics()
    graph = _ingest(settings, diagnostics)
    if settings.snapshot:
        save_snapshot(graph, settings.snapshot)
    if args.diagnostics_out:
        write_json(args.diagnostics_out, diagnostics.to_list())
    if settings.duckdb:
        from ranger.export.pipeline import dependency_edges, releases, vulnerabilities

        _export(settings, [releases(graph), dependency_edges(graph), vulnerabilities(graph)])
    _emit({"stats": graph.stats(), "diagnostics": diagnostics.counts(), "snapshot": settings.snapshot})
    return 0


def cmd_graph_stats(args: argparse.Namespace, settings: RangerSettings) -> int:
    _emit(_graph(settings).stats())
    return 0


def cmd_resolve(args: argparse.Namespace, settings: RangerSettings) -> int:
    graph = _graph(settings)
    root = ReleaseId.parse(args.root)
    tree = resolve_tree(graph, root, settings.max_depth, apply_management=not args.no_management)
    count = count_vulnerabilities(graph, tree, settings.count_scopes)
    if args.json:
        payload = tree_to_dict(tree)
        payload["vulnerabilities"] = count.total
        _emit(payload)
    else:
        _emit_text(render_tree(tree))
        _emit_text(f"vulnerabilities: {count.total}")
    return 0


def cmd_alsearch(args: argparse.Namespace, settings: RangerSettings) -> int:
    graph = _graph(settings)
    output: Dict[str, Any] = {}
    all_records = []
    for vuln in _select_vulns(graph, [args.vuln]):
        records = find_affected(graph, vuln, settings.max_depth, settings.parallelism)
        all_records.extend(records)
        output[f"{vuln.id} {vuln.library}"] = [r.to_dict() for r in records]
    if settings.duckdb:
        from ranger.export.pipeline import affected_records

        _export(settings, [affected_records(all_records, graph.epoch)])
    _emit(output)
    return 0


def cmd_metrics(args: argparse.Namespace, settings: RangerSettings) -> int:
    graph = _graph(settings)
    horizon = _horizon(settings)
    vulns = _select_vulns(graph, args.vuln)
    summary = persistence_summary(
        graph,
        vulns,
        horizon=horizon,
        bucket=settings.bucket,
        mode=settings.halflife_mode,
        min_affected=settings.min_affected,
        max_depth=settings.max_depth,
        workers=settings.parallelism,
    )
    if args.heatmap_dir:
        directory = Path(args.heatmap_dir)
        directory.mkdir(parents=True, exist_ok=True)
        for vuln in vulns:
            series = pvul_series(graph, vuln, settings.bucket, horizon, max_depth=settings.max_depth)
            write_heatmap_csv(series, directory / f"{vuln.id}__{vuln.library.group}__{vuln.library.artifact}.csv")
    _emit(summary)
    return 0


def _load_overrides(path: Optional[str]) -> Optional[Dict[ReleaseId, Any]]:
    if not path:
        return None
    with open(path, encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as e:
            raise SchemaError(f"invalid overrides JSON: {e.msg}", e.lineno) from e
    if not isinstance(payload, dict):
        raise SchemaError("overrides must map G:A:V to a version")
    return {ReleaseId.parse(key): parse_version(str(value)) for key, value in payload.items()}


def cmd_causes(args: argparse.Namespace, settings: RangerSettings) -> int:
    graph = _graph(settings)
    vulns = _select_vulns(graph, args.vuln)
    _emit(cause_proportions(graph, vulns, _load_overrides(args.overrides), settings.max_depth))
    return 0


def cmd_usage(args: argparse.Namespace, settings: RangerSettings) -> int:
    graph = _graph(settings)
    vulns = _select_vulns(graph, args.vuln)
    _emit({
        "ranges": range_usage_stats(graph, vulns),
        "dependency_management": dependency_management_stats(graph, vulns, settings.max_depth),
    })
    return 0


def _validator(settings: RangerSettings) -> Optional[ValidationHook]:
    if not settings.validate_cmd:
        return None
    return ValidationHook(settings.validate_cmd, settings.validate_timeout)


def cmd_restore(args: argparse.Namespace, settings: RangerSettings) -> int:
    if not settings.surfaces:
        raise ConfigError("restore needs --surfaces")
    graph = _graph(settings)
    pom_bytes = Path(args.pom).read_bytes()
    raw = read_pom_xml(pom_bytes)
    if not (raw.group and raw.artifact and raw.version):
        raise SchemaError(f"{args.pom}: POM has no complete coordinates")
    library = LibraryId(raw.group, raw.artifact)
    version = parse_version(raw.version)
    dependent = graph.release(library, version) or ReleaseId(library, version)
    target = LibraryId.parse(args.dep)

    document = parse_pom(pom_bytes, dependent)
    declaration = next((d for d in document.dependencies if d.target == target), None)
    if declaration is None or not isinstance(declaration.spec, SoftVersion):
        raise RewriteError(f"{dependent} has no soft-pinned dependency on {target}")

    usage = load_usage_manifest(args.usage) if args.usage else None
    result = restore_range(
        graph,
        dependent,
        target,
        declaration.spec.preferred,
        usage,
        DirectorySurfaceProvider(settings.surfaces),
        _validator(settings),
        open_upper=settings.open_upper,
        allow_holes=settings.allow_holes,
        workers=settings.parallelism,
        max_depth=settings.max_depth,
        scopes=settings.count_scopes,
    )
    if args.rewrite:
        if not result.restored:
            _emit(result.to_dict())
            log.error("rewrite_skipped", outcome=result.outcome.value)
            return 1
        Path(args.rewrite).write_bytes(rewrite_pom_version(pom_bytes, target, result.range_text))
    _emit(result.to_dict())
    return 0


def cmd_monitor(args: argparse.Namespace, settings: RangerSettings) -> int:
    if not settings.surfaces:
        raise ConfigError("monitor needs --surfaces")
    graph = _graph(settings)
    vuln = _single_vuln(graph, args.vuln, args.library)
    config = CampaignConfig(
        surfaces=DirectorySurfaceProvider(settings.surfaces),
        usages=load_usage_directory(settings.usage_dir) if settings.usage_dir else {},
        validator=_validator(settings),
        open_upper=bool(settings.open_upper),
        allow_holes=bool(settings.allow_holes),
        eager=bool(args.eager),
        max_depth=settings.max_depth,
        bucket=settings.bucket,
        horizon=_horizon(settings),
        workers=settings.parallelism,
    )
    report, final_graph = run_campaign(graph, vuln, config)
    if args.out:
        emit_report(report, args.out, "json")
    if args.md:
        emit_report(report, args.md, "markdown")
    if args.remaining_csv:
        write_remaining_csv(report, args.remaining_csv)
    if args.snapshot_out:
        save_snapshot(final_graph, args.snapshot_out)
    if settings.duckdb:
        from ranger.export.pipeline import campaign_depths, remaining_libvers

        _export(settings, [campaign_depths(report), remaining_libvers(report)])
    _emit(report.to_dict())
    return 0


def cmd_warehouse(args: argparse.Namespace, settings: RangerSettings) -> int:
    if not settings.duckdb:
        raise ConfigError("warehouse status needs --duckdb")
    from ranger.export.pipeline import warehouse_status

    _emit(warehouse_status(settings.duckdb))
    return 0


# ============================================================
# Parser
# ============================================================


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="ranger.toml file (default: ./ranger.toml when present)")
    common.add_argument("--snapshot", help="graph snapshot file")
    common.add_argument("--index", help="repository index (JSON lines)")
    common.add_argument("--poms", help="directory of <G>__<A>__<V>.xml POM files")
    common.add_argument("--vulns", help="vulnerability JSON file")
    common.add_argument("--max-depth", type=int, dest="max_depth", help="deepest dependency level (default 10)")
    common.add_argument("--count-scopes", dest="count_scopes", help="scopes counted as vulnerable (default compile,runtime)")
    common.add_argument("--parallelism", type=int, help="worker threads (default 4)")
    common.add_argument("--duckdb", help="DuckDB file to export results to")
    common.add_argument("--log-level", dest="log_level", help="log level (default INFO)")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument("--json-errors", dest="json_errors", action="store_true",
                        help="report errors as JSON on stderr")
    return common


def _vuln_options() -> argparse.ArgumentParser:
    selection = argparse.ArgumentParser(add_help=False)
    selection.add_argument("--vuln", action="append", help="vulnerability id (repeatable; default all)")
    return selection


def _analysis_options() -> argparse.ArgumentParser:
    analysis = argparse.ArgumentParser(add_help=False)
    analysis.add_argument("--bucket", choices=["day", "month"], help="time bucket (default month)")
    analysis.add_argument("--horizon", help="data collection date, YYYY-MM-DD (default today, UTC)")
    analysis.add_argument("--halflife-mode", dest="halflife_mode", choices=["absolute", "relative"],
                          help="half-life threshold (default absolute)")
    analysis.add_argument("--min-affected", dest="min_affected", type=int,
                          help="skip vulnerabilities with fewer affected lib-vers")
    return analysis


def _restore_options() -> argparse.ArgumentParser:
    restore = argparse.ArgumentParser(add_help=False)
    restore.add_argument("--surfaces", help="directory of API surface JSON files")
    restore.add_argument("--validate-cmd", dest="validate_cmd", help="test command with a {version} placeholder")
    restore.add_argument("--validate-timeout", dest="validate_timeout", type=float,
                         help="validation timeout in seconds (default 300)")
    restore.add_argument("--open-upper", dest="open_upper", action="store_true", default=None,
                         help="leave the upper bound open when the newest version is selected")
    restore.add_argument("--allow-holes", dest="allow_holes", action="store_true", default=None,
                         help="keep scanning past incompatible versions")
    return restore


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    analysis = _analysis_options()
    selection = _vuln_options()
    restore_opts = _restore_options()

    parser = argparse.ArgumentParser(
        prog="ranger",
        description="Vulnerability persistence analysis and version range restoration for Maven corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND", title="commands")

    p_ingest = sub.add_parser("ingest", parents=[common], help="Parse the corpus and write a graph snapshot")
    p_ingest.add_argument("--diagnostics-out", dest="diagnostics_out", help="write all diagnostics as JSON")
    p_ingest.set_defaults(func=cmd_ingest)

    p_graph = sub.add_parser("graph", help="Graph inspection")
    graph_sub = p_graph.add_subparsers(dest="graph_command", required=True, metavar="ACTION")
    p_stats = graph_sub.add_parser("stats", parents=[common], help="Counts of libraries, releases, edges, vulns")
    p_stats.set_defaults(func=cmd_graph_stats)

    p_resolve = sub.add_parser("resolve", parents=[common], help="Resolve the dependency tree of a release")
    p_resolve.add_argument("--root", required=True, help="release coordinates G:A:V")
    p_resolve.add_argument("--json", action="store_true", help="JSON instead of the indented tree")
    p_resolve.add_argument("--no-management", dest="no_management", action="store_true",
                           help="ignore the root's dependencyManagement")
    p_resolve.set_defaults(func=cmd_resolve)

    p_alsearch = sub.add_parser("alsearch", parents=[common], help="Affected releases of a vulnerability")
    p_alsearch.add_argument("--vuln", required=True, help="vulnerability id")
    p_alsearch.set_defaults(func=cmd_alsearch)

    p_metrics = sub.add_parser("metrics", parents=[common, selection, analysis], help="Persistence metrics")
    p_metrics.add_argument("--heatmap-dir", dest="heatmap_dir", help="write depth x bucket P_vul CSV per vulnerability")
    p_metrics.set_defaults(func=cmd_metrics)

    p_causes = sub.add_parser("causes", parents=[common, selection], help="Cause proportions of blocked patches")
    p_causes.add_argument("--overrides", help="JSON map of G:A:V to end-user pinned versions")
    p_causes.set_defaults(func=cmd_causes)

    p_usage = sub.add_parser("usage", parents=[common, selection], help="Range and dependencyManagement usage")
    p_usage.set_defaults(func=cmd_usage)

    p_restore = sub.add_parser("restore", parents=[common, restore_opts], help="Restore a version range")
    p_restore.add_argument("--pom", required=True, help="dependent POM file")
    p_restore.add_argument("--dep", required=True, help="pinned dependency G:A")
    p_restore.add_argument("--usage", help="usage manifest JSON")
    p_restore.add_argument("--rewrite", help="write the POM with the restored range to this file")
    p_restore.set_defaults(func=cmd_restore)

    p_monitor = sub.add_parser("monitor", parents=[common, restore_opts, analysis], help="Run a remediation campaign")
    p_monitor.add_argument("--vuln", required=True, help="vulnerability id")
    p_monitor.add_argument("--library", help="vulnerable library G:A when the id covers several")
    p_monitor.add_argument("--usage-dir", dest="usage_dir", help="directory of usage manifests")
    p_monitor.add_argument("--eager", action="store_true", help="apply each range as soon as it is restored")
    p_monitor.add_argument("--out", help="JSON report file")
    p_monitor.add_argument("--md", help="Markdown report file")
    p_monitor.add_argument("--remaining-csv", dest="remaining_csv", help="remaining lib-vers CSV (date, count, epoch)")
    p_monitor.add_argument("--snapshot-out", dest="snapshot_out", help="save the final graph epoch")
    p_monitor.set_defaults(func=cmd_monitor)

    p_warehouse = sub.add_parser("warehouse", parents=[common], help="Row counts of the DuckDB export")
    p_warehouse.set_defaults(func=cmd_warehouse)

    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    values = vars(args)
    return {key: values[key] for key in RangerSettings.keys() if key in values}


def _report_error(error: BaseException, json_errors: bool) -> None:
    message = error.args[0] if isinstance(error, KeyError) and error.args else str(error)
    if json_errors:
        sys.stderr.write(json.dumps({"error": type(error).__name__, "message": str(message)}, sort_keys=True) + "\n")
    else:
        sys.stderr.write(f"Error: {message}\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return the process exit code."""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    json_errors = bool(getattr(args, "json_errors", False))
    try:
        settings = RangerSettings.load(getattr(args, "config", None), _overrides(args))
        setup_logging("DEBUG" if getattr(args, "verbose", False) else settings.log_level)
        return int(args.func(args, settings))
    except (RangerError, OSError) as e:
        _report_error(e, json_errors)
        return 1


if __name__ == "__main__":
    sys.exit(main())
