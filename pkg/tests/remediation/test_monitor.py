"""
Tests for the depth-by-depth remediation campaign and its reports.
"""
import json
import random
from datetime import date, timedelta

import pytest

from ranger.alsearch import find_affected
from ranger.errors import IoError, SnapshotError
from ranger.monitor import (
    CampaignConfig,
    FailureContext,
    FailureKind,
    categorize_failure,
    emit_report,
    find_blocking_dependents,
    load_usage_directory,
    remaining_frame,
    render_markdown,
    run_campaign,
    write_remaining_csv,
)
from ranger.restore import ApiDescriptor, ApiSurface, Outcome, RestoredRange, StaticSurfaceProvider, UsageManifest
from ranger.version import parse_version
from tests.builders import CorpusBuilder, chain_corpus, ga, gav, simulated_affected

HORIZON = date(2022, 1, 1)


def surfaces(*specs) -> StaticSurfaceProvider:
    """specs are (coordinates, signature hash of the single api `x`)."""
    return StaticSurfaceProvider(
        ApiSurface(gav(coordinates), {"x": ApiDescriptor(signature)}) for coordinates, signature in specs
    )


def config(provider, **kwargs) -> CampaignConfig:
    return CampaignConfig(surfaces=provider, horizon=HORIZON, **kwargs)


COMPATIBLE_FIX = surfaces(("g:vuln:1.0", "h"), ("g:vuln:1.1", "h"))
BREAKING_FIX = surfaces(("g:vuln:1.0", "h"), ("g:vuln:1.1", "h2"), ("g:c1:1", "h"), ("g:c2:1", "h"))


@pytest.fixture
def upgradable_graph():
    """c1:1 pins the vulnerable g:vuln:1.0, c1:2 moved to the fix, c2:1 still pins c1:1."""
    return (
        CorpusBuilder()
        .releases("g:vuln", [("1.0", "2018-01-01"), ("1.1", "2019-01-01")])
        .releases("g:c1", [("1", "2018-06-01"), ("2", "2019-06-01")])
        .release("g:c2:1", "2020-01-01")
        .depends("g:c1:1", "g:vuln", "1.0")
        .depends("g:c1:2", "g:vuln", "1.1")
        .depends("g:c2:1", "g:c1", "1")
        .vulnerability("CVE-U", "g:vuln", "[1.0,1.1)", "2018-03-01")
        .build()
    )


def api_surface(coordinates: str, **signatures) -> ApiSurface:
    return ApiSurface(gav(coordinates), {name: ApiDescriptor(signature) for name, signature in signatures.items()})


@pytest.fixture
def fan_out():
    """
    Six First Depts g:f0..g:f5 pin g:vuln:1.0, each with three depth-2 and six
    depth-3 dependents. g:vuln:1.1 only breaks API `y`, which g:f4 and g:f5
    use, so their pins cannot be restored at depth 1.
    """
    builder = CorpusBuilder().releases("g:vuln", [("1.0", "2018-01-01"), ("1.1", "2019-01-01")])
    provider = StaticSurfaceProvider([api_surface("g:vuln:1.0", x="h", y="h"), api_surface("g:vuln:1.1", x="h", y="h2")])
    usages = {}
    for i in range(6):
        first = f"g:f{i}"
        builder.releases(first, [("1", "2019-02-01"), ("2", "2019-03-01")])
        builder.depends(f"{first}:1", "g:vuln", "1.0").depends(f"{first}:2", "g:vuln", "1.1")
        provider.add(api_surface(f"{first}:1", x="h"))
        provider.add(api_surface(f"{first}:2", x="h"))
        usages[(first, ga("g:vuln"))] = UsageManifest(first, ga("g:vuln"), frozenset({"x"} if i < 4 else {"y"}))
        for j in range(3):
            medium = f"{first}m{j}"
            builder.release(f"{medium}:1", "2019-04-01").depends(f"{medium}:1", first, "1")
            for k in range(2):
                user = f"{medium}u{k}"
                builder.release(f"{user}:1", "2019-05-01").depends(f"{user}:1", medium, "1")
    graph = builder.vulnerability("CVE-F", "g:vuln", "[1.0,1.1)", "2018-03-01").build()
    return graph, config(provider, usages=usages)


ECOSYSTEM_LAYERS = (20, 20, 20, 40)


@pytest.fixture(scope="module")
def ecosystem():
    """
    Four layers of five-version libraries over g:vuln, 502 releases in all.

    Every release pins one library of the layer below, so each release has a
    single path and its depth equals its layer. g:vuln:1.1 breaks the only
    API, so no depth-1 pin can be restored. In layer 1, every fourth library
    never moves off g:vuln:1.0 and the others fix it from version 3. Library
    0 of each upper layer pins library 0 of the layer below, which keeps a
    chain vulnerable down to depth 4. g:l2x1 pins the fixable g:l1x1:1.
    """
    rng = random.Random(20190101)
    builder = CorpusBuilder().releases("g:vuln", [("1.0", "2017-01-01"), ("1.1", "2017-06-01")])
    specs = [("g:vuln:1.0", "h"), ("g:vuln:1.1", "h2")]
    start = date(2018, 1, 1)
    below = ["g:vuln"]
    for layer, width in enumerate(ECOSYSTEM_LAYERS, start=1):
        names = [f"g:l{layer}x{i}" for i in range(width)]
        for i, name in enumerate(names):
            for n in range(1, 6):
                coordinates = f"{name}:{n}"
                builder.release(coordinates, start + timedelta(days=60 * layer + 30 * n + rng.randint(0, 20)))
                if layer < len(ECOSYSTEM_LAYERS):
                    specs.append((coordinates, "h"))
                if layer == 1:
                    target = "g:vuln"
                    version = "1.0" if i % 4 == 0 or n <= 2 else "1.1"
                elif i == 0:
                    target, version = below[0], str(rng.randint(1, 5))
                elif layer == 2 and i == 1:
                    target, version = "g:l1x1", "1"
                else:
                    target, version = rng.choice(below), str(rng.randint(1, 5))
                builder.depends(coordinates, target, version)
        below = names
    graph = builder.vulnerability("CVE-ECO", "g:vuln", "[1.0,1.1)", "2017-03-01").build()
    return graph, surfaces(*specs)


def horizon_counts(report) -> list:
    return [point.count for point in report.remaining_libvers if point.date == HORIZON]


class TestBlockingDependents:

    @pytest.mark.parametrize("depth,expected", [(1, ["g:c1:1"]), (2, ["g:c2:1"]), (4, [])])
    def test_by_depth(self, chain_graph, depth, expected):
        vuln = chain_graph.vulnerabilities[0]
        assert [str(r) for r in find_blocking_dependents(chain_graph, vuln, depth)] == expected

    def test_without_fix_nothing_blocks(self):
        graph = chain_corpus(3, fixed=False)
        assert find_blocking_dependents(graph, graph.vulnerabilities[0], 1) == []

    def test_depth_must_be_positive(self, chain_graph):
        with pytest.raises(ValueError):
            find_blocking_dependents(chain_graph, chain_graph.vulnerabilities[0], 0)


class TestCampaign:

    def test_first_depth_fix_clears_the_chain(self, chain_graph):
        vuln = chain_graph.vulnerabilities[0]
        report, final = run_campaign(chain_graph, vuln, config(COMPATIBLE_FIX))

        assert [d.to_dict() for d in report.per_depth] == [
            {"depth": 1, "dependents": 1, "restored": 1, "failures": {}},
        ]
        assert report.restorations[0].result.range_text == "[1.1,1.1]"
        assert report.iterations == 1
        assert report.final_epoch == final.epoch == 1
        assert report.remaining_at(0)[HORIZON] == 3
        assert report.remaining_at(1)[HORIZON] == 0
        assert chain_graph.epoch == 0

    def test_failures_are_categorized(self, chain_graph):
        vuln = chain_graph.vulnerabilities[0]
        report, final = run_campaign(chain_graph, vuln, config(BREAKING_FIX))

        assert [d.failures for d in report.per_depth] == [
            {"NoCompatiblePatch": 1},
            {"NoSecureVersion": 1},
            {"NoSecureVersion": 1},
        ]
        assert report.iterations == 3
        assert final is chain_graph
        first, second, _ = report.restorations
        assert "breaking APIs: x" in first.failure.suggestion
        assert "g:c1:1 -> g:vuln:1.0" in first.failure.suggestion
        assert second.failure.keep_monitoring
        assert second.failure.suggestion.startswith("Exclude g:vuln from g:c1")

    def test_deeper_restoration_after_failure(self, upgradable_graph):
        vuln = upgradable_graph.vulnerabilities[0]
        provider = surfaces(("g:vuln:1.0", "h"), ("g:vuln:1.1", "h2"), ("g:c1:1", "h"), ("g:c1:2", "h"))
        report, final = run_campaign(upgradable_graph, vuln, config(provider))

        assert [(d.depth, d.restored, d.failures) for d in report.per_depth] == [
            (1, 0, {"NoCompatiblePatch": 1}),
            (2, 1, {}),
        ]
        assert report.restorations[-1].result.range_text == "[2,2]"
        assert final.epoch == 1
        assert report.remaining_at(0)[HORIZON] == 2
        assert report.remaining_at(1)[HORIZON] == 1

    def test_eager_and_frozen_epochs_agree(self):
        graph = (
            CorpusBuilder()
            .releases("g:vuln", [("1.0", "2018-01-01"), ("1.1", "2019-01-01")])
            .release("g:a:1", "2019-06-01").release("g:b:1", "2019-07-01")
            .depends("g:a:1", "g:vuln", "1.0")
            .depends("g:b:1", "g:vuln", "1.0")
            .vulnerability("CVE-E", "g:vuln", "[1.0,1.1)", "2018-03-01")
            .build()
        )
        vuln = graph.vulnerabilities[0]
        frozen_report, frozen = run_campaign(graph, vuln, config(COMPATIBLE_FIX))
        eager_report, eager = run_campaign(graph, vuln, config(COMPATIBLE_FIX, eager=True))

        assert frozen == eager
        assert frozen.epoch == 2
        assert frozen_report.to_dict() == eager_report.to_dict()

    def test_parallel_restorations(self, chain_graph):
        vuln = chain_graph.vulnerabilities[0]
        serial, _ = run_campaign(chain_graph, vuln, config(BREAKING_FIX))
        parallel, _ = run_campaign(chain_graph, vuln, config(BREAKING_FIX, workers=4))
        assert parallel.to_dict() == serial.to_dict()


class TestCampaignSweeps:

    def test_fan_out_first_depth_dominates(self, fan_out):
        graph, campaign = fan_out
        report, final = run_campaign(graph, graph.vulnerabilities[0], campaign)

        assert [(d.depth, d.dependents, d.restored, d.failures) for d in report.per_depth] == [
            (1, 6, 4, {"NoCompatiblePatch": 2}),
            (2, 6, 6, {}),
        ]
        counts = horizon_counts(report)
        assert counts == [60, 20, 2]
        drops = [before - after for before, after in zip(counts, counts[1:])]
        assert drops[0] == max(drops)
        assert final.epoch == 10
        remaining = {str(r.release) for r in find_affected(final, final.vulnerabilities[0])}
        assert remaining == {"g:f4:1", "g:f5:1"}

    @pytest.mark.slow
    def test_ecosystem_sweep(self, ecosystem):
        graph, provider = ecosystem
        vuln = graph.vulnerabilities[0]
        assert graph.stats()["releases"] == 502

        report, final = run_campaign(graph, vuln, config(provider))

        assert [d.depth for d in report.per_depth] == [1, 2, 3, 4]
        assert report.per_depth[0].to_dict() == {
            "depth": 1, "dependents": 55, "restored": 0, "failures": {"NoCompatiblePatch": 55},
        }
        assert report.per_depth[1].restored >= 5
        assert report.per_depth[3].failures.get("NoSecureVersion", 0) >= 5
        assert sum(d.dependents for d in report.per_depth) == report.iterations

        counts = horizon_counts(report)
        assert all(before >= after for before, after in zip(counts, counts[1:]))
        assert counts[-1] < counts[0]

        initial = simulated_affected(graph, vuln)
        settled = simulated_affected(final, vuln)
        assert counts[0] == len(initial)
        assert counts[-1] == len(settled)
        assert {r.release for r in find_affected(final, vuln)} == set(settled)

    @pytest.mark.slow
    def test_ecosystem_reaches_a_fixed_point(self, ecosystem):
        graph, provider = ecosystem
        vuln = graph.vulnerabilities[0]
        _, final = run_campaign(graph, vuln, config(provider))

        initial = simulated_affected(graph, vuln)
        settled = simulated_affected(final, vuln)
        for release in graph.releases:
            if release.library == vuln.library:
                continue
            (decl,) = graph.dependencies_of(release)
            if decl.target == vuln.library:
                expected = release in initial
            else:
                expected = release in initial and all(v in settled for v in final.releases_of(decl.target))
            assert (release in settled) is expected, str(release)

        again, unchanged = run_campaign(final, vuln, config(provider))
        assert unchanged is final
        assert all(d.restored == 0 for d in again.per_depth)


class TestFailureCategories:

    def _result(self, outcome, **kwargs):
        return RestoredRange(gav("g:c1:1"), ga("g:vuln"), parse_version("1.0"), outcome, **kwargs)

    def _context(self, manifest=None):
        vuln = chain_corpus(1).vulnerabilities[0]
        return FailureContext(vuln, (gav("g:c1:1"), gav("g:vuln:1.0")), manifest)

    def test_no_secure_version_with_used_apis(self):
        manifest = UsageManifest("g:c1", ga("g:vuln"), frozenset({"x"}))
        failure = categorize_failure(self._result(Outcome.NO_SECURE_VERSION), self._context(manifest))
        assert failure.category is FailureKind.NO_SECURE_VERSION
        assert failure.suggestion.startswith("Substitute g:vuln")
        assert failure.keep_monitoring

    def test_internal_error(self):
        failure = categorize_failure(self._result(Outcome.INTERNAL_ERROR, detail="boom"), self._context())
        assert failure.to_dict() == {
            "category": "InternalError",
            "detail": "boom",
            "suggestion": "Inspect the diagnostic detail and rerun",
            "keep_monitoring": False,
        }


class TestReports:

    def _report(self, chain_graph):
        report, _ = run_campaign(chain_graph, chain_graph.vulnerabilities[0], config(BREAKING_FIX))
        return report

    def test_json(self, chain_graph, tmp_path):
        path = tmp_path / "campaign.json"
        report = self._report(chain_graph)
        emit_report(report, path)
        payload = json.loads(path.read_text(encoding="utf-8"))
        assert payload["vuln_id"] == "CVE-CHAIN"
        assert [r["outcome"] for r in payload["restorations"]] == ["NoCompatiblePatch", "NoSecureVersion", "NoSecureVersion"]

        again = tmp_path / "again.json"
        emit_report(self._report(chain_graph), again)
        assert again.read_bytes() == path.read_bytes()

    def test_markdown(self, chain_graph, tmp_path):
        report = self._report(chain_graph)
        path = tmp_path / "campaign.md"
        emit_report(report, path, "md")
        text = path.read_text(encoding="utf-8")
        assert text == render_markdown(report)
        assert text.startswith("# Remediation campaign for CVE-CHAIN\n")
        assert "| 1 | 1 | 0 | NoCompatiblePatch: 1 |" in text

    def test_unknown_format(self, chain_graph, tmp_path):
        with pytest.raises(ValueError):
            emit_report(self._report(chain_graph), tmp_path / "x", "html")

    def test_empty_campaign(self, tmp_path):
        graph = (
            CorpusBuilder()
            .releases("g:vuln", [("1.0", "2018-01-01"), ("1.1", "2019-01-01")])
            .release("g:a:1", "2019-06-01")
            .depends("g:a:1", "g:vuln", "1.1")
            .vulnerability("CVE-N", "g:vuln", "[1.0,1.1)", "2018-03-01")
            .build()
        )
        report, final = run_campaign(graph, graph.vulnerabilities[0], config(COMPATIBLE_FIX))
        assert final is graph
        assert (report.iterations, report.per_depth, report.restorations) == (0, [], [])

        emit_report(report, tmp_path / "empty.json")
        payload = json.loads((tmp_path / "empty.json").read_text(encoding="utf-8"))
        assert payload["per_depth"] == []
        assert payload["restorations"] == []
        assert payload["iterations"] == 0
        assert {p["count"] for p in payload["remaining_libvers"]} == {0}

        emit_report(report, tmp_path / "empty.md", "markdown")
        text = (tmp_path / "empty.md").read_text(encoding="utf-8")
        assert "Iterations: 0; final epoch: 0" in text
        assert "No blocking dependents." in text

    def test_unwritable_destination(self, chain_graph, tmp_path):
        report = self._report(chain_graph)
        with pytest.raises(IoError) as raised:
            emit_report(report, tmp_path / "missing" / "campaign.json")
        assert isinstance(raised.value, OSError)
        with pytest.raises(IoError):
            emit_report(report, tmp_path / "missing" / "campaign.md", "md")
        with pytest.raises(IoError):
            write_remaining_csv(report, tmp_path)
        assert issubclass(SnapshotError, IoError)

    def test_remaining_csv(self, chain_graph, tmp_path):
        report, _ = run_campaign(chain_graph, chain_graph.vulnerabilities[0], config(COMPATIBLE_FIX))
        path = tmp_path / "remaining.csv"
        write_remaining_csv(report, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "date,count,epoch"
        assert len(lines) == len(remaining_frame(report)) + 1
        assert lines[-1] == f"{HORIZON.isoformat()},0,1"


class TestUsageDirectory:

    def test_load(self, tmp_path):
        (tmp_path / "c1.json").write_text(json.dumps({
            "project": "g:c1", "dependency": {"group": "g", "artifact": "vuln"}, "used_apis": ["x"],
        }), encoding="utf-8")
        (tmp_path / "broken.json").write_text("{", encoding="utf-8")
        manifests = load_usage_directory(tmp_path)
        assert list(manifests) == [("g:c1", ga("g:vuln"))]

        config_with_usage = CampaignConfig(surfaces=COMPATIBLE_FIX, usages=manifests)
        assert config_with_usage.usage_for(ga("g:c1"), ga("g:vuln")).used_apis == frozenset({"x"})
        assert config_with_usage.usage_for(ga("g:c2"), ga("g:vuln")) is None
