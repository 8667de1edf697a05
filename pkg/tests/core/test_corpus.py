"""
Tests for corpus ingestion: repository index, POM documents and vulnerability records.
"""
import json
from datetime import date

import pytest

from ranger.common.diagnostics import Diagnostics
from ranger.corpus import (
    LibraryId,
    ReleaseId,
    Scope,
    interpolate,
    load_index,
    load_poms,
    load_vulnerabilities,
    match_affected_versions,
    parse_pom,
    read_pom_xml,
)
from ranger.errors import MissingCoordinates, SchemaError, UnorderedEvents, XmlError
from ranger.version import RangeSet, SoftVersion, UnresolvedSpec, parse_version
from tests.conftest import pom_xml


def _write_lines(path, rows):
    path.write_text("\n".join(row if isinstance(row, str) else json.dumps(row) for row in rows) + "\n")
    return path


class TestCoordinates:

    def test_library_parse(self):
        assert LibraryId.parse("org.x:core") == LibraryId("org.x", "core")

    @pytest.mark.parametrize("text", ["org.x", "org.x:core:1.0", ":core"])
    def test_library_parse_rejects(self, text):
        with pytest.raises(MissingCoordinates):
            LibraryId.parse(text)

    def test_release_equality_ignores_date(self):
        a = ReleaseId.parse("g:a:1.0", date(2020, 1, 1))
        b = ReleaseId.parse("g:a:1", None)
        assert a == b
        assert hash(a) == hash(b)

    @pytest.mark.parametrize("pattern,library,expected", [
        ("g:a", "g:a", True),
        ("*:a", "other:a", True),
        ("g:*", "g:anything", True),
        ("*:*", "x:y", True),
        ("g:a", "g:b", False),
    ])
    def test_exclusion_wildcards(self, pattern, library, expected):
        assert LibraryId.parse(pattern).matches(LibraryId.parse(library)) is expected


class TestLoadIndex:

    def test_sorted_and_dated(self, tmp_path):
        path = _write_lines(tmp_path / "index.jsonl", [
            {"group": "g", "artifact": "b", "version": "2.0", "released_at": "2020-02-02T23:30:00-02:00"},
            {"group": "g", "artifact": "a", "version": "1.0", "released_at": "2019-01-01"},
        ])
        releases = load_index(path)
        assert [str(r) for r in releases] == ["g:a:1.0", "g:b:2.0"]
        # timestamps are normalized to the UTC calendar date
        assert releases[1].released_at == date(2020, 2, 3)

    def test_duplicates_keep_earliest_date(self, tmp_path):
        path = _write_lines(tmp_path / "index.jsonl", [
            {"group": "g", "artifact": "a", "version": "1.0", "released_at": "2020-05-01"},
            {"group": "g", "artifact": "a", "version": "1.0.0", "released_at": "2020-01-01"},
        ])
        diagnostics = Diagnostics()
        releases = load_index(path, diagnostics)
        assert len(releases) == 1
        assert releases[0].released_at == date(2020, 1, 1)
        assert len(diagnostics.by_code("duplicate_release")) == 1

    def test_missing_date_is_a_diagnostic(self, tmp_path):
        path = _write_lines(tmp_path / "index.jsonl", [{"group": "g", "artifact": "a", "version": "1.0"}])
        diagnostics = Diagnostics()
        releases = load_index(path, diagnostics)
        assert releases[0].released_at is None
        assert diagnostics.counts() == {"missing_release_date": 1}

    def test_blank_lines_are_skipped(self, tmp_path):
        path = _write_lines(tmp_path / "index.jsonl", ["", {"group": "g", "artifact": "a", "version": "1"}, "  "])
        assert len(load_index(path)) == 1

    @pytest.mark.parametrize("row,line", [
        ("{not json", 2),
        ('["array"]', 2),
        ({"group": "g", "artifact": "", "version": "1"}, 2),
        ({"group": "g", "artifact": "a"}, 2),
        ({"group": "g", "artifact": "a", "version": "1", "released_at": "yesterday"}, 2),
    ])
    def test_schema_errors_carry_line(self, tmp_path, row, line):
        path = _write_lines(tmp_path / "index.jsonl", [{"group": "g", "artifact": "ok", "version": "1"}, row])
        with pytest.raises(SchemaError) as excinfo:
            load_index(path)
        assert excinfo.value.line == line


class TestParsePom:

    RELEASE = ReleaseId.parse("org.app:app:1.0")

    def test_plain_dependencies(self):
        data = pom_xml("org.app", "app", "1.0", dependencies=[
            ("org.lib", "lib", "1.2"),
            ("org.test", "junit", "4.13", "test"),
            ("org.range", "r", "[1.0,2.0)"),
        ]).encode()
        document = parse_pom(data, self.RELEASE)
        deps = {str(d.target): d for d in document.dependencies}
        assert deps["org.lib:lib"].spec == SoftVersion(parse_version("1.2"))
        assert deps["org.lib:lib"].scope is Scope.COMPILE
        assert deps["org.test:junit"].scope is Scope.TEST
        assert isinstance(deps["org.range:r"].spec, RangeSet)

    def test_document_order_is_kept(self):
        data = pom_xml("org.app", "app", "1.0", dependencies=[
            ("z", "z", "1"), ("a", "a", "1"), ("m", "m", "1"),
        ]).encode()
        targets = [str(d.target) for d in parse_pom(data, self.RELEASE).dependencies]
        assert targets == ["z:z", "a:a", "m:m"]

    def test_property_interpolation(self):
        extra = "<properties><lib.version>${base}.2</lib.version><base>1</base></properties>"
        data = pom_xml("org.app", "app", "1.0", dependencies=[
            ("org.lib", "lib", "${lib.version}"),
            ("org.app", "sibling", "${project.version}"),
        ], extra=extra).encode()
        deps = parse_pom(data, self.RELEASE).dependencies
        assert deps[0].spec == SoftVersion(parse_version("1.2"))
        assert deps[1].spec == SoftVersion(parse_version("1.0"))

    def test_unresolved_property_becomes_unresolved_spec(self):
        data = pom_xml("org.app", "app", "1.0", dependencies=[("org.lib", "lib", "${missing}")]).encode()
        diagnostics = Diagnostics()
        document = parse_pom(data, self.RELEASE, diagnostics)
        assert isinstance(document.dependencies[0].spec, UnresolvedSpec)
        assert diagnostics.by_code("unresolved_property")

    def test_malformed_range_is_a_diagnostic(self):
        data = pom_xml("org.app", "app", "1.0", dependencies=[("org.lib", "lib", "[2.0,1.0]")]).encode()
        diagnostics = Diagnostics()
        document = parse_pom(data, self.RELEASE, diagnostics)
        assert isinstance(document.dependencies[0].spec, UnresolvedSpec)
        assert diagnostics.by_code("malformed_version")

    def test_version_from_dependency_management(self):
        data = pom_xml(
            "org.app", "app", "1.0",
            dependencies=[("org.lib", "lib", "")],
            management=[("org.lib", "lib", "3.1", "runtime")],
        ).replace("<version></version>", "").encode()
        decl = parse_pom(data, self.RELEASE).dependencies[0]
        assert decl.spec == SoftVersion(parse_version("3.1"))
        assert decl.managed is True
        assert decl.scope is Scope.RUNTIME

    def test_unknown_scope_defaults_to_compile(self):
        data = pom_xml("org.app", "app", "1.0", dependencies=[("org.lib", "lib", "1", "weird")]).encode()
        diagnostics = Diagnostics()
        assert parse_pom(data, self.RELEASE, diagnostics).dependencies[0].scope is Scope.COMPILE
        assert diagnostics.by_code("unknown_scope")

    def test_optional_and_exclusions(self):
        body = (
            "<dependencies><dependency><groupId>org.lib</groupId><artifactId>lib</artifactId>"
            "<version>1</version><optional>true</optional><exclusions>"
            "<exclusion><groupId>org.bad</groupId><artifactId>*</artifactId></exclusion>"
            "</exclusions></dependency></dependencies>"
        )
        decl = parse_pom(pom_xml("org.app", "app", "1.0", extra=body).encode(), self.RELEASE).dependencies[0]
        assert decl.optional is True
        assert decl.excludes(LibraryId("org.bad", "anything"))
        assert not decl.excludes(LibraryId("org.good", "x"))

    def test_malformed_xml(self):
        with pytest.raises(XmlError):
            read_pom_xml(b"<project><unclosed></project>")

    def test_group_and_version_inherited_from_parent_tag(self):
        data = (
            b"<project><parent><groupId>org.p</groupId><artifactId>parent</artifactId>"
            b"<version>7</version></parent><artifactId>child</artifactId></project>"
        )
        raw = read_pom_xml(data)
        assert (raw.group, raw.artifact, raw.version) == ("org.p", "child", "7")


class TestInterpolate:

    @pytest.mark.parametrize("value,expected,complete", [
        ("${a}", "1", True),
        ("${b}", "1", True),
        ("x-${a}-y", "x-1-y", True),
        ("${nope}", "${nope}", False),
        (None, None, True),
    ])
    def test_interpolate(self, value, expected, complete):
        assert interpolate(value, {"a": "1", "b": "${a}"}) == (expected, complete)

    def test_self_reference_terminates(self):
        text, complete = interpolate("${loop}", {"loop": "${loop}"})
        assert not complete


class TestLoadPoms:

    def _write(self, directory, name, text):
        (directory / name).write_text(text, encoding="utf-8")

    def test_parent_chain_and_bom_import(self, tmp_path):
        poms = tmp_path / "poms"
        poms.mkdir()
        parent = pom_xml(
            "org.p", "parent", "1",
            management=[("org.lib", "lib", "${lib.version}")],
            extra="<properties><lib.version>2.0</lib.version></properties>",
        )
        bom = pom_xml("org.b", "bom", "1", management=[("org.x", "x", "5.0")])
        child = (
            "<project><parent><groupId>org.p</groupId><artifactId>parent</artifactId><version>1</version></parent>"
            "<artifactId>child</artifactId><version>3</version>"
            "<dependencyManagement><dependencies><dependency><groupId>org.b</groupId><artifactId>bom</artifactId>"
            "<version>1</version><type>pom</type><scope>import</scope></dependency></dependencies></dependencyManagement>"
            "<dependencies>"
            "<dependency><groupId>org.lib</groupId><artifactId>lib</artifactId></dependency>"
            "<dependency><groupId>org.x</groupId><artifactId>x</artifactId></dependency>"
            "</dependencies></project>"
        )
        self._write(poms, "org.p__parent__1.xml", parent)
        self._write(poms, "org.b__bom__1.xml", bom)
        self._write(poms, "org.p__child__3.xml", child)

        release = ReleaseId.parse("org.p:child:3")
        diagnostics = Diagnostics()
        documents = load_poms(poms, [release], diagnostics, workers=2)
        deps = {str(d.target): d for d in documents[release].dependencies}
        assert deps["org.lib:lib"].spec == SoftVersion(parse_version("2.0"))
        assert deps["org.x:x"].spec == SoftVersion(parse_version("5.0"))
        assert documents[release].parent == ReleaseId.parse("org.p:parent:1")
        assert len(diagnostics.by_code("pom_not_indexed")) == 2

    def test_missing_and_broken_files_are_diagnostics(self, tmp_path):
        poms = tmp_path / "poms"
        poms.mkdir()
        self._write(poms, "g__broken__1.xml", "<project>")
        self._write(poms, "badname.xml", pom_xml("g", "x", "1"))
        self._write(poms, "g__orphan__1.xml", pom_xml("g", "orphan", "1", extra=(
            "<parent><groupId>g</groupId><artifactId>gone</artifactId><version>9</version></parent>"
        )))
        releases = [ReleaseId.parse("g:broken:1"), ReleaseId.parse("g:absent:1"), ReleaseId.parse("g:orphan:1")]
        diagnostics = Diagnostics()
        documents = load_poms(poms, releases, diagnostics)

        assert list(documents) == [ReleaseId.parse("g:orphan:1")]
        counts = diagnostics.counts()
        assert counts["malformed_pom"] == 1
        assert counts["bad_pom_name"] == 1
        assert counts["missing_parent"] == 1
        # g:broken:1 has no usable POM, g:absent:1 has no file at all
        assert counts["missing_pom"] == 2

    def test_corpus_fixture_loads(self, corpus_files):
        releases = load_index(corpus_files["index"])
        documents = load_poms(corpus_files["poms"], releases)
        app = ReleaseId.parse("org.app:app:1.0")
        assert [str(d.target) for d in documents[app].dependencies] == ["org.lib:lib"]


class TestLoadVulnerabilities:

    def _write(self, tmp_path, payload):
        path = tmp_path / "vulns.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    def test_records_are_merged_per_library(self, tmp_path):
        path = self._write(tmp_path, [
            {"id": "CVE-1", "group": "g", "artifact": "a", "published_at": "2020-05-01",
             "ranges": [{"introduced": "1.0", "fixed": "1.5"}]},
            {"id": "CVE-1", "group": "g", "artifact": "a", "published_at": "2020-03-01T12:00:00Z",
             "severity": "HIGH", "ranges": [{"introduced": "2.0", "last_affected": "2.3"}]},
            {"id": "CVE-1", "group": "g", "artifact": "b", "published_at": "2020-05-01",
             "ranges": [{"introduced": "0"}]},
        ])
        vulns = load_vulnerabilities(path)
        assert [(v.id, str(v.library)) for v in vulns] == [("CVE-1", "g:a"), ("CVE-1", "g:b")]
        merged = vulns[0]
        assert merged.published_at == date(2020, 3, 1)
        assert merged.severity == "HIGH"
        assert str(merged.affected) == "[1.0,1.5),[2.0,2.3]"
        assert vulns[1].affected.contains(parse_version("99"))

    def test_unordered_events(self, tmp_path):
        path = self._write(tmp_path, [{"id": "X", "group": "g", "artifact": "a", "published_at": "2020-01-01",
                                       "ranges": [{"introduced": "2.0", "fixed": "1.0"}]}])
        with pytest.raises(UnorderedEvents):
            load_vulnerabilities(path)

    @pytest.mark.parametrize("payload", [
        {"not": "a list"},
        [{"group": "g", "artifact": "a", "published_at": "2020-01-01", "ranges": [{}]}],
        [{"id": "X", "artifact": "a", "published_at": "2020-01-01", "ranges": [{}]}],
        [{"id": "X", "group": "g", "artifact": "a", "ranges": [{}]}],
        [{"id": "X", "group": "g", "artifact": "a", "published_at": "2020-01-01", "ranges": []}],
    ])
    def test_schema_errors(self, tmp_path, payload):
        with pytest.raises(SchemaError):
            load_vulnerabilities(self._write(tmp_path, payload))

    def test_match_affected_versions(self, corpus_files):
        vuln = load_vulnerabilities(corpus_files["vulns"])[0]
        releases = load_index(corpus_files["index"])
        assert {str(r) for r in match_affected_versions(vuln, releases)} == {"org.lib:lib:1.0"}
