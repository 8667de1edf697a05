"""
Pytest configuration and shared fixtures for ranger tests.
Corpus files on disk, small in-memory graphs and API surface fixtures.
"""
import json
import os
from pathlib import Path

import pytest

from tests.builders import CorpusBuilder, chain_corpus


@pytest.fixture(scope="session", autouse=True)
def test_environment():
    """Set up test environment variables and cleanup."""
    os.environ["TESTING"] = "1"

    yield

    # Cleanup test databases after all tests
    for pattern in ["*test*.duckdb", "ranger_test*.duckdb"]:
        for db_file in Path(".").glob(pattern):
            if db_file.exists():
                db_file.unlink()


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch):
    """Keep RANGER_* variables of the developer shell out of the tests."""
    for key in list(os.environ):
        if key.startswith("RANGER_"):
            monkeypatch.delenv(key, raising=False)


POM_TEMPLATE = """<?xml version="1.0" encoding="UTF-8"?>
<project xmlns="http://maven.apache.org/POM/4.0.0">
  <modelVersion>4.0.0</modelVersion>
  <groupId>{group}</groupId>
  <artifactId>{artifact}</artifactId>
  <version>{version}</version>
  {extra}
</project>
"""


def pom_xml(group: str, artifact: str, version: str, dependencies=(), management=(), extra: str = "") -> str:
    """Render a minimal POM; dependencies are (group, artifact, version[, scope]) tuples."""

    def render(entries):
        parts = []
        for entry in entries:
            g, a, v = entry[:3]
            scope = f"<scope>{entry[3]}</scope>" if len(entry) > 3 else ""
            parts.append(
                f"<dependency><groupId>{g}</groupId><artifactId>{a}</artifactId>"
                f"<version>{v}</version>{scope}</dependency>"
            )
        return "".join(parts)

    sections = extra
    if dependencies:
        sections += f"<dependencies>{render(dependencies)}</dependencies>"
    if management:
        sections += f"<dependencyManagement><dependencies>{render(management)}</dependencies></dependencyManagement>"
    return POM_TEMPLATE.format(group=group, artifact=artifact, version=version, extra=sections)


@pytest.fixture
def corpus_files(tmp_path):
    """
    A three-release corpus on disk:

        org.app:app:1.0 -> org.lib:lib:1.0 (vulnerable, fixed in 1.1)
    """
    index = tmp_path / "index.jsonl"
    rows = [
        {"group": "org.app", "artifact": "app", "version": "1.0", "released_at": "2021-06-01T10:00:00Z"},
        {"group": "org.lib", "artifact": "lib", "version": "1.0", "released_at": "2020-01-01"},
        {"group": "org.lib", "artifact": "lib", "version": "1.1", "released_at": "2021-01-01"},
    ]
    index.write_text("\n".join(json.dumps(row) for row in rows) + "\n", encoding="utf-8")

    poms = tmp_path / "poms"
    poms.mkdir()
    (poms / "org.app__app__1.0.xml").write_text(
        pom_xml("org.app", "app", "1.0", dependencies=[("org.lib", "lib", "1.0")]), encoding="utf-8"
    )
    (poms / "org.lib__lib__1.0.xml").write_text(pom_xml("org.lib", "lib", "1.0"), encoding="utf-8")
    (poms / "org.lib__lib__1.1.xml").write_text(pom_xml("org.lib", "lib", "1.1"), encoding="utf-8")

    vulns = tmp_path / "vulns.json"
    vulns.write_text(json.dumps([
        {
            "id": "CVE-2020-0001",
            "group": "org.lib",
            "artifact": "lib",
            "severity": "HIGH",
            "published_at": "2020-06-01",
            "ranges": [{"introduced": "0", "fixed": "1.1"}],
        }
    ]), encoding="utf-8")

    return {"index": index, "poms": poms, "vulns": vulns, "root": tmp_path}


@pytest.fixture
def chain_graph():
    """c3:1 -> c2:1 -> c1:1 -> g:vuln:1.0 with a fix in g:vuln:1.1."""
    return chain_corpus(3)


@pytest.fixture
def diamond_graph():
    """
    app depends on a and b; a pins lib 1.0 (vulnerable) and b pins lib 2.0.

    Nearest-wins picks lib 1.0 through a, the first declaration at depth 2.
    """
    return (
        CorpusBuilder()
        .release("g:app:1", "2021-01-01")
        .release("g:a:1", "2020-01-01")
        .release("g:b:1", "2020-02-01")
        .releases("g:lib", [("1.0", "2019-01-01"), ("2.0", "2020-01-15")])
        .depends("g:app:1", "g:a", "1")
        .depends("g:app:1", "g:b", "1")
        .depends("g:a:1", "g:lib", "1.0")
        .depends("g:b:1", "g:lib", "2.0")
        .vulnerability("CVE-D", "g:lib", "[1.0,2.0)", "2019-06-01")
        .build()
    )


@pytest.fixture(params=["day", "month"])
def bucket(request):
    """Parametrized time bucket for the persistence series."""
    return request.param
