"""
Tests for Maven version ordering, version specs and range synthesis.
"""
import random
import string

import pytest

from ranger.errors import EmptySelection, EmptyVersion, MalformedRange, SelectionOutsideUniverse
from ranger.version import (
    RangeSet,
    SoftVersion,
    UnresolvedSpec,
    canonical,
    compare_versions,
    parse_version,
    parse_version_spec,
    spec_contains,
    synthesize_range,
)

# Ascending sequences taken from the Maven version-order specification.
QUALIFIER_ORDER = [
    "1-alpha2snapshot", "1-alpha2", "1-alpha-123", "1-beta-2", "1-beta123", "1-m2", "1-m11",
    "1-rc", "1-cr2", "1-rc123", "1-SNAPSHOT", "1", "1-sp", "1-sp2", "1-sp123", "1-abc",
    "1-def", "1-pom-1", "1-1-snapshot", "1-1", "1-2", "1-123",
]
NUMBER_ORDER = [
    "2.0", "2.0.a", "2-1", "2.0.2", "2.0.123", "2.1.0", "2.1-a", "2.1b", "2.1-c", "2.1-1",
    "2.1.0.1", "2.2", "2.123", "11.a2", "11.a11", "11.b2", "11.b11", "11.m2", "11.m11", "11",
    "11.a", "11b", "11c", "11m",
]
EQUAL_GROUPS = [
    ["1", "1.0", "1.0.0", "1-0", "1.0-0", "1ga", "1-ga", "1.0.ga", "1-final", "1.0-release", "1-0.0"],
    ["1a1", "1-a1", "1-alpha-1", "1alpha1"],
    ["1b2", "1-b2", "1-beta-2", "1beta2"],
    ["1m3", "1-m3", "1-milestone-3", "1milestone3"],
    ["1rc", "1-rc", "1cr", "1-cr"],
    ["1X", "1x", "1-x"],
    ["1.0-SNAPSHOT", "1-snapshot", "1.0.0-snapshot"],
]


def _pairs(sequence):
    return [(low, high) for i, low in enumerate(sequence) for high in sequence[i + 1:]]


def _random_version(rng: random.Random) -> str:
    core = ".".join(str(rng.randint(0, 3)) for _ in range(rng.randint(1, 3)))
    roll = rng.random()
    if roll < 0.4:
        return core
    qualifier = rng.choice(["alpha", "beta", "milestone", "rc", "snapshot", "sp", "foo", "bar"])
    suffix = ""
    if rng.random() < 0.5:
        suffix = rng.choice(["", "-"]) + str(rng.randint(1, 3))
    return f"{core}-{qualifier}{suffix}"


class TestMavenOrdering:
    """Version order must match the Maven specification tables."""

    @pytest.mark.parametrize("low,high", _pairs(QUALIFIER_ORDER)[:30] + list(zip(QUALIFIER_ORDER, QUALIFIER_ORDER[1:])))
    def test_qualifier_order(self, low, high):
        assert compare_versions(parse_version(low), parse_version(high)) == -1, f"{low} < {high}"
        assert compare_versions(parse_version(high), parse_version(low)) == 1, f"{high} > {low}"

    @pytest.mark.parametrize("low,high", list(zip(NUMBER_ORDER, NUMBER_ORDER[1:])))
    def test_number_order(self, low, high):
        assert parse_version(low) < parse_version(high), f"{low} < {high}"

    @pytest.mark.parametrize("group", EQUAL_GROUPS)
    def test_equal_groups(self, group):
        first = parse_version(group[0])
        for other in group[1:]:
            version = parse_version(other)
            assert compare_versions(first, version) == 0, f"{group[0]} == {other}"
            assert first == version
            assert hash(first) == hash(version)

    @pytest.mark.parametrize("a,b,expected", [
        ("2.0", "1.9", 1),
        ("1.0-alpha", "1.0", -1),
        ("1", "1.0", 0),
        ("1.2.3", "1.2.3", 0),
        ("1.0-rc1", "1.0-beta2", 1),
        ("1.10", "1.9", 1),
        ("1-0.alpha", "1", -1),
        ("1.0.0.RELEASE", "1.0.0", 0),
        ("2.14.1", "2.15.0", -1),
        ("1.0-SNAPSHOT", "1.0-rc1", 1),
    ])
    def test_compare_examples(self, a, b, expected):
        assert compare_versions(parse_version(a), parse_version(b)) == expected

    def test_sort_uses_maven_order(self):
        shuffled = list(NUMBER_ORDER)
        random.Random(7).shuffle(shuffled)
        assert [str(v) for v in sorted(parse_version(s) for s in shuffled)] == NUMBER_ORDER


class TestParseVersion:

    @pytest.mark.parametrize("text", ["", "   ", "\t\n"])
    def test_blank_raises(self, text):
        with pytest.raises(EmptyVersion):
            parse_version(text)

    def test_raw_is_trimmed(self):
        assert parse_version("  1.2.3 ").raw == "1.2.3"
        assert str(parse_version("1.2.3")) == "1.2.3"

    @pytest.mark.parametrize("text,fallback", [
        ("1.0", False),
        ("1.0-rc1", False),
        ("1.0-SNAPSHOT", False),
        ("1.0.Final", False),
        ("1.0-jre", True),
        ("2.3.4.v20200101", True),
    ])
    def test_lexical_fallback_flag(self, text, fallback):
        assert parse_version(text).needs_lexical_fallback is fallback

    @pytest.mark.parametrize("text", QUALIFIER_ORDER + NUMBER_ORDER + ["0", "1-0.alpha", "ga.1", "1.x1", "1-ga.1"])
    def test_canonical_round_trip(self, text):
        version = parse_version(text)
        assert parse_version(canonical(version)) == version

    def test_canonical_examples(self):
        assert canonical(parse_version("1.0.0")) == "1"
        assert canonical(parse_version("1.0-alpha-1")) == "1-alpha-1"
        assert canonical(parse_version("0")) == "0"

    def test_fuzz_never_aborts(self):
        rng = random.Random(1234)
        alphabet = string.printable + "äß中İ²"
        for _ in range(5000):
            text = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 20)))
            if not text.strip():
                continue
            version = parse_version(text)
            assert compare_versions(version, version) == 0
            assert parse_version(canonical(version)) == version or any(c in canonical(version) for c in " \t\r\n\x0b\x0c")


class TestOrderingProperties:

    @pytest.mark.slow
    def test_antisymmetric_and_transitive(self):
        rng = random.Random(42)
        pool = [parse_version(_random_version(rng)) for _ in range(400)]
        for _ in range(10_000):
            a, b, c = rng.choice(pool), rng.choice(pool), rng.choice(pool)
            assert compare_versions(a, b) == -compare_versions(b, a)
            assert compare_versions(a, a) == 0
            if compare_versions(a, b) <= 0 and compare_versions(b, c) <= 0:
                assert compare_versions(a, c) <= 0, f"{a} <= {b} <= {c}"


class TestParseVersionSpec:

    def test_bare_version_is_soft(self):
        spec = parse_version_spec("1.2.3")
        assert isinstance(spec, SoftVersion)
        assert spec.preferred == parse_version("1.2.3")

    @pytest.mark.parametrize("text,inside,outside", [
        ("[1.0,2.0)", ["1.0", "1.5", "1.9.9"], ["0.9", "2.0", "2.1"]),
        ("[1.2]", ["1.2", "1.2.0"], ["1.1", "1.3"]),
        ("(,1.5]", ["0.1", "1.5"], ["1.5.1", "2"]),
        ("[1.1,)", ["1.1", "9.9"], ["1.0"]),
        ("(1.0,2.0]", ["1.1", "2.0"], ["1.0", "2.1"]),
        ("(,1.0],[1.2,)", ["0.5", "1.0", "1.2", "3"], ["1.1"]),
        (" [ 1.0 , 2.0 ) ", ["1.0"], ["2.0"]),
    ])
    def test_range_membership(self, text, inside, outside):
        spec = parse_version_spec(text)
        assert isinstance(spec, RangeSet)
        for v in inside:
            assert spec_contains(spec, parse_version(v)), f"{v} in {text}"
        for v in outside:
            assert not spec_contains(spec, parse_version(v)), f"{v} not in {text}"

    def test_open_upper(self):
        assert parse_version_spec("[1.1,)").open_upper
        assert not parse_version_spec("[1.1,2.0]").open_upper

    @pytest.mark.parametrize("text,expected", [
        ("[1.0,2.0)", "1.0"), ("(1.0,2.0]", "2.0"), ("[1.0],[3.0,4.0)", "3.0"), ("(1.0,2.0)", None), ("(,)", None),
    ])
    def test_highest_bound(self, text, expected):
        bound = parse_version_spec(text).highest_bound()
        assert (str(bound) if bound is not None else None) == expected

    def test_union_is_sorted(self):
        spec = parse_version_spec("[3.0,4.0),[1.0,2.0)")
        assert [str(i.lower) for i in spec.intervals] == ["1.0", "3.0"]

    @pytest.mark.parametrize("text", [
        "[1.0,2.0", "1.0,2.0]", "[1.0,2.0)]", "(1.0)", "[]", "[2.0,1.0]", "(1.0,1.0]",
        "[1.0,2.0),", "[1.0,2.0,3.0]", "[1.0,2.0],[1.5,3.0]", "[1.0,2.0],[2.0,3.0]", "",
        "[1.0][2.0]", "[1.0,2.0)(3.0,4.0]",
    ])
    def test_malformed(self, text):
        with pytest.raises(MalformedRange):
            parse_version_spec(text)

    def test_restrictions_need_a_comma(self):
        with pytest.raises(MalformedRange, match="separated by commas"):
            parse_version_spec("[1.0][2.0]")
        assert len(parse_version_spec("[1.0],[2.0]").intervals) == 2

    def test_touching_half_open_intervals_are_allowed(self):
        spec = parse_version_spec("[1.0,2.0),[2.0,3.0]")
        assert spec.contains(parse_version("2.0"))

    @pytest.mark.parametrize("spec,version,expected", [
        ("[1.0,2.0)", "1.5", True),
        ("[1.0,2.0)", "2.0", False),
        ("1.2", "1.3", False),
        ("1.2", "1.2.0", True),
    ])
    def test_spec_contains(self, spec, version, expected):
        assert spec_contains(parse_version_spec(spec), parse_version(version)) is expected

    def test_unresolved_contains_nothing(self):
        assert not spec_contains(UnresolvedSpec("${missing}"), parse_version("1.0"))

    def test_highest_member(self):
        universe = [parse_version(v) for v in ["1.0", "1.1", "1.2", "2.0"]]
        assert parse_version_spec("[1.0,2.0)").highest_member(universe) == parse_version("1.2")
        assert parse_version_spec("[3.0,)").highest_member(universe) is None


class TestSynthesizeRange:

    @staticmethod
    def _versions(*texts):
        return [parse_version(t) for t in texts]

    def test_contiguous_run(self):
        universe = self._versions("1.0", "1.1", "1.2", "1.3", "1.4", "2.0")
        assert synthesize_range(self._versions("1.2", "1.3"), universe) == "[1.2,1.3]"

    def test_holes_split_intervals(self):
        universe = self._versions("1.0", "1.1", "1.2", "1.3", "1.4")
        assert synthesize_range(self._versions("1.2", "1.4"), universe) == "[1.2,1.2],[1.4,1.4]"

    def test_open_upper_on_maximum(self):
        universe = self._versions("1.0", "1.2", "1.4")
        assert synthesize_range(self._versions("1.4"), universe, open_upper=True) == "[1.4,)"

    def test_open_upper_ignored_without_maximum(self):
        universe = self._versions("1.0", "1.2", "1.4")
        assert synthesize_range(self._versions("1.2"), universe, open_upper=True) == "[1.2,1.2]"

    def test_universe_order_and_duplicates_do_not_matter(self):
        universe = self._versions("1.4", "1.0", "1.2", "1.2.0", "1.3")
        assert synthesize_range(self._versions("1.3", "1.2"), universe) == "[1.2,1.3]"

    def test_empty_selection(self):
        with pytest.raises(EmptySelection):
            synthesize_range([], self._versions("1.0"))

    def test_selection_outside_universe(self):
        with pytest.raises(SelectionOutsideUniverse):
            synthesize_range(self._versions("3.0"), self._versions("1.0"))

    @pytest.mark.slow
    def test_round_trip_random(self):
        rng = random.Random(99)
        for _ in range(1000):
            universe = sorted({parse_version(_random_version(rng)) for _ in range(rng.randint(1, 15))})
            selected = [v for v in universe if rng.random() < 0.5] or [rng.choice(universe)]
            text = synthesize_range(selected, universe, open_upper=rng.random() < 0.3)
            spec = parse_version_spec(text)
            assert [v for v in universe if spec_contains(spec, v)] == sorted(selected), text
