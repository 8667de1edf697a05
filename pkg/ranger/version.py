"""
Maven version numbers, soft constraints and version ranges.

Ordering follows the Maven ComparableVersion model: a version is split into
integer items, string (qualifier) items and nested list items. A list starts
at every '-' and at every transition between digits and letters, so
"1.0-alpha-1" becomes [1, [alpha, [1]]]. Trailing null items (0, release
qualifiers, empty lists) are trimmed, hence "1" == "1.0" == "1.0.ga".

Qualifier order: alpha < beta < milestone < rc < snapshot < release < sp,
unknown qualifiers after all known ones, compared lexically.

Reference: https://maven.apache.org/pom.html#version-order-specification
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import total_ordering
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from ranger.errors import EmptySelection, EmptyVersion, MalformedRange, SelectionOutsideUniverse

Item = Union[int, str, tuple]

QUALIFIERS: Tuple[str, ...] = ("alpha", "beta", "milestone", "rc", "snapshot", "", "sp")
_RELEASE_INDEX = str(QUALIFIERS.index(""))
_ALIASES = {"ga": "", "final": "", "release": "", "cr": "rc"}
_SHORT = {"a": "alpha", "b": "beta", "m": "milestone"}
_DIGITS = frozenset("0123456789")
_UNSAFE_IN_RANGE = frozenset("[](), \t\r\n")


def _string_item(value: str, followed_by_digit: bool) -> str:
    if followed_by_digit and len(value) == 1:
        value = _SHORT.get(value, value)
    return _ALIASES.get(value, value)


def _item(buffer: str, is_digit: bool) -> Union[int, str]:
    if is_digit:
        return int(buffer)
    return _string_item(buffer, False)


def _is_null(item: Item) -> bool:
    if isinstance(item, tuple) or isinstance(item, list):
        return len(item) == 0
    return item == 0 or item == ""


def _normalize(items: list) -> None:
    for i in range(len(items) - 1, -1, -1):
        if _is_null(items[i]):
            del items[i]
        elif not isinstance(items[i], list):
            break


def _freeze(items: list) -> tuple:
    return tuple(_freeze(i) if isinstance(i, list) else i for i in items)


def _parse_items(text: str) -> tuple:
    version = text.lower()
    root: list = []
    current = root
    stack = [root]
    is_digit = False
    start = 0

    def open_list() -> list:
        sub: list = []
        current.append(sub)
        stack.append(sub)
        return sub

    for i, char in enumerate(version):
        if char == "." or char == "-":
            if i == start:
                current.append(0)
            else:
                current.append(_item(version[start:i], is_digit))
            start = i + 1
            if char == "-":
                current = open_list()
        elif char in _DIGITS:
            if not is_digit and i > start:
                current.append(_string_item(version[start:i], True))
                start = i
                current = open_list()
            is_digit = True
        else:
            if is_digit and i > start:
                current.append(_item(version[start:i], True))
                start = i
                current = open_list()
            is_digit = False

    if len(version) > start:
        # 1.0.x is treated like 1.0-x
        if not is_digit and current:
            current = open_list()
        current.append(_item(version[start:], is_digit))

    for items in reversed(stack):
        _normalize(items)
    return _freeze(root)


def _comparable_qualifier(value: str) -> str:
    try:
        return str(QUALIFIERS.index(value))
    except ValueError:
        return f"{len(QUALIFIERS)}-{value}"


def _sign(a, b) -> int:
    return (a > b) - (a < b)


def _compare_item(a: Item, b: Optional[Item]) -> int:
    if isinstance(a, int):
        if b is None:
            return 0 if a == 0 else 1
        if isinstance(b, int):
            return _sign(a, b)
        return 1
    if isinstance(a, str):
        if b is None:
            return _sign(_comparable_qualifier(a), _RELEASE_INDEX)
        if isinstance(b, int):
            return -1
        if isinstance(b, str):
            return _sign(_comparable_qualifier(a), _comparable_qualifier(b))
        return -1
    if b is None:
        for item in a:
            result = _compare_item(item, None)
            if result:
                return result
        return 0
    if isinstance(b, int):
        return -1
    if isinstance(b, str):
        return 1
    for i in range(max(len(a), len(b))):
        left = a[i] if i < len(a) else None
        right = b[i] if i < len(b) else None
        if left is None:
            result = 0 if right is None else -_compare_item(right, None)
        else:
            result = _compare_item(left, right)
        if result:
            return result
    return 0


def _has_unknown_qualifier(items: tuple) -> bool:
    for item in items:
        if isinstance(item, tuple):
            if _has_unknown_qualifier(item):
                return True
        elif isinstance(item, str) and item not in QUALIFIERS:
            return True
    return False


def _render(items: tuple) -> str:
    out: List[str] = []
    for index, item in enumerate(items):
        if isinstance(item, tuple):
            out.append("0-" if index == 0 else "-")
            out.append(_render(item))
        else:
            if index > 0:
                out.append(".")
            out.append("ga" if item == "" else str(item))
    return "".join(out)


@total_ordering
@dataclass(frozen=True, eq=False)
class VersionNumber:
    """A parsed Maven version; equality and hashing use the normalized items."""

    raw: str
    tokens: tuple = field(repr=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VersionNumber):
            return NotImplemented
        return self.tokens == other.tokens

    def __lt__(self, other: "VersionNumber") -> bool:
        if not isinstance(other, VersionNumber):
            return NotImplemented
        return _compare_item(self.tokens, other.tokens) < 0

    def __hash__(self) -> int:
        return hash(self.tokens)

    def __str__(self) -> str:
        return self.raw

    @property
    def needs_lexical_fallback(self) -> bool:
        """True when an unknown qualifier forces lexical ordering."""
        return _has_unknown_qualifier(self.tokens)

    def canonical(self) -> str:
        return canonical(self)


def parse_version(text: str) -> VersionNumber:
    """Parse version text; any printable input is accepted except blanks."""
    if text is None or not str(text).strip():
        raise EmptyVersion("version text is empty")
    raw = str(text).strip()
    return VersionNumber(raw, _parse_items(raw))


def compare_versions(a: VersionNumber, b: VersionNumber) -> int:
    """Return -1, 0 or 1."""
    return _compare_item(a.tokens, b.tokens)


def canonical(version: VersionNumber) -> str:
    """Normalized text form; parse_version(canonical(v)) == v."""
    return _render(version.tokens) if version.tokens else "0"


# ============================================================
# Version specs
# ============================================================


@dataclass(frozen=True)
class Interval:
    lower: Optional[VersionNumber]
    lower_closed: bool
    upper: Optional[VersionNumber]
    upper_closed: bool

    def contains(self, version: VersionNumber) -> bool:
        if self.lower is not None:
            c = compare_versions(version, self.lower)
            if c < 0 or (c == 0 and not self.lower_closed):
                return False
        if self.upper is not None:
            c = compare_versions(version, self.upper)
            if c > 0 or (c == 0 and not self.upper_closed):
                return False
        return True

    def __str__(self) -> str:
        if self.lower is not None and self.lower == self.upper:
            return f"[{self.lower}]"
        lower = str(self.lower) if self.lower is not None else ""
        upper = str(self.upper) if self.upper is not None else ""
        return f"{'[' if self.lower_closed else '('}{lower},{upper}{']' if self.upper_closed else ')'}"


@dataclass(frozen=True)
class SoftVersion:
    """A plain version pin; Maven treats it as the preferred version."""

    preferred: VersionNumber

    def contains(self, version: VersionNumber) -> bool:
        return version == self.preferred

    def __str__(self) -> str:
        return str(self.preferred)


@dataclass(frozen=True)
class RangeSet:
    """Union of sorted, non-overlapping intervals."""

    intervals: Tuple[Interval, ...]

    def contains(self, version: VersionNumber) -> bool:
        return any(interval.contains(version) for interval in self.intervals)

    @property
    def open_upper(self) -> bool:
        return bool(self.intervals) and self.intervals[-1].upper is None

    def members(self, universe: Iterable[VersionNumber]) -> List[VersionNumber]:
        return sorted(v for v in universe if self.contains(v))

    def highest_member(self, universe: Iterable[VersionNumber]) -> Optional[VersionNumber]:
        members = self.members(universe)
        return members[-1] if members else None

    def highest_bound(self) -> Optional[VersionNumber]:
        """Highest version written in the range that the range itself admits."""
        bounds = [b for i in self.intervals for b in (i.lower, i.upper) if b is not None and self.contains(b)]
        return max(bounds) if bounds else None

    def __str__(self) -> str:
        return ",".join(str(i) for i in self.intervals)


@dataclass(frozen=True)
class UnresolvedSpec:
    """Declaration whose version could not be determined (e.g. missing property)."""

    raw: str = ""

    def contains(self, version: VersionNumber) -> bool:
        return False

    def __str__(self) -> str:
        return self.raw


VersionSpec = Union[SoftVersion, RangeSet, UnresolvedSpec]


def _parse_interval(opening: str, inner: str, closing: str) -> Interval:
    lower_closed = opening == "["
    upper_closed = closing == "]"
    if "," not in inner:
        if not (lower_closed and upper_closed):
            raise MalformedRange(f"single version must be surrounded by []: {opening}{inner}{closing}")
        if not inner:
            raise MalformedRange("empty interval")
        pinned = parse_version(inner)
        return Interval(pinned, True, pinned, True)

    parts = inner.split(",")
    if len(parts) != 2:
        raise MalformedRange(f"interval has more than two bounds: {opening}{inner}{closing}")
    lower = parse_version(parts[0]) if parts[0] else None
    upper = parse_version(parts[1]) if parts[1] else None
    if lower is not None and upper is not None:
        c = compare_versions(lower, upper)
        if c > 0:
            raise MalformedRange(f"inverted bounds: {opening}{inner}{closing}")
        if c == 0 and not (lower_closed and upper_closed):
            raise MalformedRange(f"empty interval: {opening}{inner}{closing}")
    return Interval(lower, lower_closed and lower is not None, upper, upper_closed and upper is not None)


def _overlaps(first: Interval, second: Interval) -> bool:
    if first.upper is None or second.lower is None:
        return True
    c = compare_versions(first.upper, second.lower)
    return c > 0 or (c == 0 and first.upper_closed and second.lower_closed)


def _sorted_intervals(intervals: Sequence[Interval]) -> Tuple[Interval, ...]:
    def key(interval: Interval):
        return interval.lower

    bounded = sorted((i for i in intervals if i.lower is not None), key=key)
    unbounded = [i for i in intervals if i.lower is None]
    return tuple(unbounded + bounded)


def _joins(first: Interval, second: Interval) -> bool:
    if first.upper is None or second.lower is None:
        return True
    c = compare_versions(first.upper, second.lower)
    return c > 0 or (c == 0 and (first.upper_closed or second.lower_closed))


def _higher_upper(a: Interval, b: Interval) -> Tuple[Optional[VersionNumber], bool]:
    if a.upper is None or b.upper is None:
        return None, False
    c = compare_versions(a.upper, b.upper)
    if c > 0:
        return a.upper, a.upper_closed
    if c < 0:
        return b.upper, b.upper_closed
    return a.upper, a.upper_closed or b.upper_closed


def merge_intervals(intervals: Iterable[Interval]) -> RangeSet:
    """Union of possibly overlapping intervals as a normalized RangeSet."""
    merged: List[Interval] = []
    for interval in _sorted_intervals(list(intervals)):
        if merged and _joins(merged[-1], interval):
            last = merged[-1]
            lower_closed = last.lower_closed or (last.lower is not None and interval.lower == last.lower and interval.lower_closed)
            upper, upper_closed = _higher_upper(last, interval)
            merged[-1] = Interval(last.lower, lower_closed, upper, upper_closed)
        else:
            merged.append(interval)
    return RangeSet(tuple(merged))


def parse_version_spec(text: str) -> Union[SoftVersion, RangeSet]:
    """
    Parse a POM <version> value.

    A bare version is a soft pin; bracketed intervals, optionally joined by
    commas, form a RangeSet. Whitespace is ignored.
    """
    compact = "".join((text or "").split())
    if not compact:
        raise MalformedRange("version spec is empty")

    if compact[0] not in "[(":
        if any(c in compact for c in "[]()"):
            raise MalformedRange(f"unbalanced brackets: {text}")
        return SoftVersion(parse_version(compact))

    intervals: List[Interval] = []
    rest = compact
    while rest and rest[0] in "[(":
        positions = [p for p in (rest.find("]"), rest.find(")")) if p != -1]
        if not positions:
            raise MalformedRange(f"unbalanced brackets: {text}")
        close = min(positions)
        inner = rest[1:close]
        if "[" in inner or "(" in inner:
            raise MalformedRange(f"unbalanced brackets: {text}")
        intervals.append(_parse_interval(rest[0], inner, rest[close]))
        rest = rest[close + 1:]
        if rest.startswith(","):
            rest = rest[1:]
            if not rest:
                raise MalformedRange(f"trailing comma: {text}")
        elif rest:
            raise MalformedRange(f"restrictions must be separated by commas: {text}")
    if rest:
        raise MalformedRange(f"unexpected text after ranges: {rest}")

    ordered = _sorted_intervals(intervals)
    for first, second in zip(ordered, ordered[1:]):
        if _overlaps(first, second):
            raise MalformedRange(f"ranges overlap: {text}")
    return RangeSet(ordered)


def spec_contains(spec: VersionSpec, version: VersionNumber) -> bool:
    return spec.contains(version)


def _range_bound(version: VersionNumber) -> str:
    for candidate in (version.raw, canonical(version)):
        if not any(c in _UNSAFE_IN_RANGE for c in candidate):
            return candidate
    raise MalformedRange(f"version cannot be written inside a range: {version.raw!r}")


def synthesize_range(
    selected: Iterable[VersionNumber],
    universe: Iterable[VersionNumber],
    open_upper: bool = False,
) -> str:
    """
    Render the minimal union of closed intervals selecting exactly `selected` out of `universe`.

    With open_upper, the last interval drops its upper bound when it reaches
    the highest version of the universe.
    """
    chosen = set(selected)
    if not chosen:
        raise EmptySelection("no version selected")
    ordered = sorted(set(universe))
    outside = chosen - set(ordered)
    if outside:
        names = ", ".join(sorted(str(v) for v in outside))
        raise SelectionOutsideUniverse(f"selected versions not in universe: {names}")

    runs: List[List[VersionNumber]] = []
    current: List[VersionNumber] = []
    for version in ordered:
        if version in chosen:
            current.append(version)
        elif current:
            runs.append(current)
            current = []
    if current:
        runs.append(current)

    parts = []
    for index, run in enumerate(runs):
        low, high = _range_bound(run[0]), _range_bound(run[-1])
        if open_upper and index == len(runs) - 1 and run[-1] == ordered[-1]:
            parts.append(f"[{low},)")
        else:
            parts.append(f"[{low},{high}]")
    return ",".join(parts)
