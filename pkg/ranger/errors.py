"""
Exception hierarchy for ranger.
Every domain failure raised by the library derives from RangerError.
"""
from typing import Optional


class RangerError(Exception):
    """Base class for all domain errors."""


# Versions and ranges

class EmptyVersion(RangerError, ValueError):
    """Blank version text."""


class MalformedRange(RangerError, ValueError):
    """Range text with unbalanced brackets, empty or inverted intervals."""


class EmptySelection(RangerError, ValueError):
    """synthesize_range called without any selected version."""


class SelectionOutsideUniverse(RangerError, ValueError):
    """synthesize_range called with versions missing from the universe."""


# Corpus ingestion

class SchemaError(RangerError, ValueError):
    """Input record does not follow the documented schema."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnorderedEvents(RangerError, ValueError):
    """Vulnerability range whose fix precedes its introduction."""


class XmlError(RangerError, ValueError):
    """POM document is not well-formed XML."""


class MissingCoordinates(RangerError, ValueError):
    """Dependency declaration without groupId or artifactId."""


# Files

class IoError(RangerError, OSError):
    """Output or input file cannot be read or written."""


# Graph and snapshots

class SnapshotError(IoError):
    """Snapshot file cannot be read or written."""


class VersionMismatch(SnapshotError):
    """Snapshot container has an unknown format version or is corrupt."""


class NoSuchEdge(RangerError, KeyError):
    """Release does not declare a dependency on the target library."""


class NoSuchRelease(RangerError, KeyError):
    """Release is not part of the graph."""


class UnknownVulnerability(RangerError, KeyError):
    """Vulnerability id is not part of the graph."""


# Analytics

class NoReleaseBefore(RangerError, ValueError):
    """Library has no release dated on or before the evaluation date."""


class NotDownstream(RangerError, ValueError):
    """Library never had an affected release up to the evaluation date."""


class EmptySeries(RangerError, ValueError):
    """Metric requested on a series without points."""


class MissingReleaseDates(RangerError, ValueError):
    """Release dates needed for cause classification are absent."""


# Restoration

class MissingSurface(RangerError, KeyError):
    """No API surface is available for a release."""


class HookSpawnError(RangerError, OSError):
    """Validation hook command could not be started."""


class RewriteError(RangerError, ValueError):
    """POM rewrite target could not be located."""


# Configuration

class ConfigError(RangerError, ValueError):
    """Invalid configuration value."""
