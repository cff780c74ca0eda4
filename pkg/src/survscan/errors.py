"""Exception types raised by survscan.

Every error that corresponds to a violated input contract derives from
:class:`SurvscanError`, so callers (the CLI in particular) can separate
expected data problems from programming bugs.
"""

from __future__ import annotations


class SurvscanError(Exception):
    """Base class for all expected, data-related failures."""


class FormatError(SurvscanError):
    """A file does not conform to its declared format.

    ``location`` is the 1-based line number (text formats) or 0-based
    record index (binary formats) where parsing failed, when known.
    """

    def __init__(self, message: str, path=None, location: int | None = None):
        self.path = None if path is None else str(path)
        self.location = location
        parts = []
        if self.path is not None:
            parts.append(self.path)
        if location is not None:
            parts.append(f"line {location}")
        prefix = ":".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class InsufficientPointsError(SurvscanError):
    """Too few points for the requested operation."""


class DegenerateGeometryError(SurvscanError):
    """Input geometry is degenerate (collinear, coplanar, zero area...)."""


class NoOverlapError(SurvscanError):
    """Two datasets share no common extent."""


class TargetNotFoundError(SurvscanError):
    """Not enough points around an approximate target location."""


class ValidationError(SurvscanError):
    """A parameter or data value is outside its allowed domain."""
