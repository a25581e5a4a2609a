"""Exception types for file ingestion and checkpoint handling.

Argument errors in the numerical modules raise plain ``ValueError``; the
typed hierarchy below is reserved for anything that touches bytes on disk,
so callers (and the fuzz tests) can tell a malformed container apart from
a short read or a well-formed file with bad content.
"""


class ViewGraphError(Exception):
    """Base class for all library-specific errors."""


class FormatError(ViewGraphError):
    """Container structure is wrong: bad magic, version, or inconsistent layout."""


class DataIOError(ViewGraphError):
    """File could not be read in full (truncation, unreadable path)."""


class ValidationError(ViewGraphError):
    """Well-formed file whose content violates a dataset invariant."""
