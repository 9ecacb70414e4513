"""Exception hierarchy for the thermocloud pipeline.

Every recoverable failure raised by this package derives from
:class:`ThermocloudError`, split into three families that the CLI maps to
exit codes: parse errors (malformed input files), geometry errors
(numerically or combinatorially degenerate configurations) and plain I/O
problems (surfaced as the builtin ``OSError``).
"""


class ThermocloudError(Exception):
    """Base class for all errors raised by this package."""


# --- input file parsing ---------------------------------------------------

class ParseError(ThermocloudError):
    """An input stream violates its format's grammar."""


class BadHeader(ParseError):
    """The stream does not start with the expected magic token."""


class TruncatedFile(ParseError):
    """The stream ended in the middle of a declared record."""


class MalformedNumber(ParseError):
    """A token could not be read as a number of the required kind."""


class IndexOutOfRange(ParseError):
    """A record references an entity index that does not exist."""


class UnsupportedFormat(ParseError):
    """The file is valid but uses a variant this package does not read."""


class MissingProperty(ParseError):
    """A required per-record field is absent from the file's schema."""


class CountMismatch(ParseError):
    """A declared record count disagrees with the records present."""


# --- geometry / estimation ------------------------------------------------

class GeometryError(ThermocloudError):
    """A geometric computation cannot proceed on the given data."""


class NoConvergence(GeometryError):
    """An iterative solve failed to reach its residual tolerance."""


class DegenerateConfiguration(GeometryError):
    """Point configuration is rank-deficient (e.g. collinear corners)."""


class InsufficientViews(GeometryError):
    """Fewer board views than the solve requires."""


class IllConditioned(GeometryError):
    """The linear calibration system does not determine the parameters."""


class NoCommonViews(GeometryError):
    """Two cameras share no board view, so their relative pose is unknown."""


class NoPairs(GeometryError):
    """The stereo filename patterns matched no left/right camera pairs."""


class AllDegenerate(GeometryError):
    """Every stereo pair has a near-zero estimated baseline."""
