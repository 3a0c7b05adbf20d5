"""Exception hierarchy shared across the package.

Two classes of failure are distinguished because the CLI maps them to
different exit codes: violated preconditions / malformed inputs (exit 2)
and numerical failures such as an unverifiable certificate or an
exhausted search (exit 3).
"""


class InflateLabError(Exception):
    """Base class for all errors raised by this package."""


class PreconditionError(InflateLabError, ValueError):
    """An operation was called outside its contract (bad shapes, ranges...)."""


class DimensionMismatch(PreconditionError):
    """Vector or matrix dimensions do not agree with the attached norms."""


class NumericalFailure(InflateLabError, RuntimeError):
    """A numerical procedure failed: degenerate map, failed search,
    certificate that does not verify, resolution guard tripped."""
