"""Error classes shared across the package.

Each class maps to a distinct CLI exit code so scripted callers can tell
input problems from numeric failures without parsing stderr.
"""


class PropcalError(Exception):
    """Base class for package errors."""


class ParseError(PropcalError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


class ConfigError(PropcalError):
    """Invalid or missing configuration (tables, caches, flag combinations)."""


class NumericError(PropcalError):
    """A numeric routine failed to converge; carries diagnostics when possible."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class DegenerateInputError(PropcalError):
    """Input is structurally valid but carries no usable information."""
