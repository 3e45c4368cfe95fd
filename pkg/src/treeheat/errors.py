"""Exception hierarchy shared by all treeheat modules."""


class TreeHeatError(Exception):
    """Base class for every error raised by this package."""


class DomainError(TreeHeatError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class HorizonError(DomainError):
    """A radius beyond the explicitly represented part of a tree was requested."""


class TruncationError(TreeHeatError):
    """The solver truncation radius is too small for the requested evaluation."""


class NodeBudgetError(TreeHeatError):
    """A full-graph discretization would exceed its node budget."""


class PreconditionError(TreeHeatError):
    """A hypothesis required by a verification (e.g. doubling) does not hold."""


class ConfigError(TreeHeatError):
    """A configuration file could not be parsed or validated."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column or 1}: {message}"
        super().__init__(message)
