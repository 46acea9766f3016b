"""Exception hierarchy shared by the library and the command line."""


class SohLabError(Exception):
    """Base class for all library errors."""


class DomainError(SohLabError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigurationError(SohLabError, ValueError):
    """Run parameters are inconsistent (e.g. a stability bound is violated)."""


class SolverError(SohLabError, RuntimeError):
    """A numerical solve failed or produced an invalid state."""


class StepRejected(SolverError):
    """A time step produced an invalid state; the caller may retry with a smaller dt."""
