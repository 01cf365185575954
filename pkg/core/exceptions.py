"""Exception hierarchy shared by every stochham module."""
from typing import Any, Optional


class StochHamError(Exception):
    """Base class for errors raised by stochham."""


class DimensionMismatchError(StochHamError, ValueError):
    """An array does not have the dimension its structure requires."""

    def __init__(self, what: str, expected: Any, actual: Any):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected dimension {expected}, got {actual}")


class GridMismatchError(StochHamError, ValueError):
    """Two paths that must share a time grid do not."""

    def __init__(self, message: str, expected: Optional[int] = None, actual: Optional[int] = None):
        self.expected = expected
        self.actual = actual
        super().__init__(message)


class ConfigurationError(StochHamError, ValueError):
    """Invalid parameters, configuration values or preconditions on inputs."""


class NonFiniteStateError(StochHamError, ArithmeticError):
    """A step produced a non-finite state; treated as an explosion signal."""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        super().__init__(message)


class PreconditionError(StochHamError):
    """A check was asked to run on inputs that violate its hypotheses."""


class AllPathsExplodedError(StochHamError):
    """No non-exploded path is left to estimate from."""


class ResourceLimitError(StochHamError):
    """A run would exceed a configured resource cap."""


class NoClosedFormError(StochHamError):
    """The requested system has no closed-form reference solution."""


class UnknownSystemError(StochHamError, KeyError):
    """The requested system is not in the catalog."""

    def __init__(self, name: str, known: Any = ()):
        self.name = name
        self.known = tuple(known)
        super().__init__(f"unknown system '{name}'; known systems: {', '.join(self.known)}")

    def __str__(self) -> str:
        return self.args[0]
