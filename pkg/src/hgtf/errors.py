"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, DataError
(and subclasses) exit 2, NumericalError and DomainError exit 3.
"""


class DataError(ValueError):
    """Bad input data: malformed files, out-of-range indices, empty inputs."""


class ParseError(DataError):
    """A line of an entry file could not be parsed; carries the line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class CapacityError(DataError):
    """A sampling request exceeds what the index space can provide."""


class DomainError(ValueError):
    """A density was evaluated outside its mathematical domain."""


class NumericalError(RuntimeError):
    """Training produced a non-finite quantity; may carry a parameter snapshot."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
