"""Exception types raised by the simulator."""


class NeuromeshError(Exception):
    """Base class for all simulator errors."""


class ConfigSyntaxError(NeuromeshError):
    """A config or network document is not well-formed JSON."""

    def __init__(self, message: str, line: int, column: int, source: str | None = None):
        self.line = line
        self.column = column
        self.source = source
        where = f"{source}:" if source else ""
        super().__init__(f"{where}{line}:{column}: {message}")


class ValidationError(NeuromeshError):
    """A document parsed but violates an invariant of the data model."""


class CapacityError(NeuromeshError):
    """The network does not fit the machine, or a routing table overflows."""


class DomainError(NeuromeshError, ValueError):
    """An accelerator received an input outside its supported domain."""
