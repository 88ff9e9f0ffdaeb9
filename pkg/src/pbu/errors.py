"""Exception hierarchy shared by every module.

The CLI maps :class:`DivergenceError` to exit code 2 and every other
:class:`PBUError` to exit code 1.
"""


class PBUError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PBUError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(PBUError, ValueError):
    """A documented precondition was violated."""


class ParseError(PBUError, ValueError):
    """A file could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedVersionError(ParseError):
    pass


class IntegrityError(PBUError, ValueError):
    """File contents parse but are mutually inconsistent."""


class CapacityError(PBUError, MemoryError):
    pass


class ContaminationError(ContractError):
    """A retain-only dataset contains an example of the forget class."""


class ProbeError(PBUError, ArithmeticError):
    """Finite-difference probe produced a non-finite loss."""

    def __init__(self, message, coordinate):
        self.coordinate = coordinate
        super().__init__(message)


class DivergenceError(PBUError, ArithmeticError):
    """Optimization produced a non-finite or runaway loss."""


class TrainingError(DivergenceError):
    def __init__(self, message, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
