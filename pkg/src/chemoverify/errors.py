"""Exception hierarchy shared across the solver and the verification harness."""
from __future__ import annotations


class ChemoverifyError(Exception):
    """Base class for all errors raised by this package."""


class GridError(ChemoverifyError, ValueError):
    pass


class MotilityError(ChemoverifyError, ValueError):
    """Invalid motility preset or parameters."""


class NoSStarFound(ChemoverifyError):
    """The expanding-interval search for s* reached its cap without success."""


class QuadratureFailure(ChemoverifyError):
    pass


class NonConvergence(ChemoverifyError):
    """Iterative elliptic solve hit its iteration cap."""


class GridTooLarge(ChemoverifyError):
    pass


class ZeroMass(ChemoverifyError, ValueError):
    pass


class Negativity(ChemoverifyError, ValueError):
    pass


class DtUnderflow(ChemoverifyError):
    """The stable time step dropped below the configured minimum."""


class SchemeFailure(ChemoverifyError):
    """The explicit update produced negativity beyond roundoff."""


class HypothesisNotMet(ChemoverifyError):
    """A structural hypothesis on gamma failed on the data-dependent interval."""


class ConfigError(ChemoverifyError, ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
