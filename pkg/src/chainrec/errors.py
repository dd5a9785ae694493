"""Exception hierarchy shared by every stage of the toolkit.

Each error may carry the pipeline ``stage`` and the ``entity`` (box id, class id,
orbit index, ...) it concerns, so CLI reports can say where a run failed.
"""

from __future__ import annotations


class ChainrecError(Exception):
    exit_code = 1

    def __init__(self, message: str, *, stage: str | None = None, entity=None):
        super().__init__(message)
        self.stage = stage
        self.entity = entity

    def __str__(self) -> str:
        msg = super().__str__()
        where = []
        if self.stage is not None:
            where.append(f"stage={self.stage}")
        if self.entity is not None:
            where.append(f"entity={self.entity}")
        return f"{msg} [{', '.join(where)}]" if where else msg


class ConfigError(ChainrecError, ValueError):
    exit_code = 2


class DomainError(ChainrecError, ValueError):
    """A point or index lies outside the ambient space or grid."""

    exit_code = 2


class NumericalError(ChainrecError, ArithmeticError):
    exit_code = 3


class NoConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float, **kw):
        super().__init__(message, **kw)
        self.residual = residual


class DegenerateClosingError(NumericalError):
    """``Df^tau - I`` is singular: eigenvalue one along the orbit."""


class InconsistencyError(NumericalError):
    """An internal post-condition check failed."""


class BudgetExceededError(ChainrecError):
    exit_code = 4
