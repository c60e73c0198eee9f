"""Exception types shared across the toolkit.

Refutations are ordinary results, never exceptions; everything here signals
that a question could not be answered at all (bad input, exhausted budget,
model outside the supported fragment).
"""


class QbisimError(Exception):
    """Base class for all toolkit errors."""


class ParseError(QbisimError):
    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, column {col})"
        super().__init__(message)


class WellFormednessError(QbisimError):
    """Process violates the static quantum-variable discipline."""


class EvaluationError(QbisimError):
    """Classical expression could not be evaluated to a value."""


class UnknownOperationError(QbisimError):
    """Named super-operator or measurement is not in the registry."""


class ChannelDomainError(QbisimError):
    """Unrestricted classical input on a channel with no declared finite domain."""


class QuantumInputFragmentError(QbisimError):
    """Operation requires a quantum-input-free process."""


class CyclicModelError(QbisimError):
    """Operation requires an acyclic transition graph."""


class BudgetExceededError(QbisimError):
    """Search exceeded a configured budget; distinct from a refutation."""

    def __init__(self, message, budget=None):
        self.budget = budget
        super().__init__(message)


class ConfluenceError(QbisimError):
    """Tau-scheduling order changed an answer that must be schedule-independent."""


class ConvergenceError(QbisimError):
    """Iterative numerical routine failed to converge."""
