"""Exception types; the CLI maps them onto exit codes."""


class JangLabError(Exception):
    pass


class DomainError(JangLabError, ValueError):
    """Input outside the supported domain (validation failure)."""


class DegenerateMetricError(JangLabError, ArithmeticError):
    pass


class NumericalError(JangLabError, ArithmeticError):
    """A numerical procedure failed to reach its accuracy target."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class BarrierFailure(NumericalError):
    pass


class ConvergenceError(NumericalError):
    """Nonlinear or linear solver failure; carries the last iterate."""

    def __init__(self, message, diagnostics=None, last=None):
        super().__init__(message, diagnostics)
        self.last = last


class PositivityError(NumericalError):
    pass
