class NumericalError(RuntimeError):
    """A factorization, variance or tuning failure."""


class EstimationError(RuntimeError):
    """A value estimator cannot produce an estimate (e.g. no consistent units)."""


class ConvergenceError(RuntimeError):
    """MCMC diagnostics failed their gates."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
