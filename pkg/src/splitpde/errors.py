class SplitPDEError(Exception):
    pass


class ConfigurationError(SplitPDEError, ValueError):
    """Invalid parameters or configuration values."""


class InputError(SplitPDEError, ValueError):
    """Bad data handed to an otherwise valid operation (e.g. non-finite samples)."""


class SolverFailure(SplitPDEError, RuntimeError):
    """An iterative solver did not reach its tolerance.

    ``residual`` carries the best value achieved.
    """

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class StagnationError(SolverFailure):
    pass
