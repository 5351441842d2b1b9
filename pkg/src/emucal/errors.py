"""Exception types shared across the package."""


class EmucalError(Exception):
    """Base class for package-specific failures."""


class EmptyDomainError(EmucalError, ValueError):
    """A field has no unmasked cells to operate on."""


class ConfigError(EmucalError, ValueError):
    """A run configuration is invalid; message names the offending key."""


class FitError(EmucalError, RuntimeError):
    """Hyperparameter optimization failed on every restart.

    Carries the best value found so the caller can inspect how close the
    optimizer got.
    """

    def __init__(self, message, best_params=None, best_value=None, diagnostics=None):
        super().__init__(message)
        self.best_params = best_params
        self.best_value = best_value
        self.diagnostics = diagnostics or {}


class NumericalError(EmucalError, RuntimeError):
    """A numerical operation produced an unusable result (singular or non-PD
    covariance, degenerate chain, ...)."""
