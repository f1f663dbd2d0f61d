"""Exception taxonomy shared across the package."""


class ConfigurationError(ValueError):
    """Invalid user-supplied parameter or config block; message names the field."""


class UnsupportedFeatureError(ConfigurationError):
    """Request for a feature outside the supported product set."""


class DomainError(ValueError):
    """Mathematical domain violation (e.g. non-positive variance rate)."""


class ContractViolationError(RuntimeError):
    """Caller broke an internal precondition (state/kind mismatch)."""


class SolverError(RuntimeError):
    """Numerical solve failed to converge; carries the worst residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
