"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's precondition (shape/state mismatch)."""


class NumericError(ValueError):
    """Non-finite values where finite numbers are required."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class SamplingError(ValueError):
    """A data sample could not be drawn (e.g. sequence too short)."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; carries a diagnostic dump."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
