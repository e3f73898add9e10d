"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, InfeasibleBudgetError -> 3,
I/O problems (OSError) -> 4. Everything else is a plain crash.
"""


class A3dError(Exception):
    """Base class for package errors."""


class ConfigError(A3dError):
    """Invalid configuration, range, architecture or CLI argument."""


class UncalibratedConfigError(A3dError):
    """Evaluation requested at a configuration with no calibrated BN statistics."""

    def __init__(self, key, layer=None):
        self.key = key
        self.layer = layer
        where = f" (layer {layer})" if layer else ""
        super().__init__(
            f"no calibrated statistics for configuration {key}{where}; "
            f"run calibration for this configuration first"
        )


class InfeasibleBudgetError(A3dError):
    """No table entry fits under the requested compute budget."""


class TrainingDivergedError(A3dError):
    """Loss became non-finite during training."""
