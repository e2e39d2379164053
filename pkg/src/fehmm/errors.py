"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FEHMMError(Exception):
    exit_code = 1


class ConfigError(FEHMMError, ValueError):
    exit_code = 2


class ScenarioError(ConfigError):
    """Coefficient data violating the structural assumptions (PD, PSD, bounds)."""


class NumericalError(FEHMMError, RuntimeError):
    exit_code = 3


class InvariantViolation(FEHMMError, AssertionError):
    exit_code = 4


class DegenerateFitError(FEHMMError, ValueError):
    """Raised by rate fits when some error is exactly zero (or negative)."""

    exit_code = 3
