"""Exception types shared across the package.

Each class carries the process exit code the command-line driver maps it to,
so library failures surface with stable, scriptable codes.
"""


class DidsnmmError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(DidsnmmError):
    """A model/nuisance/CLI configuration is malformed or unsupported."""

    exit_code = 2


class DataError(DidsnmmError):
    """Input panel data violates the schema (shape, types, missing cells)."""

    exit_code = 3


class EstimationError(DidsnmmError):
    """Estimation failed: singular system, non-convergence, separation, overflow."""

    exit_code = 4


class VerificationError(DidsnmmError):
    """An acceptance-battery check failed."""

    exit_code = 5
