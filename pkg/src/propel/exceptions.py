class PropelError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(PropelError, ValueError):
    exit_code = 2


class DataError(PropelError, ValueError):
    exit_code = 3


class SolverError(PropelError, RuntimeError):
    exit_code = 4


class ExternalProcessError(SolverError):
    """The external solver could not be started or exited non-zero."""


class ExternalTimeoutError(SolverError):
    pass


class SolutionParseError(SolverError):
    pass


class CheckpointError(DataError):
    pass
