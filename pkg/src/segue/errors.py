"""Exception hierarchy. CLI exit codes are attached to the classes."""


class SegueError(Exception):
    exit_code = 1


class ConfigError(SegueError, ValueError):
    exit_code = 2

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ManifestError(ConfigError):
    """Manifest fails schema validation (bad label, missing field, ...)."""


class DimensionError(SegueError, ValueError):
    exit_code = 2


class EncodingError(SegueError, ValueError):
    exit_code = 2


class ArgumentError(SegueError, ValueError):
    exit_code = 2


class NonFiniteLossError(SegueError, RuntimeError):
    exit_code = 3

    def __init__(self, message, step=None, value=None):
        super().__init__(message)
        self.step = step
        self.value = value


class BudgetViolation(SegueError, RuntimeError):
    exit_code = 3


class DatasetIOError(SegueError, OSError):
    exit_code = 4

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class CheckpointError(SegueError, OSError):
    exit_code = 4


class IncompatibleCheckpointError(CheckpointError):
    pass
