"""Exception hierarchy. Each class carries the process exit code the CLI uses."""


class AggrEError(Exception):
    exit_code = 1


class ConfigurationError(AggrEError):
    exit_code = 2


class DataError(AggrEError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, path, line_number, message):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{self.path}:{line_number}: {message}")


class NumericalError(AggrEError):
    exit_code = 4

    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if batch is not None:
            where.append(f"batch {batch}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class CheckpointFormatError(AggrEError):
    exit_code = 5


class StorageError(AggrEError):
    exit_code = 5


class LookupFailure(AggrEError, KeyError):
    exit_code = 3

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ContractViolation(AggrEError, ValueError):
    """Shape, length or id-range precondition broken by a caller."""
