"""Exception types shared across the package."""


class WindpostError(Exception):
    """Base class for errors reported by the command line as exit code 1."""


class DomainError(WindpostError, ValueError):
    """Argument outside the domain of a distribution function."""


class ConfigurationError(WindpostError, ValueError):
    pass


class ParseError(WindpostError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DataValidationError(WindpostError, ValueError):
    pass


class FoldSpecError(WindpostError, ValueError):
    pass


class TrainingDivergence(WindpostError, FloatingPointError):
    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None, member: int | None = None):
        self.epoch = epoch
        self.batch = batch
        self.member = member
        self.reason = message
        where = [f"{k} {v}" for k, v in (("member", member), ("epoch", epoch), ("batch", batch)) if v is not None]
        super().__init__(message + (f" ({', '.join(where)})" if where else ""))
