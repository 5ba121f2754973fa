class ClassriskError(Exception):
    """Base class; ``category`` is the machine-readable tag the CLI reports."""

    category = "error"


class ConfigError(ClassriskError, ValueError):
    category = "config"


class DomainError(ClassriskError, ValueError):
    category = "domain"


class DegenerateInputError(ClassriskError, ValueError):
    category = "degenerate_input"


class StageError(ClassriskError):
    """A pipeline stage failed; keeps the stage name and the original category."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
        self.category = getattr(cause, "category", "io" if isinstance(cause, OSError) else "internal")
