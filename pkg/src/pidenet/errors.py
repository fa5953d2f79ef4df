"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A caller passed arguments that violate an operation's precondition."""


class ModelError(ValueError):
    """A model specification cannot be constructed as requested."""


class NumericFailure(RuntimeError):
    """A simulated state left the finite range (NaN, inf or runaway norm)."""

    def __init__(self, message, step=None, row=None):
        super().__init__(message)
        self.step = step
        self.row = row


class LoadError(ValueError):
    """A serialized artifact could not be read back."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ValueError):
    """A study configuration is invalid; carries the offending path and field."""

    def __init__(self, message, path=None, field=None):
        where = ", ".join(s for s in (
            f"file {path}" if path else "",
            f"field '{field}'" if field else "") if s)
        super().__init__(f"{message} [{where}]" if where else message)
        self.path = path
        self.field = field


class SelectionFailure(RuntimeError):
    """No candidate realization set passed the acceptance test."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
