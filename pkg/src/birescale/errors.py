"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its contract."""

    def __init__(self, op, message):
        super().__init__(f"{op}: {message}")
        self.op = op


class FormatError(ValueError):
    """A serialized model or image file could not be decoded."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedConfiguration(ValueError):
    """The requested combination of options is not supported."""
