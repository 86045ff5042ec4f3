"""Exception types raised across the toolkit."""


class FlatRecError(Exception):
    """Base class for all toolkit errors."""


class InputError(FlatRecError, ValueError):
    """Malformed or inconsistent user-supplied data."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(FlatRecError, ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"config {key}: {message}")


class StageDependencyError(FlatRecError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"stage dependency missing: {name}")


class FormatError(FlatRecError):
    """A binary artifact could not be decoded."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    """Artifact decoded fine but disagrees with the expected K or dimensions."""
