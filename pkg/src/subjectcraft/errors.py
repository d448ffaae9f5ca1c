"""Exception types shared across the package.

Plain ``ValueError`` is used for ordinary invalid-argument cases; the classes
below exist where callers (notably the CLI exit-code mapping) need to tell
failure kinds apart.
"""


class ContainerFormatError(Exception):
    """A checkpoint or adapter file is malformed, truncated, or mislabeled."""


class IncompatibleModelError(Exception):
    """Stored adapters cannot be resolved against the given model."""


class NumericDivergenceError(RuntimeError):
    """Training or sampling produced a non-finite value."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
