"""Shared exception types."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class ParseError(ValueError):
    """A geometry or image file could not be parsed.

    Always carries the offending path in the message.
    """


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization.

    The message names the epoch and step at which divergence was detected.
    """
