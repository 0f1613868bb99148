"""Exception hierarchy shared by all jsqhw modules."""


class JSQError(Exception):
    """Base class for every error raised by this package."""


class InvalidParams(JSQError, ValueError):
    pass


class RepresentationOverflow(JSQError):
    """An arrival needed a queue longer than ``k_max`` allows."""


class GridOutOfRange(JSQError, ValueError):
    pass


class PreconditionViolation(JSQError, ValueError):
    pass


class NonConvergence(JSQError, RuntimeError):
    pass


class MismatchedInputs(JSQError, ValueError):
    pass


class EmptySample(JSQError, ValueError):
    pass


class ConfigError(JSQError, ValueError):
    """Bad experiment configuration. ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
