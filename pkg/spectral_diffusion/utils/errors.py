"""Exception taxonomy shared by the models and the command line."""


class ConfigurationError(ValueError):
    """A parameter, flag or config value is out of its valid range."""


class UsageError(ValueError):
    """An operation was called with arguments that violate its contract."""


class ValidationError(ValueError):
    """Input data failed a consistency check (symmetry, shapes)."""


class SingularScheduleError(ValueError):
    """The noise schedule cannot be inverted at the requested step."""


class CheckpointError(ValueError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or a malformed header."""


class CheckpointTruncatedError(CheckpointError):
    """File length disagrees with the header-declared payload."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class CheckpointReadError(CheckpointError):
    """Checkpoint file is missing or cannot be read."""


class NonFiniteGradientError(RuntimeError):
    """An optimizer step saw a NaN or infinite gradient."""

    def __init__(self, name: str):
        super().__init__(f"Non-finite gradient for parameter '{name}'")
        self.name = name


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, breakdown):
        super().__init__(f"Non-finite loss at step {step}: {breakdown}")
        self.step = step
        self.breakdown = breakdown
