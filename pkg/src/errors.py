"""
Exception hierarchy shared by the simulator, the learning stack and the CLI.

Validation-class errors exit the CLI with code 1, runtime failures with 2.
"""


class EraLocError(Exception):
    """Base class for every error raised by this package."""
    exit_code = 2


class ConfigurationError(EraLocError):
    """Invalid configuration, resolution or dimension choice."""
    exit_code = 1


class DomainError(EraLocError):
    """Argument outside its mathematical domain (e.g. angles)."""
    exit_code = 1


class ShapeError(EraLocError):
    """Array or tensor shapes that do not agree."""
    exit_code = 1


class ConstraintError(EraLocError):
    """Sensing configuration violating a power or unit-norm constraint."""
    exit_code = 1


class DegenerateInputError(EraLocError):
    """Vector too close to zero to be projected onto the unit sphere."""
    exit_code = 2


class GenerationError(EraLocError):
    """Scene generation hit a degenerate geometry."""
    exit_code = 2


class StateError(EraLocError):
    """Operation called in the wrong lifecycle state."""
    exit_code = 2


class NonFiniteError(EraLocError):
    """NaN or Inf produced by a differentiable operation."""
    exit_code = 2


class TrainingDivergedError(EraLocError):
    """Loss became non-finite during training."""
    exit_code = 2


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(exc, EraLocError):
        return exc.exit_code
    # missing files and other runtime failures
    return 2
