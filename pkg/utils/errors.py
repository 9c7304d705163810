import scipy.linalg as la


class RepCapError(Exception):
    """Base class for every error raised by the capacity estimation code.

    `exit_code` is what the command line scripts return when the error reaches them.
    """
    exit_code = 3

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage

    def __str__(self):
        message = super().__str__()
        if self.stage is not None:
            return f"[{self.stage}] {message}"
        return message


class ValidationError(RepCapError, ValueError):
    exit_code = 2


class NumericalError(RepCapError, ArithmeticError):
    exit_code = 3


class InsufficientSamples(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class InvalidProbability(ValidationError):
    pass


class InvalidTargetDim(ValidationError):
    pass


class DegenerateVector(ValidationError):
    pass


class DegenerateHull(ValidationError):
    pass


class InsufficientClasses(ValidationError):
    pass


class NoUsableClasses(ValidationError):
    pass


class CheckpointError(ValidationError):
    pass


class NotPositiveDefinite(NumericalError, la.LinAlgError):
    pass


def tag_stage(err, stage):
    # keep the innermost stage if one is already set
    if isinstance(err, RepCapError) and err.stage is None:
        err.stage = stage
    return err
