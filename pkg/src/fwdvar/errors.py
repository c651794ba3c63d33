"""Exception hierarchy.

Each error class carries the CLI exit code it maps to.
"""


class FwdVarError(Exception):
    exit_code = 1


class ConfigError(FwdVarError, ValueError):
    exit_code = 2


class DataError(FwdVarError, ValueError):
    exit_code = 3


class SurfaceFormatError(DataError):
    pass


class IngestError(DataError):
    pass


class NumericalError(FwdVarError, ArithmeticError):
    exit_code = 4


class KernelEvaluationError(NumericalError):
    pass


class EstimationError(NumericalError):
    pass


class InferenceError(NumericalError):
    """Raised when the plug-in covariance cannot be formed.

    ``matrix`` holds the offending matrix (usually B-hat) for diagnostics.
    """

    def __init__(self, message, matrix=None):
        super().__init__(message)
        self.matrix = matrix
