"""Typed failures shared across the package."""


class KfpBenchError(Exception):
    """Base class for all package errors."""


class ValidationError(KfpBenchError, ValueError):
    """Bad input: inadmissible parameter, malformed config, rejected policy."""


class TruncationError(KfpBenchError):
    """A truncated representation does not resolve the requested object."""

    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect


class HypothesisViolation(ValidationError):
    """A boundary operator fails accretivity or parity commutation."""


class OutsideContractionClass(ValidationError):
    """Boundary kernel whose Cayley map is not a strict contraction."""


class NonStochasticPolicy(ValidationError):
    """Boundary condition without a jump-process interpretation."""


class NumericalFailure(KfpBenchError):
    """Solver breakdown or a certificate above tolerance."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value
