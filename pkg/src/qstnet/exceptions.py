"""Exception hierarchy shared across the package."""


class QSTError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(QSTError, ValueError):
    pass


class InvalidParameterError(QSTError, ValueError):
    pass


class CutoffError(QSTError, ValueError):
    """A requested Fock level does not fit inside the truncated space."""


class NotPSDError(QSTError, ValueError):
    pass


class DegenerateStateError(QSTError, ValueError):
    """Normalisation failed because the (projected) norm or trace vanished."""


class MissingCoefficientError(QSTError, KeyError):
    pass


class SamplingError(QSTError, RuntimeError):
    pass


class NearSingularError(QSTError, ValueError):
    """Split-layer trace too close to zero to normalise."""


class ProjectionError(QSTError, ValueError):
    pass


class IllConditionedError(QSTError, RuntimeError):
    pass


class LikelihoodUnderflowError(QSTError, FloatingPointError):
    pass


class DivergenceError(QSTError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ShapeError(QSTError, ValueError):
    pass


class DatasetCorruptionError(QSTError, IOError):
    pass


class UnsupportedFormatError(QSTError, IOError):
    pass


class DatasetConsistencyError(QSTError, ValueError):
    pass


class StratificationError(QSTError, ValueError):
    pass


class CheckpointError(QSTError, ValueError):
    pass
