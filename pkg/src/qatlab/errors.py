"""Exception and warning types raised across the package."""


class QatError(Exception):
    """Base class for all package errors."""


class NonFiniteCoefficient(QatError):
    pass


class IntegrationFailure(QatError):
    pass


class QuadratureFailure(QatError):
    pass


class GridMismatch(QatError):
    pass


class OutsideWindow(QatError):
    pass


class TimeNotInImage(QatError):
    pass


class InsufficientSamples(QatError):
    pass


class ForcedNotSupported(QatError):
    pass


class NotUnimodular(QatError):
    pass


class ComplexOmegaTilde(QatError):
    pass


class RealOmegaTilde(QatError):
    pass


class AccuracyLoss(QatError):
    pass


class SolverDivergence(QatError):
    pass


class UnknownPreset(QatError, KeyError):
    pass


class ConfigParse(QatError):
    """Config error carrying the 1-based line and column of the offending token."""

    def __init__(self, message, line=None, column=None, path=None):
        self.message = message
        self.line = line
        self.column = column
        self.path = path
        where = ""
        if line is not None:
            where = f"{path or '<config>'}:{line}:{column or 1}: "
        super().__init__(where + message)


class SupportOverflow(UserWarning):
    """Wavefunction mass is reaching the edge of the periodic box."""


class WindowClipped(UserWarning):
    """Requested time range was clipped at a zero of u2."""
