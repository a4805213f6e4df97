"""
Errors Module for Amplab
Exception hierarchy shared by the numerical modules and the command line
"""


class AmplabError(Exception):
    """Base class for every error raised by Amplab"""


class DomainError(AmplabError, ValueError):
    """An argument lies outside the domain of an operation (p < 1, u <= 0, n < 2, ...)"""


class PreconditionError(DomainError):
    """A stated precondition of an operation is false for the given input"""


class ValidationError(AmplabError, ValueError):
    """A builder rejected its input (Metzler pattern, irreducibility, DtN bound, shift)"""


class SolverError(AmplabError, RuntimeError):
    """A numerical solve or iteration failed"""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SpectrumError(SolverError):
    """The requested point lies in the numerical spectrum"""

    def __init__(self, message, lam=None, condition=None):
        super().__init__(message)
        self.lam = lam
        self.condition = condition


class NoSpectralBoundError(SolverError):
    """The eigenvalue of maximal real part is not real"""


class FitError(AmplabError):
    """A scaling fit failed to show the expected power law"""

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table if table is not None else []


class NumericalRankError(AmplabError):
    """A rank decision could not be made"""


class ConfigError(AmplabError):
    """Configuration file or command line problem"""
