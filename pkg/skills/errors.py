"""
skills/errors.py — exception hierarchy shared by every skill.

ValidationError subclasses signal bad input (CLI exit code 2).
NumericalError subclasses signal a computation that could not meet its
tolerance (CLI exit code 3).
"""

from __future__ import annotations


class LabError(Exception):
    """Base class for all rydberg-cft-lab errors."""


class ValidationError(LabError, ValueError):
    pass


class NumericalError(LabError, RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Input errors
# ---------------------------------------------------------------------------


class BasisSizeError(ValidationError):
    pass


class SiteRangeError(ValidationError):
    pass


class DomainError(ValidationError):
    """Parameter outside its mathematical domain (eta, V1 = 0, readout for even L...)."""


class MissingVectorsError(ValidationError):
    pass


class IllegalBoundaryError(ValidationError):
    pass


# ---------------------------------------------------------------------------
# Numerical failures
# ---------------------------------------------------------------------------


class ConvergenceError(NumericalError):
    pass


class StepSizeError(NumericalError):
    pass


class NormDriftError(NumericalError):
    pass


class TruncationError(NumericalError):
    """Thermal sum needs more eigenstates than were computed."""


class NoCrossingError(NumericalError):
    pass


class FitError(NumericalError):
    pass


class SingularCovarianceError(FitError):
    pass


class NoDominantFrequencyError(FitError):
    pass
