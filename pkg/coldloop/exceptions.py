"""
Custom exceptions for the coldloop digital twin.

Usage:
    from coldloop.exceptions import ColdLoopError, FitError

    try:
        fit = fit_sideband_pair(s_rr, s_bb, mask)
    except FitError as e:
        logger.error("Sideband fit failed", extra={"code": e.code, "context": e.context})
"""

from __future__ import annotations

from typing import Any


class ColdLoopError(Exception):
    """
    Base exception for coldloop errors.

    Attributes:
        message: Human-readable error description
        code: Short machine-readable identifier (e.g. "POLE", "DIVERGED")
        context: Offending values (frequencies, bins, key paths, ...)
    """

    message: str
    code: str
    context: dict[str, Any]

    def __init__(
        self,
        message: str = "coldloop error occurred",
        code: str = "",
        context: dict[str, Any] | None = None,
    ) -> None:
        self.message = message
        self.code = code
        self.context = context or {}
        super().__init__(self.message)

    def __str__(self) -> str:
        if self.code:
            return f"[{self.code}] {self.message}"
        return self.message


class ConfigurationError(ColdLoopError):
    """
    Raised when an experiment configuration is invalid.

    This can occur when:
    - A key is unknown or has the wrong type
    - A physical quantity is out of range (negative mass, eta_d > 1, ...)
    - A referenced frequency lies outside the simulated band
    """

    pass


class InvalidParameterError(ColdLoopError):
    """
    Raised when a physical parameter set violates its invariants.

    Examples:
    - mass <= 0 or gamma_m >= omega_z
    - zero total decoherence
    - negative delay or non-positive filter cutoff
    """

    pass


class NumericalError(ColdLoopError):
    """Base class for numerical failures (CLI exit code 3)."""

    pass


class SingularityError(NumericalError):
    """Raised when a susceptibility is evaluated on its pole."""

    pass


class ResolutionError(NumericalError):
    """
    Raised when a frequency grid cannot support the requested computation.

    This occurs when the Nyquist locus jumps by more than a quarter turn
    between adjacent points, or when an energy integral needs a tail
    correction larger than its tolerance.
    """

    pass


class UnphysicalModelError(NumericalError):
    """Raised when a sideband/cross-spectral model is not positive semidefinite."""

    pass


class LowSignalError(NumericalError):
    """Raised when a carrier or calibration tone is too weak to define a phase."""

    pass


class SegmentationError(NumericalError):
    """Raised when postselection cannot cut the requested windows."""

    pass


class FitError(NumericalError):
    """
    Raised when a spectral fit fails.

    This occurs on optimizer nonconvergence, empty fit bands after masking,
    or when the data cannot seed initial guesses.
    """

    pass


class UnstableLoopError(NumericalError):
    """Raised when the Nyquist check rejects a feedback configuration."""

    pass


class DivergenceError(NumericalError):
    """Raised when a time-domain simulation grows without bound."""

    pass


class DataFormatError(ColdLoopError):
    """Raised when a CSV or key/value file cannot be parsed."""

    pass


class ReportIOError(ColdLoopError):
    """Raised when report files cannot be written."""

    pass
