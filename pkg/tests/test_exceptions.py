"""
Tests for coldloop exceptions.

Tests for:
- Message formatting with and without codes
- Context defaults
- Hierarchy used by the command line exit codes
"""

import pytest

from coldloop.exceptions import (
    ColdLoopError,
    ConfigurationError,
    DataFormatError,
    DivergenceError,
    FitError,
    InvalidParameterError,
    LowSignalError,
    NumericalError,
    ReportIOError,
    ResolutionError,
    SegmentationError,
    SingularityError,
    UnphysicalModelError,
    UnstableLoopError,
)


class TestColdLoopError:
    """Test the base exception."""

    def test_str_with_code(self):
        error = ColdLoopError("simulation diverged", code="DIVERGED")
        assert str(error) == "[DIVERGED] simulation diverged"

    def test_str_without_code(self):
        assert str(ColdLoopError("plain")) == "plain"

    def test_defaults(self):
        error = ColdLoopError()
        assert error.message == "coldloop error occurred"
        assert error.code == ""
        assert error.context == {}

    def test_context_kept(self):
        error = ConfigurationError("bad key", code="UNKNOWN_KEY", context={"key": "budget.x"})
        assert error.context == {"key": "budget.x"}

    def test_catchable_by_match(self):
        with pytest.raises(ColdLoopError, match=r"\[POLE\] susceptibility pole"):
            raise SingularityError("susceptibility pole", code="POLE")


class TestHierarchy:
    """Test which failures count as numerical."""

    @pytest.mark.parametrize(
        "cls",
        [
            SingularityError,
            ResolutionError,
            UnphysicalModelError,
            LowSignalError,
            SegmentationError,
            FitError,
            UnstableLoopError,
            DivergenceError,
        ],
    )
    def test_numerical(self, cls):
        assert issubclass(cls, NumericalError)
        assert issubclass(cls, ColdLoopError)

    @pytest.mark.parametrize("cls", [ConfigurationError, InvalidParameterError, DataFormatError, ReportIOError])
    def test_not_numerical(self, cls):
        assert issubclass(cls, ColdLoopError)
        assert not issubclass(cls, NumericalError)
