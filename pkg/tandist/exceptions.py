from __future__ import annotations


class TandistException(Exception):
    """TandistException"""


class ConfigurationError(TandistException):
    """ConfigurationError"""


class NumericalError(TandistException):
    """NumericalError"""


class DegenerateGeometryError(NumericalError):
    """DegenerateGeometryError"""


class RankDeficientMetricError(NumericalError):
    """RankDeficientMetricError"""


class WindowTooSmallError(NumericalError):
    """WindowTooSmallError"""


class CalibrationError(NumericalError):
    """CalibrationError"""


class IllPosedBankError(NumericalError):
    """IllPosedBankError"""


class ClassificationError(NumericalError):
    """ClassificationError"""


class PGMParseError(TandistException):
    """PGMParseError"""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TandistWarning(UserWarning):
    """TandistWarning"""


class BoundaryProjectionWarning(TandistWarning):
    """BoundaryProjectionWarning"""


class ConditioningWarning(TandistWarning):
    """ConditioningWarning"""


class OutOfDomainWarning(TandistWarning):
    """OutOfDomainWarning"""


class VacuousBoundWarning(TandistWarning):
    """VacuousBoundWarning"""
