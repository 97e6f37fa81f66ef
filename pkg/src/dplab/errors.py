"""Shared exception types."""


class ContractViolation(ValueError):
    """An argument or a state violates a documented precondition."""


class ConfigError(ValueError):
    """An experiment config document failed validation; message names the key."""


class IdxFormatError(ValueError):
    """An IDX file failed to parse; message carries the byte offset."""


class CalibrationInfeasible(RuntimeError):
    """No noise scale can reach the target budget.

    ``floor_eps`` is the smallest epsilon attainable by letting the searched
    scale grow without bound (the alpha-channel noise alone, plus the
    conversion floor of the order grid).
    """

    def __init__(self, message: str, floor_eps: float):
        super().__init__(message)
        self.floor_eps = floor_eps


class CalibrationError(RuntimeError):
    """Noise calibration failed to bracket or converge within its iteration cap."""
