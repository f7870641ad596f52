"""Exception types shared across the package."""


class FewShotError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FewShotError, ValueError):
    pass


class LabelError(FewShotError, ValueError):
    pass


class ContractError(FewShotError, ValueError):
    pass


class FormatError(FewShotError, ValueError):
    """Malformed dataset file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SamplingError(FewShotError, ValueError):
    pass


class CapacityError(FewShotError, ValueError):
    pass


class ConfigError(FewShotError, ValueError):
    pass


class CompatibilityError(FewShotError, ValueError):
    pass


class IntegrityError(FewShotError, ValueError):
    pass


class DivergenceError(FewShotError, RuntimeError):
    """Training produced a non-finite or exploding loss.

    ``snapshot`` carries the diagnostic state at the time of abort.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
