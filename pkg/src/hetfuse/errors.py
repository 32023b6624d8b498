"""Exception hierarchy shared by every module."""


class HetfuseError(Exception):
    pass


class BandMismatch(HetfuseError, ValueError):
    pass


class SizeMismatch(HetfuseError, ValueError):
    pass


class ShapeError(HetfuseError, ValueError):
    pass


class FormatError(HetfuseError, ValueError):
    pass


class NotDivisible(HetfuseError, ValueError):
    pass


class TooSmall(HetfuseError, ValueError):
    pass


class DegenerateReference(HetfuseError, ValueError):
    pass


class PatchTooLarge(HetfuseError, ValueError):
    pass


class StrategyMismatch(HetfuseError, ValueError):
    pass


class ConfigError(HetfuseError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DivergenceError(HetfuseError, RuntimeError):
    """A loss became non-finite during training."""

    def __init__(self, step: int, message: str = ""):
        super().__init__(f"non-finite loss at step {step}" + (f": {message}" if message else ""))
        self.step = step
