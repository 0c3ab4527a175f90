"""Exception hierarchy shared by every fishcore module."""


class FishcoreError(Exception):
    """Base class for all fishcore errors."""


class ConfigError(FishcoreError, ValueError):
    pass


class DomainError(FishcoreError, ValueError):
    pass


class ShapeError(FishcoreError, ValueError):
    pass


class DataError(FishcoreError, ValueError):
    pass


class CapacityError(FishcoreError, RuntimeError):
    pass


class FormatError(FishcoreError, ValueError):
    pass


class LengthError(FormatError):
    pass


class TrainingError(FishcoreError, RuntimeError):
    def __init__(self, message, step=None, path=None):
        super().__init__(message)
        self.step = step
        self.path = path
