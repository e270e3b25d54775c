"""Exception types raised across the package."""


class DSMSError(ValueError):
    pass


class InvalidMessageError(DSMSError):
    pass


class MalformedMessageError(DSMSError):
    pass


class InvalidBudgetError(DSMSError):
    pass


class InvalidTemperatureError(DSMSError):
    pass


class InsufficientBandwidthError(DSMSError):
    pass


class FrameBuildError(DSMSError):
    pass


class MalformedFrameError(DSMSError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class InvalidActionError(DSMSError):
    pass


class ShapeError(DSMSError):
    pass


class ProtocolError(DSMSError):
    pass


class ConfigError(DSMSError):
    pass
