"""Exceptions raised by the channel estimation toolkit."""

from typing import List, Optional


class ChannelEstimationError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(ChannelEstimationError, ValueError):
    pass


class DegenerateChannelError(ChannelEstimationError):
    pass


class RankDeficientError(ChannelEstimationError):
    pass


class InitializationError(ChannelEstimationError):
    pass


class DivergenceError(ChannelEstimationError):
    """The S-MJCE objective increased between two outer iterations."""

    def __init__(self, message: str, trace: Optional[List[float]] = None):
        super().__init__(message)
        self.trace = list(trace or [])


class ConfigError(ChannelEstimationError):
    pass


class HarnessIOError(ChannelEstimationError):
    def __init__(self, message: str, path: str):
        super().__init__(f"{message}: {path}")
        self.path = path
