"""Exception types raised across the simulator."""


class ArofError(Exception):
    """Base class for all simulator errors."""

    kind = "error"


class BandError(ArofError):
    """Spectral content would leave the representable or allowed band."""

    kind = "band_error"


class FramingError(ArofError):
    kind = "framing_error"


class TruncationError(ArofError):
    kind = "truncation_error"


class SyncError(ArofError):
    """No preamble found, or the frequency offset lies outside the search window."""

    kind = "no_frame_found"


class EstimationError(ArofError):
    kind = "estimation_error"


class ConfigError(ArofError):
    """Invalid configuration. ``keys`` lists the offending dotted keys."""

    kind = "config_error"

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = list(keys)


class MemoryCapError(ArofError):
    kind = "memory_cap"
