"""Exception types shared across the package."""


class SslrError(Exception):
    """Base class for package-specific failures."""


class ConfigurationError(SslrError, ValueError):
    """Invalid or inconsistent configuration values."""


class ShapeMismatchError(SslrError, ValueError):
    """Operands with incompatible channel counts or lengths."""


class FrameError(SslrError, ValueError):
    """Time-frequency frame fails the tightness requirement."""


class DivergenceError(SslrError, RuntimeError):
    """Solver iterate became non-finite.

    Carries the diagnostics collected up to the failing iteration in
    ``diagnostics`` (may be None when divergence happens before the first
    record).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class WavFormatError(SslrError, ValueError):
    """Malformed WAV header or unsupported sample encoding."""
