"""Real-valued multichannel time-domain signals."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = ["MultichannelSignal"]


@dataclass(frozen=True, eq=False)
class MultichannelSignal:
    """A channels x samples matrix of real samples at a fixed rate.

    Used for sources (N x T), mixtures (M x T) and noise alike.  The
    samples array is normalized to a C-contiguous float64 matrix at
    construction and must be fully finite.
    """

    samples: np.ndarray
    sample_rate: float = 8000.0

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise ConfigurationError(
                f"samples must be (channels, num_samples>=1), got shape "
                f"{np.shape(self.samples)}"
            )
        if not np.isfinite(samples).all():
            raise ConfigurationError("samples contain non-finite values")
        if not self.sample_rate > 0:
            raise ConfigurationError(
                f"sample_rate must be positive, got {self.sample_rate}"
            )
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples: np.ndarray) -> "MultichannelSignal":
        """Same sample rate, new sample matrix."""
        return MultichannelSignal(samples, self.sample_rate)
