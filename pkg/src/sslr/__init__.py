"""Reverberant audio source separation with sparse analysis and
low-rank spectrogram priors, solved by preconditioned proximal
splitting with an outer reweighting loop."""

from ._kernels import BACKEND as kernel_backend
from .errors import (
    ConfigurationError,
    DivergenceError,
    FrameError,
    ShapeMismatchError,
    SslrError,
    WavFormatError,
)
from .frames import (
    Spectrogram,
    StftConfig,
    TfTensor,
    istft,
    istft_with_residual,
    spectrogram,
    stft,
    verify_tight_frame,
)
from .signals import MultichannelSignal

__version__ = "0.1.0"
