"""Multichannel distant-speech front end: WPE, fixed MVDR beams and SACC."""
from .errors import ConfigError, DivergenceError, FrontendError, NumericalError, SingularSystemError
from .spectral import SAMPLE_RATE, Spectrogram, StftConfig, WaveformBuffer, istft, log_power_normalize, stft

__version__ = "0.1.0"

__all__ = ["ConfigError", "DivergenceError", "FrontendError", "NumericalError", "SingularSystemError",
           "SAMPLE_RATE", "Spectrogram", "StftConfig", "WaveformBuffer", "istft", "log_power_normalize", "stft"]
