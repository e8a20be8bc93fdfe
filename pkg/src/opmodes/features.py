"""Spectrogram features and classifier input tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import ParameterError, RealSignal

DURATIONS_S = (1, 2, 3, 4)
N_FFTS = (64, 128, 256)


@dataclass(frozen=True)
class SpectrogramConfig:
    n_fft: int = 128
    duration_s: float = 2.0
    log_floor_db: float = -80.0
    af_rate_hz: int = 6000

    def __post_init__(self):
        if self.n_fft < 4 or self.n_fft & (self.n_fft - 1):
            raise ParameterError(f"n_fft must be a power of two, got {self.n_fft}")
        if self.duration_s * self.af_rate_hz < self.n_fft:
            raise ParameterError("window shorter than one FFT frame")
        if not self.log_floor_db < 0:
            raise ParameterError("log floor must be negative")

    @property
    def hop(self) -> int:
        return self.n_fft // 2

    @property
    def window_samples(self) -> int:
        return int(round(self.duration_s * self.af_rate_hz))

    def shape(self) -> tuple[int, int]:
        """(frequency bins, frames) for a window of ``duration_s``."""
        return self.n_fft // 2 + 1, (self.window_samples - self.n_fft) // self.hop + 1


@dataclass(frozen=True)
class Spectrogram:
    """Log-magnitude in dB relative to the image's strongest cell, floored."""

    values: np.ndarray
    config: SpectrogramConfig


def hann(n: int) -> np.ndarray:
    # periodic Hann: overlapping copies at n/2 hop sum to a constant
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _frames(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    if x.shape[-1] < n_fft:
        raise ParameterError(f"need at least {n_fft} samples, got {x.shape[-1]}")
    return np.lib.stride_tricks.sliding_window_view(x, n_fft, axis=-1)[..., ::hop, :]


def stft(x: np.ndarray, n_fft: int) -> np.ndarray:
    """One-sided STFT, Hann window, hop n_fft/2, no padding. Shape [..., bins, frames]."""
    fr = _frames(np.asarray(x, dtype=np.float64), n_fft, n_fft // 2) * hann(n_fft)
    return np.swapaxes(np.fft.rfft(fr, axis=-1), -1, -2)


def power_spectrogram(signal: RealSignal, n_fft: int) -> np.ndarray:
    """Linear |X|^2 per one-sided bin."""
    X = stft(signal.samples, n_fft)
    return X.real**2 + X.imag**2


def one_sided_weights(n_fft: int) -> np.ndarray:
    """Per-bin weights that turn one-sided power into two-sided (Parseval) power."""
    w = np.full(n_fft // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w


def windowed_energy_factor(n_fft: int) -> float:
    """Average fraction of signal energy that 50%-overlapped Hann frames capture.

    ``sum(|X|^2 weighted) / n_fft`` over all frames approximates
    ``factor * sum(x^2)`` for signals whose power is spread over time.
    """
    w = hann(n_fft)
    return float(np.sum(w**2) / (n_fft // 2))


def log_magnitude(x: np.ndarray, n_fft: int, floor_db: float) -> np.ndarray:
    """dB magnitude relative to the block's peak, clipped at ``floor_db``.

    Works on a single window [samples] or a batch [batch, samples].
    """
    X = stft(x, n_fft)
    p = X.real**2 + X.imag**2
    peak = p.max(axis=(-2, -1), keepdims=True)
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(np.where(peak > 0, p / np.where(peak > 0, peak, 1.0), 0.0))
    return np.maximum(db, floor_db)


def spectrogram(signal: RealSignal, cfg: SpectrogramConfig) -> Spectrogram:
    if signal.sample_rate_hz != cfg.af_rate_hz:
        raise ParameterError(f"expected {cfg.af_rate_hz} Hz audio, got {signal.sample_rate_hz} Hz")
    if len(signal) < cfg.n_fft:
        raise ParameterError(f"signal of {len(signal)} samples is shorter than n_fft={cfg.n_fft}")
    return Spectrogram(log_magnitude(signal.samples, cfg.n_fft, cfg.log_floor_db), cfg)


def minmax(values: np.ndarray) -> np.ndarray:
    """Per-image min-max scaling to [0, 1] over the last two axes; constant images map to 0.5."""
    lo = values.min(axis=(-2, -1), keepdims=True)
    hi = values.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    flat = span == 0
    return np.where(flat, 0.5, (values - lo) / np.where(flat, 1.0, span))


def to_model_input(spec: Spectrogram) -> np.ndarray:
    """[3, bins, frames] tensor: the normalized image repeated on three channels."""
    img = minmax(spec.values)
    return np.repeat(img[None], 3, axis=0)


def featurize_batch(windows: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    """[batch, samples] windows -> [batch, 1, bins, frames] float32 images.

    The three identical channels are expanded inside the model to save memory.
    """
    db = log_magnitude(windows, cfg.n_fft, cfg.log_floor_db)
    return minmax(db)[:, None].astype(np.float32)


def window_count(total_s: float, duration_s: float, shift_s: float) -> int:
    return int(np.floor((total_s - duration_s) / shift_s + 1e-9)) + 1


def window_starts(n_samples: int, rate: int, duration_s: float, shift_s: float) -> np.ndarray:
    if shift_s <= 0:
        raise ParameterError("shift must be positive")
    width = int(round(duration_s * rate))
    if width > n_samples:
        raise ParameterError(f"window of {duration_s} s exceeds signal of {n_samples / rate} s")
    count = window_count(n_samples / rate, duration_s, shift_s)
    starts = np.round(np.arange(count) * shift_s * rate).astype(np.int64)
    return starts[starts + width <= n_samples]


def window_slices(signal: RealSignal, duration_s: float, shift_s: float) -> list[RealSignal]:
    """Consecutive windows of ``duration_s`` every ``shift_s`` seconds."""
    width = int(round(duration_s * signal.sample_rate_hz))
    starts = window_starts(len(signal), signal.sample_rate_hz, duration_s, shift_s)
    return [signal.with_samples(signal.samples[s : s + width]) for s in starts]


def window_matrix(signal: RealSignal, duration_s: float, shift_s: float, max_windows: int | None = None) -> np.ndarray:
    """Same windows as `window_slices`, stacked into [windows, samples]."""
    width = int(round(duration_s * signal.sample_rate_hz))
    starts = window_starts(len(signal), signal.sample_rate_hz, duration_s, shift_s)
    if max_windows is not None:
        starts = starts[:max_windows]
    return np.stack([signal.samples[s : s + width] for s in starts])
