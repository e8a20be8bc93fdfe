"""Signal containers and numerical DSP primitives.

Everything here works in 64-bit floating point. Filters are linear-phase
Kaiser-windowed sincs; rate changes are integer-factor polyphase stages
that can run on a whole signal or block by block with identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np


class ParameterError(ValueError):
    """Raised when an operation's preconditions are violated."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RealSignal:
    """Real-valued audio-frequency waveform."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ParameterError("samples must be one-dimensional")
        if int(self.sample_rate_hz) <= 0:
            raise ParameterError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(x)):
            raise ParameterError("samples must be finite")
        object.__setattr__(self, "samples", _frozen(x))
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "RealSignal":
        return RealSignal(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class IqSignal:
    """Complex baseband waveform."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.complex128)
        if x.ndim != 1:
            raise ParameterError("samples must be one-dimensional")
        if int(self.sample_rate_hz) <= 0:
            raise ParameterError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(x)):
            raise ParameterError("samples must be finite")
        object.__setattr__(self, "samples", _frozen(x))
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "IqSignal":
        return IqSignal(samples, self.sample_rate_hz)


Signal = Union[RealSignal, IqSignal]


@dataclass(frozen=True)
class FirFilter:
    """Symmetric (linear-phase) FIR filter.

    ``description`` records the design request: passband edge, transition
    width, stopband attenuation and the sample rate it was designed for.
    """

    taps: np.ndarray
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        h = np.array(self.taps, dtype=np.float64)
        if h.ndim != 1 or len(h) < 3 or len(h) % 2 == 0:
            raise ParameterError(f"FIR needs an odd tap count >= 3, got {len(h)}")
        object.__setattr__(self, "taps", _frozen(h))

    @property
    def group_delay(self) -> int:
        return (len(self.taps) - 1) // 2


def kaiser_beta(stopband_db: float) -> float:
    a = stopband_db
    if a > 50:
        return 0.1102 * (a - 8.7)
    if a >= 21:
        return 0.5842 * (a - 21) ** 0.4 + 0.07886 * (a - 21)
    return 0.0


def _windowed_sinc(ntaps: int, fc: float, beta: float) -> np.ndarray:
    # fc is the ideal cutoff as a fraction of the sample rate.
    n = np.arange(ntaps) - (ntaps - 1) / 2
    h = 2 * fc * np.sinc(2 * fc * n) * np.kaiser(ntaps, beta)
    return h / h.sum()


def _response_db(taps: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    n = np.arange(len(taps)) - (len(taps) - 1) / 2
    resp = np.cos(2 * np.pi * np.outer(freqs, n)) @ taps
    return 20 * np.log10(np.maximum(np.abs(resp), 1e-300))


def design_lowpass(
    cutoff_hz: float,
    transition_hz: float,
    stopband_db: float,
    sample_rate_hz: float,
) -> FirFilter:
    """Kaiser-windowed sinc lowpass.

    ``cutoff_hz`` is the passband edge and ``cutoff_hz + transition_hz`` the
    stopband edge. Unity gain at DC. The tap count from Kaiser's formula is
    grown until the measured stopband attenuation meets ``stopband_db``.
    """
    fs = float(sample_rate_hz)
    if not (cutoff_hz > 0 and transition_hz > 0):
        raise ParameterError("cutoff and transition must be positive")
    if cutoff_hz + transition_hz >= fs / 2:
        raise ParameterError(
            f"stopband edge {cutoff_hz + transition_hz} Hz must lie below Nyquist {fs / 2} Hz"
        )
    if stopband_db < 20:
        raise ParameterError("stopband attenuation must be at least 20 dB")

    beta = kaiser_beta(stopband_db)
    dw = 2 * np.pi * transition_hz / fs
    ntaps = int(math.ceil((stopband_db - 7.95) / (2.285 * dw))) + 1
    ntaps = max(ntaps, 3) | 1
    fc = (cutoff_hz + transition_hz / 2) / fs

    stop_grid = np.linspace((cutoff_hz + transition_hz) / fs, 0.5, 2048)
    pass_grid = np.linspace(0.0, cutoff_hz / fs, 512)
    for _ in range(64):
        h = _windowed_sinc(ntaps, fc, beta)
        stop = _response_db(h, stop_grid).max()
        ripple = np.ptp(_response_db(h, pass_grid))
        if stop <= -stopband_db and ripple <= 1.0:
            break
        ntaps += 2
    else:  # pragma: no cover - Kaiser designs converge long before this
        raise ParameterError("lowpass design did not converge")

    return FirFilter(
        h,
        {
            "cutoff_hz": float(cutoff_hz),
            "transition_hz": float(transition_hz),
            "stopband_db": float(stopband_db),
            "sample_rate_hz": fs,
        },
    )


def design_highpass(
    cutoff_hz: float,
    transition_hz: float,
    stopband_db: float,
    sample_rate_hz: float,
) -> FirFilter:
    """Spectral inversion of a lowpass: stop below ``cutoff_hz``, pass above
    ``cutoff_hz + transition_hz``."""
    lp = design_lowpass(cutoff_hz, transition_hz, stopband_db, sample_rate_hz)
    h = -lp.taps.copy()
    h[lp.group_delay] += 1.0
    desc = dict(lp.description, kind="highpass")
    return FirFilter(h, desc)


def filter(signal: Signal, f: FirFilter) -> Signal:
    """Zero-phase application of ``f``: same length, aligned to the input."""
    if len(signal) == 0:
        raise ParameterError("cannot filter an empty signal")
    full = np.convolve(signal.samples, f.taps)
    d = f.group_delay
    return signal.with_samples(full[d : d + len(signal)])


def analytic(signal: RealSignal) -> IqSignal:
    """Analytic signal by zeroing negative FFT bins and doubling positive ones."""
    n = len(signal)
    if n < 64:
        raise ParameterError(f"analytic signal needs at least 64 samples, got {n}")
    spec = np.fft.fft(signal.samples)
    spec *= _analytic_mask(n)
    return IqSignal(np.fft.ifft(spec), signal.sample_rate_hz)


def _analytic_mask(n: int) -> np.ndarray:
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1 : n // 2] = 2.0
    else:
        h[1 : (n + 1) // 2] = 2.0
    return h


def positive_part(samples: np.ndarray) -> np.ndarray:
    """Project a complex block onto its non-negative DFT bins."""
    spec = np.fft.fft(samples)
    n = len(samples)
    mask = np.zeros(n)
    mask[0] = 1.0
    mask[1 : (n + 1) // 2] = 1.0
    if n % 2 == 0:
        mask[n // 2] = 0.5
    return np.fft.ifft(spec * mask)


def oscillator(freq_hz: float, sample_rate_hz: float, start: int, count: int) -> np.ndarray:
    """exp(i 2 pi f n / fs) for absolute sample indices start..start+count-1.

    The phase of each sample depends only on its absolute index, so blocks of
    any size produce bit-identical values.
    """
    n = np.arange(start, start + count, dtype=np.float64)
    cycles = np.mod(freq_hz * n, sample_rate_hz) / sample_rate_hz
    return np.exp(2j * np.pi * cycles)


def mix(signal: IqSignal, shift_hz: float) -> IqSignal:
    if abs(shift_hz) >= signal.sample_rate_hz / 2:
        raise ParameterError(
            f"|shift| {abs(shift_hz)} Hz must stay below Nyquist {signal.sample_rate_hz / 2} Hz"
        )
    if shift_hz == 0:
        return signal
    lo = oscillator(shift_hz, signal.sample_rate_hz, 0, len(signal))
    return signal.with_samples(signal.samples * lo)


def power(signal: Signal) -> float:
    """Mean squared magnitude."""
    if len(signal) == 0:
        raise ParameterError("power of an empty signal is undefined")
    x = signal.samples
    if np.iscomplexobj(x):
        return float(np.mean(x.real**2 + x.imag**2))
    return float(np.mean(x * x))


class FirStage:
    """Integer-factor polyphase FIR stage (interpolate by ``up`` or decimate
    by ``down``) with zero-phase alignment.

    Output ``m`` is ``sum_k taps[k] * u[m*down + c - k]`` where ``u`` is the
    zero-stuffed input at the intermediate rate and ``c`` the group delay.
    Samples outside the signal are zero. ``process`` emits every output whose
    inputs are all known (lookahead of ``c`` intermediate samples) and keeps
    the rest buffered; ``flush`` zero-pads the tail. Every output is the same
    tap-ordered sum regardless of how the input was blocked, so streaming and
    whole-signal results are bit-identical.
    """

    def __init__(self, taps: np.ndarray, up: int = 1, down: int = 1):
        if up < 1 or down < 1 or (up > 1 and down > 1):
            raise ParameterError("a stage either interpolates or decimates by an integer")
        self.taps = np.asarray(taps, dtype=np.float64) * up
        self.up = up
        self.down = down
        self.c = (len(self.taps) - 1) // 2
        self.reset()

    def reset(self):
        k = len(self.taps)
        # buf[i] holds input sample (base + i); leading zeros stand in for t < 0
        pad = k // self.up + 2
        self._buf = np.zeros(pad, dtype=np.complex128)
        self._base = -pad
        self._n_in = 0
        self._m_next = 0
        self._complex = False

    def _compute(self, m0: int, m1: int) -> np.ndarray:
        count = m1 - m0
        acc = np.zeros(count, dtype=np.complex128)
        if count <= 0:
            return acc
        buf, base = self._buf, self._base
        if self.up == 1:
            d = self.down
            for k, h in enumerate(self.taps):
                j0 = m0 * d + self.c - k - base
                acc += h * buf[j0 : j0 + (count - 1) * d + 1 : d]
        else:
            L = self.up
            for k, h in enumerate(self.taps):
                # outputs m with (m + c - k) divisible by L
                first = m0 + (k - self.c - m0) % L
                if first >= m1:
                    continue
                i0 = (first + self.c - k) // L - base
                cnt = (m1 - first + L - 1) // L
                acc[first - m0 :: L] += h * buf[i0 : i0 + cnt]
        return acc

    def _trim(self):
        keep_from = (self._m_next * self.down + self.c - (len(self.taps) - 1)) // self.up - 1
        drop = keep_from - self._base
        if drop > 0:
            self._buf = self._buf[drop:]
            self._base += drop

    def process(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        self._complex |= np.iscomplexobj(x)
        self._buf = np.concatenate([self._buf, x.astype(np.complex128)])
        self._n_in += len(x)
        # ready while (m*down + c) // up < n_in
        limit = self._n_in * self.up - self.c
        m1 = max(self._m_next, -(-limit // self.down)) if limit > 0 else self._m_next
        out = self._compute(self._m_next, m1)
        self._m_next = m1
        self._trim()
        return out if self._complex else out.real.copy()

    def flush(self) -> np.ndarray:
        total_out = -(-self._n_in * self.up // self.down)
        tail = len(self.taps) // self.up + 2
        self._buf = np.concatenate([self._buf, np.zeros(tail, dtype=np.complex128)])
        out = self._compute(self._m_next, total_out)
        self._m_next = max(total_out, self._m_next)
        return out if self._complex else out.real.copy()

    def apply(self, x: np.ndarray) -> np.ndarray:
        self.reset()
        y = np.concatenate([self.process(x), self.flush()])
        self.reset()
        return y


def resample(signal: Signal, new_rate_hz: int) -> Signal:
    """Integer-factor rate change with a Kaiser anti-alias/anti-image filter.

    Content below 80% of the lower Nyquist frequency is preserved within 1 dB;
    the stopband starts at the lower Nyquist frequency and is 60 dB down.
    """
    old = signal.sample_rate_hz
    new = int(new_rate_hz)
    if new <= 0:
        raise ParameterError("target rate must be positive")
    if new == old:
        return signal
    if new < old:
        if old % new:
            raise ParameterError(f"{old} Hz -> {new} Hz is not an integer decimation")
        up, down = 1, old // new
    else:
        if new % old:
            raise ParameterError(f"{old} Hz -> {new} Hz is not an integer interpolation")
        up, down = new // old, 1
    nyq = min(old, new) / 2
    inter = old * up
    f = design_lowpass(0.8 * nyq, 0.2 * nyq * 0.999, 60.0, inter)
    y = FirStage(f.taps, up=up, down=down).apply(signal.samples)
    if isinstance(signal, RealSignal):
        return RealSignal(np.real(y), new)
    return IqSignal(y, new)
