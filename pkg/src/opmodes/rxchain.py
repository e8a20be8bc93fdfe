"""Simulated USB transmit path and the SDR receive chain.

The receiver mixes the channel centre (carrier + half the channel width) to
0 Hz, runs a cascade of integer-factor FIR stages down to the audio rate,
mixes back up by half the channel width (so an audio tone at f Hz sits at
+f Hz) and takes the real part. Every stage is zero-phase, so the chain adds
no delay, and all state lives in `Channelizer`, which accepts blocks of any
size and gives bit-identical output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dsp import (
    FirStage,
    IqSignal,
    ParameterError,
    RealSignal,
    analytic,
    design_highpass,
    design_lowpass,
    filter,
    oscillator,
    power,
)

log = logging.getLogger(__name__)

STAGE_ATTENUATION_DB = 70.0
SNR_CAP_DB = 120.0


@dataclass(frozen=True)
class ChannelizerConfig:
    wideband_rate_hz: int = 1_000_000
    carrier_offset_hz: float = 200_000.0
    channel_bw_hz: float = 3000.0
    af_rate_hz: int = 6000

    def __post_init__(self):
        if self.carrier_offset_hz + self.channel_bw_hz >= self.wideband_rate_hz / 2:
            raise ParameterError("channel must lie below the wideband Nyquist frequency")
        if self.af_rate_hz < 2 * self.channel_bw_hz:
            raise ParameterError("audio rate must be at least twice the channel bandwidth")
        if self.channel_bw_hz <= 0:
            raise ParameterError("channel bandwidth must be positive")

    @property
    def channel_center_hz(self) -> float:
        return self.carrier_offset_hz + self.channel_bw_hz / 2

    @property
    def passband_hz(self) -> float:
        # half-width kept flat around the channel centre: 150..2850 Hz of audio
        return 0.45 * self.channel_bw_hz

    @property
    def stopband_hz(self) -> float:
        return 0.6 * self.channel_bw_hz


def _split_factor(n: int, max_stage: int = 10) -> list[int]:
    """Split an integer factor into stage factors <= max_stage, largest first."""
    primes = []
    d, m = 2, n
    while m > 1:
        while m % d == 0:
            primes.append(d)
            m //= d
        d += 1
    stages: list[int] = []
    for p in sorted(primes, reverse=True):
        for i, s in enumerate(stages):
            if s * p <= max_stage:
                stages[i] = s * p
                break
        else:
            stages.append(p)
    return sorted(stages, reverse=True)


def _rx_plan(cfg: ChannelizerConfig) -> list[tuple[int, int, float, float, float]]:
    """(up, down, rate_in, passband, stopband) for each receive stage."""
    ratio = Fraction(cfg.wideband_rate_hz, cfg.af_rate_hz)
    down = _split_factor(ratio.numerator)
    up = ratio.denominator
    if up > 1 and len(down) == 1:
        raise ParameterError("need at least two decimation stages around the interpolation")
    plan = []
    rate = float(cfg.wideband_rate_hz)
    fp, fs_final = cfg.passband_hz, cfg.stopband_hz
    factors = [(1, d) for d in down[:-1]]
    if up > 1:
        factors.append((up, 1))
    factors.append((1, down[-1]))
    for i, (u, d) in enumerate(factors):
        inter = rate * u
        out = inter / d
        if i == len(factors) - 1:
            stop = fs_final
        else:
            # nothing may fold or image into what later stages keep
            stop = min(rate, out) - fs_final
        stop = min(stop, inter / 2 * 0.999)
        plan.append((u, d, rate, fp, stop))
        rate = out
    return plan


def _tx_plan(cfg: ChannelizerConfig) -> list[tuple[int, int, float, float, float]]:
    ratio = Fraction(cfg.wideband_rate_hz, cfg.af_rate_hz)
    ups = sorted(_split_factor(ratio.numerator))
    down = ratio.denominator
    band = cfg.channel_bw_hz / 2
    factors = [(ups[0], 1)]
    if down > 1:
        factors.append((1, down))
    factors.extend((u, 1) for u in ups[1:])
    plan = []
    rate = float(cfg.af_rate_hz)
    for u, d in factors:
        inter = rate * u
        out = inter / d
        stop = min(min(rate, out) - band, inter / 2 * 0.999)
        plan.append((u, d, rate, cfg.passband_hz, stop))
        rate = out
    return plan


def _build_stages(plan) -> list[FirStage]:
    stages = []
    for u, d, rate_in, fp, stop in plan:
        inter = rate_in * u
        f = design_lowpass(fp, stop - fp, STAGE_ATTENUATION_DB, inter)
        stages.append(FirStage(f.taps, up=u, down=d))
    return stages


class Channelizer:
    """Streaming narrowband extractor: wideband I/Q in, analytic audio-rate I/Q out.

    Each stage holds back its group delay worth of samples (the overlap)
    until more input or `flush` arrives.
    """

    def __init__(self, cfg: ChannelizerConfig = ChannelizerConfig()):
        self.cfg = cfg
        self.stages = _build_stages(_rx_plan(cfg))
        self.reset()

    def reset(self):
        for s in self.stages:
            s.reset()
        self._n_in = 0
        self._n_out = 0

    def _finish(self, y: np.ndarray) -> np.ndarray:
        lo = oscillator(self.cfg.channel_bw_hz / 2, self.cfg.af_rate_hz, self._n_out, len(y))
        self._n_out += len(y)
        return y * lo

    def process(self, block: np.ndarray) -> np.ndarray:
        block = np.asarray(block, dtype=np.complex128)
        lo = oscillator(-self.cfg.channel_center_hz, self.cfg.wideband_rate_hz, self._n_in, len(block))
        self._n_in += len(block)
        y = block * lo
        for s in self.stages:
            y = s.process(y)
        return self._finish(y)

    def flush(self) -> np.ndarray:
        y = np.zeros(0, dtype=np.complex128)
        for s in self.stages:
            y = np.concatenate([s.process(y), s.flush()])
        return self._finish(y)


def channelize(wideband: IqSignal, cfg: ChannelizerConfig = ChannelizerConfig()) -> IqSignal:
    if wideband.sample_rate_hz != cfg.wideband_rate_hz:
        raise ParameterError(
            f"wideband rate {wideband.sample_rate_hz} Hz does not match configured {cfg.wideband_rate_hz} Hz"
        )
    ch = Channelizer(cfg)
    if len(wideband) == 0:
        return IqSignal(np.zeros(0, dtype=np.complex128), cfg.af_rate_hz)
    y = np.concatenate([ch.process(wideband.samples), ch.flush()])
    return IqSignal(y, cfg.af_rate_hz)


def usb_modulate(af: RealSignal, cfg: ChannelizerConfig = ChannelizerConfig()) -> IqSignal:
    """Place ``af`` as an upper sideband on ``carrier_offset_hz`` of a wideband stream."""
    if af.sample_rate_hz != cfg.af_rate_hz:
        raise ParameterError(f"audio must be at {cfg.af_rate_hz} Hz, got {af.sample_rate_hz} Hz")
    if len(af) == 0:
        return IqSignal(np.zeros(0, dtype=np.complex128), cfg.wideband_rate_hz)
    z = analytic(af).samples if len(af) >= 64 else af.samples.astype(np.complex128)
    z = z * oscillator(-cfg.channel_bw_hz / 2, cfg.af_rate_hz, 0, len(z))
    for s in _build_stages(_tx_plan(cfg)):
        z = s.apply(z)
    z = z * oscillator(cfg.channel_center_hz, cfg.wideband_rate_hz, 0, len(z))
    return IqSignal(z, cfg.wideband_rate_hz)


def _dc_block(rate: int):
    # 50 Hz high-pass: stop below 20 Hz, flat above 80 Hz
    return design_highpass(20.0, 60.0, 60.0, rate)


def usb_demodulate(chan: IqSignal, af_rate_hz: int | None = None) -> RealSignal:
    """Real audio from an analytic upper-sideband channel, DC removed."""
    if af_rate_hz is not None and chan.sample_rate_hz != af_rate_hz:
        raise ParameterError(f"channel must be at {af_rate_hz} Hz, got {chan.sample_rate_hz} Hz")
    x = chan.samples
    if len(x) == 0:
        return RealSignal(np.zeros(0), chan.sample_rate_hz)
    spec = np.abs(np.fft.fft(x)) ** 2
    n = len(x)
    neg = spec[(n + 1) // 2 :].sum()
    pos = spec[1 : (n + 1) // 2].sum()
    if neg > pos and neg > 0:
        raise ParameterError("channel is not an upper-sideband representation (more energy below 0 Hz)")
    if neg > 0.1 * pos:
        log.warning("channel carries %.1f dB of lower-sideband energy", 10 * np.log10(neg / pos))
    real = RealSignal(x.real, chan.sample_rate_hz)
    if len(real) < 3:
        return real
    return filter(real, _dc_block(chan.sample_rate_hz))


def receive(wideband: IqSignal, cfg: ChannelizerConfig = ChannelizerConfig()) -> RealSignal:
    return usb_demodulate(channelize(wideband, cfg), cfg.af_rate_hz)


def estimate_snr(clean: RealSignal, received: RealSignal) -> float:
    """10 log10(P(clean) / P(received - clean)) in dB; capped at 120 dB.

    Assumes gain- and time-aligned inputs.
    """
    if len(clean) != len(received):
        raise ParameterError(f"length mismatch: {len(clean)} vs {len(received)}")
    resid = power(received.with_samples(received.samples - clean.samples))
    p = power(clean)
    if resid == 0:
        return SNR_CAP_DB
    if p == 0:
        return -SNR_CAP_DB
    return float(min(10 * np.log10(p / resid), SNR_CAP_DB))
