"""Waveform-level synthesizers for every mode family.

Synthesis reproduces each mode's time-frequency structure (symbol rate, tone
grid, carrier layout, keying envelope) from a seeded payload. Protocol
layers (varicode, FEC codecs, interleavers) are not modelled; FEC and
interleave variants only alter the symbol-stream statistics through bit
repetition and a fixed bit permutation.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..dsp import ParameterError, RealSignal, design_highpass, design_lowpass, filter
from .catalog import AF_RATE_HZ, CW_WPM, ModeFamily, ModeSpec

CHARSET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 "
PEAK_AMPLITUDE = 0.8
PREAMBLE_SYMBOLS = 32
CW_EDGE_S = 0.006

MORSE = {
    "A": ".-", "B": "-...", "C": "-.-.", "D": "-..", "E": ".", "F": "..-.", "G": "--.",
    "H": "....", "I": "..", "J": ".---", "K": "-.-", "L": ".-..", "M": "--", "N": "-.",
    "O": "---", "P": ".--.", "Q": "--.-", "R": ".-.", "S": "...", "T": "-", "U": "..-",
    "V": "...-", "W": ".--", "X": "-..-", "Y": "-.--", "Z": "--..",
    "0": "-----", "1": ".----", "2": "..---", "3": "...--", "4": "....-",
    "5": ".....", "6": "-....", "7": "--...", "8": "---..", "9": "----.",
}


@dataclass(frozen=True)
class Payload:
    """Seeded random character stream; the same seed gives the same text."""

    seed: int
    charset: str = CHARSET
    length_chars: int = 0  # 0: as many characters as the waveform needs

    def text(self, n: int | None = None) -> str:
        n = self.length_chars if n is None else n
        rng = np.random.default_rng(np.uint64(self.seed % 2**64))
        idx = rng.integers(0, len(self.charset), size=n)
        return "".join(self.charset[i] for i in idx)


def _char_codes(text: str, bits_per_char: int, charset: str) -> np.ndarray:
    if bits_per_char <= 6:
        return np.array([charset.index(c) for c in text], dtype=np.int64)
    return np.frombuffer(text.encode("ascii"), dtype=np.uint8).astype(np.int64)


@lru_cache(maxsize=4)
def _scrambler(n: int) -> np.ndarray:
    return np.random.default_rng(0x0F1D161).integers(0, 2, size=n, dtype=np.int64)


def _interleave(bits: np.ndarray, block: int = 64, stride: int = 13) -> np.ndarray:
    n = len(bits) - len(bits) % block
    head = bits[:n].reshape(-1, block)
    perm = (np.arange(block) * stride) % block
    out = bits.copy()
    out[:n] = head[:, perm].ravel()
    return out


def symbol_stream(spec: ModeSpec, payload: Payload, n_symbols: int, bits_per_symbol: int) -> np.ndarray:
    """Integer symbols in [0, 2**bits_per_symbol) derived from the payload."""
    need_bits = n_symbols * bits_per_symbol
    n_chars = payload.length_chars or (need_bits // (spec.bits_per_char * spec.repeat) + 2)
    codes = _char_codes(payload.text(n_chars), spec.bits_per_char, payload.charset)
    shifts = np.arange(spec.bits_per_char - 1, -1, -1)
    bits = ((codes[:, None] >> shifts) & 1).ravel()
    if spec.repeat > 1:
        bits = np.repeat(bits, spec.repeat)
    if spec.interleave:
        bits = _interleave(bits)
    if len(bits) < need_bits:
        bits = np.resize(bits, need_bits)  # a short explicit payload repeats
    bits = bits[:need_bits]
    if spec.scramble:
        bits = bits ^ np.resize(_scrambler(1 << 16), need_bits)
    if bits_per_symbol == 0:
        return np.zeros(n_symbols, dtype=np.int64)
    weights = 1 << np.arange(bits_per_symbol - 1, -1, -1)
    return bits.reshape(n_symbols, bits_per_symbol) @ weights


def gray(x: np.ndarray) -> np.ndarray:
    return x ^ (x >> 1)


def _mode_rng(spec: ModeSpec, payload: Payload) -> np.random.Generator:
    tag = zlib.crc32(spec.omp_label.encode())
    return np.random.default_rng([payload.seed % 2**63, tag])


def _symbol_index(n: int, fs: float, baud: float) -> tuple[np.ndarray, np.ndarray]:
    pos = np.arange(n) * (baud / fs)
    k = np.floor(pos).astype(np.int64)
    return k, pos - k


def _smooth_frequency(freq: np.ndarray, fs: float, baud: float) -> np.ndarray:
    # shaped keying: frequency transitions spread over a quarter symbol
    width = int(round(0.25 * fs / baud))
    if width < 3:
        return freq
    w = np.hanning(width + 2)[1:-1]
    w /= w.sum()
    padded = np.concatenate([np.full(width, freq[0]), freq, np.full(width, freq[-1])])
    return np.convolve(padded, w, mode="same")[width:-width]


def _fm(freq: np.ndarray, fs: float, phase0: float = 0.0) -> np.ndarray:
    phase = phase0 + 2 * np.pi * np.cumsum(freq) / fs
    return np.cos(phase)


def _psk_baseband(sym: np.ndarray, order: int, k: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Differential M-PSK with cosine-shaped transitions between symbols."""
    phases = np.cumsum(2 * np.pi * sym / order)
    s = np.exp(1j * phases)
    prev = np.concatenate([s[:1], s[:-1]])
    w = (1 - np.cos(np.pi * tau)) / 2
    return prev[k] + (s[k] - prev[k]) * w


def _psk_symbols(spec: ModeSpec, payload: Payload, n_sym: int, order: int, offset: int = 0) -> np.ndarray:
    bps = int(math.log2(order))
    pre = min(PREAMBLE_SYMBOLS, n_sym)
    data = symbol_stream(spec, payload, n_sym + offset, bps)[offset:]
    # idle preamble: phase reversals
    data[:pre] = order // 2
    return data


def _synth_psk(spec: ModeSpec, payload: Payload, n: int, fs: float) -> np.ndarray:
    k, tau = _symbol_index(n, fs, spec.baud)
    n_sym = int(k[-1]) + 2
    sym = _psk_symbols(spec, payload, n_sym, spec.psk_order)
    bb = _psk_baseband(sym, spec.psk_order, k, tau)
    t = np.arange(n) / fs
    return np.real(bb * np.exp(2j * np.pi * spec.center_hz * t))


def _carrier_offsets(carriers: int, spacing: float) -> np.ndarray:
    return (np.arange(carriers) - (carriers - 1) / 2) * spacing


def _synth_multicarrier(spec: ModeSpec, payload: Payload, n: int, fs: float, rng) -> np.ndarray:
    k, tau = _symbol_index(n, fs, spec.baud)
    n_sym = int(k[-1]) + 2
    t = np.arange(n) / fs
    out = np.zeros(n)
    offsets = _carrier_offsets(spec.carriers, spec.tone_spacing_hz)
    # each carrier reads its own slice of the payload bit stream
    all_sym = symbol_stream(spec, payload, n_sym * spec.carriers, 1).reshape(n_sym, spec.carriers)
    if spec.family is ModeFamily.MULTI_CARRIER_PSK:
        all_sym[: min(PREAMBLE_SYMBOLS, n_sym)] = 1  # reversals on every carrier
    phase0 = rng.uniform(0, 2 * np.pi, size=spec.carriers)
    for c, off in enumerate(offsets):
        sym = all_sym[:, c]
        bb = _psk_baseband(sym, 2, k, tau)
        out += np.real(bb * np.exp(1j * (2 * np.pi * (spec.center_hz + off) * t + phase0[c])))
    return out


def _tone_freqs(spec: ModeSpec, tones: np.ndarray) -> np.ndarray:
    return spec.center_hz + (tones - (spec.tones - 1) / 2) * spec.tone_spacing_hz


def _edge_preamble(tones: int) -> np.ndarray:
    return np.array([0, tones - 1, 0, tones - 1], dtype=np.int64)


def _synth_mfsk(spec: ModeSpec, payload: Payload, n: int, fs: float, rng) -> np.ndarray:
    k, _ = _symbol_index(n, fs, spec.baud)
    n_sym = int(k[-1]) + 1
    bps = int(math.log2(spec.tones))
    sym = gray(symbol_stream(spec, payload, n_sym, bps))
    if not spec.scramble:
        # unscrambled reduced-alphabet coding: tone index rotates with symbol
        # position so every tone stays reachable
        sym = (sym + np.arange(n_sym)) % spec.tones
    tones = np.concatenate([_edge_preamble(spec.tones), sym])[:n_sym]
    freq = _smooth_frequency(_tone_freqs(spec, tones)[k], fs, spec.baud)
    return _fm(freq, fs, rng.uniform(0, 2 * np.pi))


def ifk_tones(symbols: np.ndarray, tones: int, offset: int, start: int = 0) -> np.ndarray:
    """Incremental frequency keying: tone_k = (tone_{k-1} + symbol_k + offset) mod tones."""
    return (start + np.cumsum(symbols + offset)) % tones


def _synth_ifk(spec: ModeSpec, payload: Payload, n: int, fs: float, rng) -> np.ndarray:
    k, _ = _symbol_index(n, fs, spec.baud)
    n_sym = int(k[-1]) + 1
    bps = int(math.log2(spec.tones - spec.ifk_offset))
    sym = symbol_stream(spec, payload, n_sym, bps)
    tones = np.concatenate([_edge_preamble(spec.tones), ifk_tones(sym, spec.tones, spec.ifk_offset)])[:n_sym]
    freq = _smooth_frequency(_tone_freqs(spec, tones)[k], fs, spec.baud)
    return _fm(freq, fs, rng.uniform(0, 2 * np.pi))


def throb_pairs(tones: int) -> np.ndarray:
    return np.array([(i, j) for i in range(tones) for j in range(i, tones)], dtype=np.int64)


def _synth_throb(spec: ModeSpec, payload: Payload, n: int, fs: float, rng) -> np.ndarray:
    k, tau = _symbol_index(n, fs, spec.baud)
    n_sym = int(k[-1]) + 1
    pairs = throb_pairs(spec.tones)
    sym = symbol_stream(spec, payload, n_sym, 6) % len(pairs)
    sym[0] = 0  # pair (0, 0): lowest tone
    if n_sym > 1:
        sym[1] = len(pairs) - 1  # pair (T-1, T-1): highest tone
    t = np.arange(n) / fs
    ph = rng.uniform(0, 2 * np.pi, size=2)
    lo, hi = pairs[sym, 0][k], pairs[sym, 1][k]
    env = np.sin(np.pi * tau) ** 2
    f_lo, f_hi = _tone_freqs(spec, lo), _tone_freqs(spec, hi)
    return env * (np.cos(2 * np.pi * f_lo * t + ph[0]) + np.cos(2 * np.pi * f_hi * t + ph[1]))


def _synth_rtty(spec: ModeSpec, payload: Payload, n: int, fs: float, rng) -> np.ndarray:
    # 1 start bit (space), 5 data bits, 1.5 stop bits (mark), in half-bit units
    n_half = int(math.ceil(n * 2 * spec.baud / fs)) + 1
    n_chars = n_half // 15 + 2
    codes = _char_codes(payload.text(n_chars), 6, payload.charset) % 32
    frames = []
    for c in codes:
        bits = [0] + [(c >> b) & 1 for b in range(5)]
        frames.extend(np.repeat(bits, 2).tolist() + [1, 1, 1])
    half = np.asarray(frames[:n_half])
    idx = np.floor(np.arange(n) * (2 * spec.baud / fs)).astype(np.int64)
    shift = spec.tone_spacing_hz
    freq = spec.center_hz + np.where(half[idx] == 1, shift / 2, -shift / 2)
    return _fm(_smooth_frequency(freq, fs, spec.baud), fs, rng.uniform(0, 2 * np.pi))


def morse_keying(text: str, dot_s: float, fs: float, n: int) -> np.ndarray:
    """0/1 key-down sequence with standard Morse timing, repeated to fill n samples."""
    units: list[int] = []
    for word in text.split(" "):
        if not word:
            continue
        for ci, ch in enumerate(word):
            for ei, el in enumerate(MORSE[ch]):
                units.extend([1] * (1 if el == "." else 3))
                units.append(0)  # intra-character gap
            units.extend([0, 0])  # completes the 3-unit letter gap
        units.extend([0] * 4)  # completes the 7-unit word gap
    if not units:
        units = [0]
    per_unit = dot_s * fs
    idx = np.floor(np.arange(n) / per_unit).astype(np.int64)
    return np.asarray(units, dtype=np.float64)[idx % len(units)]


def _synth_cw(spec: ModeSpec, payload: Payload, n: int, fs: float, rng) -> np.ndarray:
    dot_s = 1.2 / CW_WPM
    n_chars = int(n / fs / dot_s / 6) + 4  # fewer than six units per character is impossible
    text = payload.text(n_chars)
    key = morse_keying(text, dot_s, fs, n)
    # half-sine kernel turns each step into a raised-cosine edge
    L = int(round(CW_EDGE_S * fs))
    kern = np.sin(np.pi * (np.arange(L) + 0.5) / L)
    kern /= kern.sum()
    env = np.convolve(key, kern)[L // 2 : L // 2 + n]
    t = np.arange(n) / fs
    return env * np.cos(2 * np.pi * spec.center_hz * t + rng.uniform(0, 2 * np.pi))


def _synth_noise(spec: ModeSpec, payload: Payload, n: int, fs: float, rng) -> np.ndarray:
    return rng.standard_normal(n)


@lru_cache(maxsize=8)
def _band_filters(fs: int):
    # audio chain of a transceiver: 50 Hz .. 2950 Hz at the 6 kHz rate
    nyq = fs / 2
    hp = design_highpass(20.0, 60.0, 60.0, fs)
    lp = design_lowpass(min(2920.0, 0.973 * nyq), min(70.0, 0.02 * nyq), 60.0, fs)
    return hp, lp


def band_limit(x: np.ndarray, fs: int) -> np.ndarray:
    hp, lp = _band_filters(fs)
    sig = RealSignal(x, fs)
    return filter(filter(sig, hp), lp).samples


def synthesize(spec: ModeSpec, payload: Payload, duration_s: float, rate_hz: int = AF_RATE_HZ) -> RealSignal:
    """Synthesize ``duration_s`` seconds of ``spec`` at ``rate_hz``.

    Output has exactly ``round(duration_s * rate_hz)`` samples, is
    band-limited to 50..2950 Hz (scaled with the rate) and peak-normalized
    to 0.8.
    """
    if duration_s <= 0:
        raise ParameterError("duration must be positive")
    lo, hi = spec.band_edges_hz
    upper = min(hi, 2950.0)
    if rate_hz < 2 * upper:
        raise ParameterError(f"rate {rate_hz} Hz too low for content up to {upper} Hz")
    n = int(round(duration_s * rate_hz))
    if n < 1:
        raise ParameterError("duration too short for one sample")
    fs = float(rate_hz)
    rng = _mode_rng(spec, payload)
    fam = spec.family
    if fam is ModeFamily.PSK:
        x = _synth_psk(spec, payload, n, fs)
    elif fam in (ModeFamily.MULTI_CARRIER_PSK, ModeFamily.MT63, ModeFamily.OFDM_GENERIC):
        x = _synth_multicarrier(spec, payload, n, fs, rng)
    elif fam is ModeFamily.MFSK:
        x = _synth_mfsk(spec, payload, n, fs, rng)
    elif fam is ModeFamily.IFK:
        x = _synth_ifk(spec, payload, n, fs, rng)
    elif fam is ModeFamily.THROB:
        x = _synth_throb(spec, payload, n, fs, rng)
    elif fam is ModeFamily.FSK_RTTY:
        x = _synth_rtty(spec, payload, n, fs, rng)
    elif fam is ModeFamily.CW:
        x = _synth_cw(spec, payload, n, fs, rng)
    elif fam is ModeFamily.NOISE:
        x = _synth_noise(spec, payload, n, fs, rng)
    else:
        raise NotImplementedError(f"no synthesizer for {fam}")
    if n >= 64:
        x = band_limit(x, int(rate_hz))
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (PEAK_AMPLITUDE / peak)
    return RealSignal(x, int(rate_hz))
