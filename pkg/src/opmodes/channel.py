"""Channel impairments applied in the audio domain, and augmentation plans.

The training plan is Amplify, FreqShift, SimTone, SimTone, Noise with every
parameter drawn uniformly from its range. Validation uses one fixed plan.
Training data is expanded to five augmented copies plus the clean original.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from typing import Callable, Sequence, TypeVar, Union

import numpy as np

from .dsp import ParameterError, RealSignal, power

T = TypeVar("T")


@dataclass(frozen=True)
class Amplify:
    factor: float

    def __post_init__(self):
        if not self.factor > 0:
            raise ParameterError(f"amplify factor must be positive, got {self.factor}")


@dataclass(frozen=True)
class FreqShift:
    shift_hz: float

    def __post_init__(self):
        if abs(self.shift_hz) > 1000:
            raise ParameterError(f"|shift| must not exceed 1000 Hz, got {self.shift_hz}")


@dataclass(frozen=True)
class SimTone:
    freq_hz: float
    amplitude: float

    def __post_init__(self):
        if not 0 < self.freq_hz < 3000:
            raise ParameterError(f"tone frequency must lie in (0, 3000) Hz, got {self.freq_hz}")
        if self.amplitude < 0:
            raise ParameterError("tone amplitude must be non-negative")


@dataclass(frozen=True)
class Noise:
    snr_db: float

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ParameterError("SNR must be finite")


AugOp = Union[Amplify, FreqShift, SimTone, Noise]
CANONICAL_ORDER = ("Amplify", "FreqShift", "SimTone", "SimTone", "Noise")


@dataclass(frozen=True)
class AugPlan:
    ops: tuple[AugOp, ...]
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))

    def op_names(self) -> list[str]:
        return [type(op).__name__ for op in self.ops]


@dataclass(frozen=True)
class AugRanges:
    amplify: tuple[float, float] = (0.1, 2.0)
    freq_shift_hz: tuple[float, float] = (-500.0, 500.0)
    sim_tone_freq_hz: tuple[float, float] = (10.0, 2990.0)
    sim_tone_amp: tuple[float, float] = (0.0, 0.3)
    noise_snr_db: tuple[float, float] = (-6.0, 42.0)
    # ablation switches: which ops a sampled plan contains
    use_amplify: bool = True
    use_freq_shift: bool = True
    n_sim_tones: int = 2
    use_noise: bool = True

    def without(self, name: str) -> "AugRanges":
        """Copy with one augmentation removed (``SimTone1`` drops one tone, ``SimTone12`` both)."""
        if name == "Amplify":
            return replace(self, use_amplify=False)
        if name == "FreqShift":
            return replace(self, use_freq_shift=False)
        if name == "SimTone1":
            return replace(self, n_sim_tones=min(self.n_sim_tones, 1))
        if name == "SimTone12":
            return replace(self, n_sim_tones=0)
        if name == "Noise":
            return replace(self, use_noise=False)
        raise ParameterError(f"unknown augmentation {name!r}")


def _check_nonempty(signal: RealSignal):
    if len(signal) == 0:
        raise ParameterError("signal is empty")


def amplify(signal: RealSignal, factor: float) -> RealSignal:
    if not factor > 0:
        raise ParameterError(f"amplify factor must be positive, got {factor}")
    return signal.with_samples(signal.samples * factor)


def _guarded_analytic(signal: RealSignal, lowest_shift_hz: float, highest_shift_hz: float) -> np.ndarray:
    """Analytic signal without the content that a shift within
    [lowest, highest] would move below 0 Hz or past Nyquist.

    Removing it before mixing (rather than projecting afterwards) avoids the
    block-edge phase jump of a non-periodic mix leaking across 0 Hz.
    """
    fs = signal.sample_rate_hz
    n = len(signal)
    if n < 64:
        raise ParameterError(f"need at least 64 samples, got {n}")
    spec = np.fft.fft(signal.samples)
    f = np.fft.fftfreq(n, 1 / fs)
    keep = (f >= max(0.0, -lowest_shift_hz)) & (f <= fs / 2 - max(0.0, highest_shift_hz))
    gain = np.where(keep, 2.0, 0.0)
    gain[0] = 1.0 if keep[0] else 0.0
    if n % 2 == 0:
        gain[n // 2] = 1.0 if keep[n // 2] else 0.0
    return np.fft.ifft(spec * gain)


def shifted_analytic(signal: RealSignal, shift_hz: float) -> np.ndarray:
    """Analytic signal moved by ``shift_hz``; whatever would land below 0 Hz
    (or past Nyquist) is removed rather than wrapped."""
    fs = signal.sample_rate_hz
    if abs(shift_hz) >= fs / 2:
        raise ParameterError(f"|shift| must stay below {fs / 2} Hz, got {shift_hz}")
    z = _guarded_analytic(signal, shift_hz, shift_hz)
    n = np.arange(len(z))
    return z * np.exp(2j * np.pi * shift_hz * n / fs)


def freq_shift(signal: RealSignal, shift_hz: float) -> RealSignal:
    """Shift all content by ``shift_hz``; the lower sideband is discarded."""
    if shift_hz == 0:
        return signal
    return signal.with_samples(shifted_analytic(signal, shift_hz).real)


def sim_tone(signal: RealSignal, freq_hz: float, amplitude: float, phase: float = 0.0) -> RealSignal:
    fs = signal.sample_rate_hz
    if not 0 < freq_hz < fs / 2:
        raise ParameterError(f"tone frequency must lie in (0, {fs / 2}) Hz, got {freq_hz}")
    if amplitude < 0:
        raise ParameterError("tone amplitude must be non-negative")
    if amplitude == 0:
        return signal
    t = np.arange(len(signal)) / fs
    return signal.with_samples(signal.samples + amplitude * np.sin(2 * np.pi * freq_hz * t + phase))


def scaled_noise(signal: RealSignal, snr_db: float, unit_noise: np.ndarray) -> np.ndarray:
    """``unit_noise`` rescaled so its realized power hits the target SNR exactly."""
    p = power(signal)
    if p <= 0:
        raise ParameterError("cannot set an SNR against a zero-power signal")
    target = p / 10 ** (snr_db / 10)
    return unit_noise * np.sqrt(target / np.mean(unit_noise**2))


def add_noise_snr(signal: RealSignal, snr_db: float, rng: np.random.Generator) -> RealSignal:
    """Add white Gaussian noise at ``snr_db`` relative to the signal's own power.

    The drawn noise is rescaled to its exact target power, so the realized
    SNR equals the request up to rounding.
    """
    _check_nonempty(signal)
    if not np.isfinite(snr_db):
        raise ParameterError("SNR must be finite")
    n = rng.standard_normal(len(signal))
    return signal.with_samples(signal.samples + scaled_noise(signal, snr_db, n))


def linear_drift(signal: RealSignal, total_drift_hz: float) -> RealSignal:
    """Frequency offset ramping linearly from 0 to ``total_drift_hz`` over the signal."""
    if abs(total_drift_hz) > 500:
        raise ParameterError("|drift| must not exceed 500 Hz")
    if total_drift_hz == 0:
        return signal
    fs = signal.sample_rate_hz
    n = len(signal)
    z = _guarded_analytic(signal, min(total_drift_hz, 0.0), max(total_drift_hz, 0.0))
    t = np.arange(n) / fs
    rate = total_drift_hz / (n / fs)
    return signal.with_samples((z * np.exp(1j * np.pi * rate * t * t)).real)


def apply_op(signal: RealSignal, op: AugOp, rng: np.random.Generator) -> RealSignal:
    if isinstance(op, Amplify):
        return amplify(signal, op.factor)
    if isinstance(op, FreqShift):
        return freq_shift(signal, op.shift_hz)
    if isinstance(op, SimTone):
        # phase is drawn even for zero amplitude so later ops see the same stream
        phase = rng.uniform(0, 2 * np.pi)
        return sim_tone(signal, op.freq_hz, op.amplitude, phase)
    if isinstance(op, Noise):
        return add_noise_snr(signal, op.snr_db, rng)
    raise ParameterError(f"unknown augmentation op {op!r}")


def apply_plan(
    signal: RealSignal,
    plan: AugPlan,
    hook: Callable[[AugOp, RealSignal], None] | None = None,
) -> RealSignal:
    """Apply ``plan.ops`` in order. ``hook`` sees each op and its output."""
    rng = np.random.default_rng(plan.rng_seed % 2**64)
    out = signal
    for op in plan.ops:
        out = apply_op(out, op, rng)
        if hook is not None:
            hook(op, out)
    return out


def fixed_val_plan(rng_seed: int = 0) -> AugPlan:
    return AugPlan(
        (Amplify(0.5), FreqShift(400.0), SimTone(1000.0, 0.03), SimTone(2300.0, 0.015), Noise(30.0)),
        rng_seed,
    )


def sample_train_plan(ranges: AugRanges, rng: np.random.Generator) -> AugPlan:
    """Random plan in canonical order; every parameter uniform over its range."""
    u = lambda lo_hi: float(rng.uniform(*lo_hi))  # noqa: E731
    # draw every parameter regardless of ablation switches so that removing
    # one op leaves the others' parameters unchanged
    amp = Amplify(u(ranges.amplify))
    shift = FreqShift(u(ranges.freq_shift_hz))
    tones = [SimTone(u(ranges.sim_tone_freq_hz), u(ranges.sim_tone_amp)) for _ in range(2)]
    noise = Noise(u(ranges.noise_snr_db))
    seed = int(rng.integers(0, 2**63))
    ops: list[AugOp] = []
    if ranges.use_amplify:
        ops.append(amp)
    if ranges.use_freq_shift:
        ops.append(shift)
    ops.extend(tones[2 - ranges.n_sim_tones :] if ranges.n_sim_tones else [])
    if ranges.use_noise:
        ops.append(noise)
    return AugPlan(tuple(ops), seed)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (global seed, item id, epoch, ...)."""
    h = hashlib.blake2b("|".join(map(str, parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


N_AUGMENTED_COPIES = 5


def expand_training_set(
    items: Sequence[tuple[RealSignal, T]],
    ranges: AugRanges = AugRanges(),
    epoch_seed: int = 0,
    item_ids: Sequence[object] | None = None,
) -> list[tuple[RealSignal, T]]:
    """Five independently augmented copies of each item plus the clean item.

    Per-item plans derive from (epoch_seed, item id, copy), so results do not
    depend on processing order. Output groups the six versions of each item
    together, the clean one last.
    """
    if len(items) == 0:
        raise ParameterError("nothing to expand")
    ids = item_ids if item_ids is not None else range(len(items))
    out = []
    for (sig, label), item_id in zip(items, ids):
        for copy in range(N_AUGMENTED_COPIES):
            rng = np.random.default_rng(derive_seed(epoch_seed, item_id, copy))
            out.append((apply_plan(sig, sample_train_plan(ranges, rng)), label))
        out.append((sig, label))
    return out


@dataclass(frozen=True)
class ReceiverPreset:
    """Simulated receiver condition: measured SNR and total frequency drift."""

    name: str
    snr_db: float
    drift_hz: float


RECEIVER_PRESETS = {
    "R0": ReceiverPreset("R0", 35.0, 14.0),
    "R1": ReceiverPreset("R1", 31.0, 160.0),
}


def plan_to_dict(plan: AugPlan) -> dict:
    return {
        "rng_seed": plan.rng_seed,
        "ops": [{"op": type(op).__name__, **op.__dict__} for op in plan.ops],
    }


_OPS = {"Amplify": Amplify, "FreqShift": FreqShift, "SimTone": SimTone, "Noise": Noise}


def plan_from_dict(d: dict) -> AugPlan:
    ops = []
    for o in d["ops"]:
        o = dict(o)
        ops.append(_OPS[o.pop("op")](**o))
    return AugPlan(tuple(ops), int(d.get("rng_seed", 0)))


def plan_fingerprint(plan: AugPlan | None) -> str:
    if plan is None or not plan.ops:
        return "clean"
    blob = json.dumps(plan_to_dict(plan), sort_keys=True).encode()
    return hashlib.blake2b(blob, digest_size=8).hexdigest()
