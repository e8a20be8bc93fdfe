"""Per-split synthetic datasets: one signal per OMP with split-disjoint payloads."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

from ..dsp import ParameterError, RealSignal
from .catalog import AF_RATE_HZ, get_mode, omp_labels
from .synth import Payload, synthesize

SPLITS = ("train", "val", "test")
DEFAULT_DURATIONS_S = {"train": 180.0, "val": 60.0, "test": 75.0}


def payload_seed(global_seed: int, split: str, omp_label: str) -> int:
    """63-bit payload seed; the split name is hashed in, so splits never share seeds."""
    h = hashlib.blake2b(f"{global_seed}|{split}|{omp_label}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


@dataclass(frozen=True)
class ManifestEntry:
    omp_label: str
    om_label: str
    split: str
    seed: int
    duration_s: float
    sample_rate_hz: int = AF_RATE_HZ
    path: str = ""
    augmentation_fingerprint: str = ""


@dataclass(frozen=True)
class LabeledSignal:
    entry: ManifestEntry
    signal: RealSignal

    @property
    def omp_label(self) -> str:
        return self.entry.omp_label


def build_dataset(
    split: str,
    duration_per_omp_s: float | None = None,
    seed: int = 0,
    labels: Iterable[str] | None = None,
    rate_hz: int = AF_RATE_HZ,
) -> list[LabeledSignal]:
    """Synthesize one signal per OMP for ``split``.

    ``duration_per_omp_s`` defaults to 180 s (train), 60 s (val) and
    75 s (test). ``labels`` restricts the set of OMPs.
    """
    if split not in SPLITS:
        raise ParameterError(f"split must be one of {SPLITS}, got {split!r}")
    dur = DEFAULT_DURATIONS_S[split] if duration_per_omp_s is None else float(duration_per_omp_s)
    if dur <= 0:
        raise ParameterError("duration per OMP must be positive")
    out = []
    for label in labels if labels is not None else omp_labels():
        spec = get_mode(label)
        pseed = payload_seed(seed, split, label)
        sig = synthesize(spec, Payload(pseed), dur, rate_hz)
        entry = ManifestEntry(label, spec.om_label, split, pseed, dur, rate_hz)
        out.append(LabeledSignal(entry, sig))
    return out
