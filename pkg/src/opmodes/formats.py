"""File formats: 16-bit PCM WAVE for audio, raw float32 with JSON sidecars,
dataset manifests and spectrogram image export."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsp import IqSignal, ParameterError, RealSignal
from .modes import AF_RATE_HZ, SPLITS, ManifestEntry, get_mode

MANIFEST_SCHEMA_VERSION = 1
SIDECAR_SCHEMA_VERSION = 1
PCM_SCALE = 32767.0


class FormatError(ValueError):
    """Malformed or mismatched file; carries the byte offset when known."""

    def __init__(self, message: str, path=None, offset: int | None = None):
        where = f"{path}: " if path is not None else ""
        at = f" (byte {offset})" if offset is not None else ""
        super().__init__(f"{where}{message}{at}")
        self.offset = offset


# ---------------------------------------------------------------- WAVE


def write_wav(path, signal: RealSignal, allow_clip: bool = False) -> None:
    """Mono 16-bit PCM. Samples outside [-1, 1] are an error unless ``allow_clip``."""
    x = signal.samples
    peak = float(np.max(np.abs(x))) if len(x) else 0.0
    if peak > 1.0:
        if not allow_clip:
            raise ParameterError(f"signal peak {peak:.3f} exceeds full scale; pass allow_clip to clip")
        x = np.clip(x, -1.0, 1.0)
    pcm = np.round(x * PCM_SCALE).astype("<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, 1, signal.sample_rate_hz, signal.sample_rate_hz * 2, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(pcm)) + pcm
    if len(pcm) % 2:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def read_wav(path, expected_rate_hz: int | None = AF_RATE_HZ) -> RealSignal:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF":
        raise FormatError("missing RIFF header", path, 0)
    if data[8:12] != b"WAVE":
        raise FormatError("RIFF form type is not WAVE", path, 8)
    pos = 12
    fmt = None
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = pos + 8
        if body + size > len(data):
            raise FormatError(f"chunk {cid!r} runs past end of file", path, pos)
        if cid == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk too short", path, pos)
            fmt = struct.unpack("<HHIIHH", data[body : body + 16])
            tag, channels, rate, _, _, bits = fmt
            if tag != 1 or bits != 16:
                raise FormatError(f"expected 16-bit PCM, got format {tag} with {bits} bits", path, body)
            if channels != 1:
                raise FormatError(f"expected mono, got {channels} channels", path, body + 2)
            if expected_rate_hz is not None and rate != expected_rate_hz:
                raise FormatError(f"sample rate {rate} Hz, expected {expected_rate_hz} Hz", path, body + 4)
        elif cid == b"data":
            if fmt is None:
                raise FormatError("data chunk before fmt chunk", path, pos)
            if size % 2:
                raise FormatError("odd data chunk size for 16-bit samples", path, pos + 4)
            pcm = np.frombuffer(data[body : body + size], dtype="<i2")
            return RealSignal(pcm.astype(np.float64) / PCM_SCALE, fmt[2])
        pos = body + size + (size & 1)
    raise FormatError("no data chunk", path, pos)


# ---------------------------------------------------------------- raw float32 + sidecar


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def _write_sidecar(path, meta: dict) -> None:
    meta = {"schema_version": SIDECAR_SCHEMA_VERSION, "sample_format": "f32le", **meta}
    sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def _read_sidecar(path, kind: str) -> dict:
    sc = sidecar_path(path)
    if not sc.exists():
        raise FormatError(f"missing sidecar {sc.name}", path)
    meta = json.loads(sc.read_text())
    if meta.get("kind") != kind:
        raise FormatError(f"sidecar says {meta.get('kind')!r}, expected {kind!r}", sc)
    if meta.get("sample_format") != "f32le":
        raise FormatError(f"unsupported sample format {meta.get('sample_format')!r}", sc)
    return meta


def write_raw(path, signal: RealSignal) -> None:
    """Lossless float32 little-endian audio with a JSON sidecar."""
    Path(path).write_bytes(signal.samples.astype("<f4").tobytes())
    _write_sidecar(path, {"kind": "real", "sample_rate_hz": signal.sample_rate_hz})


def read_raw(path, expected_rate_hz: int | None = AF_RATE_HZ) -> RealSignal:
    meta = _read_sidecar(path, "real")
    data = Path(path).read_bytes()
    if len(data) % 4:
        raise FormatError("size is not a multiple of 4 bytes", path, len(data) - len(data) % 4)
    rate = int(meta["sample_rate_hz"])
    if expected_rate_hz is not None and rate != expected_rate_hz:
        raise FormatError(f"sample rate {rate} Hz, expected {expected_rate_hz} Hz", sidecar_path(path))
    return RealSignal(np.frombuffer(data, dtype="<f4").astype(np.float64), rate)


def write_iq(path, signal: IqSignal, carrier_offset_hz: float = 0.0, start_time_s: float = 0.0) -> None:
    """Interleaved I/Q float32 pairs plus sidecar (rate, carrier offset, start time)."""
    pairs = np.empty(2 * len(signal), dtype="<f4")
    pairs[0::2] = signal.samples.real
    pairs[1::2] = signal.samples.imag
    Path(path).write_bytes(pairs.tobytes())
    _write_sidecar(
        path,
        {
            "kind": "iq",
            "sample_rate_hz": signal.sample_rate_hz,
            "carrier_offset_hz": carrier_offset_hz,
            "start_time_s": start_time_s,
        },
    )


def read_iq(path) -> tuple[IqSignal, dict]:
    data = Path(path).read_bytes()
    if data[:4] == b"RIFF":
        raise FormatError("wideband I/Q must be interleaved float32 pairs with a sidecar, not WAVE", path, 0)
    meta = _read_sidecar(path, "iq")
    if len(data) % 8:
        raise FormatError("size is not a whole number of float32 I/Q pairs", path, len(data) - len(data) % 8)
    v = np.frombuffer(data, dtype="<f4").astype(np.float64)
    return IqSignal(v[0::2] + 1j * v[1::2], int(meta["sample_rate_hz"])), meta


def read_audio(path, expected_rate_hz: int | None = AF_RATE_HZ) -> RealSignal:
    """WAVE by extension or RIFF magic, raw float32 otherwise."""
    p = Path(path)
    with open(p, "rb") as fh:
        magic = fh.read(4)
    if p.suffix.lower() == ".wav" or magic == b"RIFF":
        return read_wav(p, expected_rate_hz)
    return read_raw(p, expected_rate_hz)


def write_audio(path, signal: RealSignal, raw: bool = False, allow_clip: bool = False) -> None:
    if raw:
        write_raw(path, signal)
    else:
        write_wav(path, signal, allow_clip)


# ---------------------------------------------------------------- manifest


def save_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    doc = {"schema_version": MANIFEST_SCHEMA_VERSION, "entries": [asdict(e) for e in entries]}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_manifest(path, check_paths: bool = True) -> list[ManifestEntry]:
    """Entries with paths resolved against the manifest directory.

    Fails fast on unknown labels, mismatched OM labels, missing files and
    seeds shared between splits.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise FormatError(f"unsupported manifest schema {doc.get('schema_version')}", path)
    entries = []
    seeds: dict[int, str] = {}
    for i, raw in enumerate(doc["entries"]):
        e = ManifestEntry(**raw)
        where = f"entry {i} ({e.omp_label!r}, {e.path!r})"
        try:
            spec = get_mode(e.omp_label)
        except ParameterError as exc:
            raise FormatError(f"{where}: {exc}", path) from None
        if spec.om_label != e.om_label:
            raise FormatError(f"{where}: OM label {e.om_label!r} does not own this OMP", path)
        if e.split not in SPLITS:
            raise FormatError(f"{where}: unknown split {e.split!r}", path)
        if seeds.setdefault(e.seed, e.split) != e.split:
            raise FormatError(f"{where}: seed {e.seed} shared between splits", path)
        full = (path.parent / e.path) if e.path else None
        if check_paths and (full is None or not full.exists()):
            raise FormatError(f"{where}: file not found", path)
        entries.append(e if full is None else ManifestEntry(**{**raw, "path": str(full)}))
    return entries


# ---------------------------------------------------------------- spectrogram images


def export_spectrogram(path, values: np.ndarray, floor_db: float) -> tuple[Path, Path]:
    """8-bit PGM (highest frequency on top) plus a .npy sidecar with exact dB values."""
    v = np.asarray(values, dtype=np.float64)
    img = np.round(np.clip((v - floor_db) / -floor_db, 0, 1) * 255).astype(np.uint8)[::-1]
    h, w = img.shape
    p = Path(path)
    p.write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())
    npy = p.with_suffix(".npy")
    np.save(npy, v)
    return p, npy


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", path, pos)
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P5":
        raise FormatError("not a binary PGM", path, 0)
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise FormatError(f"unsupported max value {maxval}", path)
    pix = data[pos:]
    if len(pix) != w * h:
        raise FormatError(f"expected {w * h} pixel bytes, got {len(pix)}", path, pos)
    return np.frombuffer(pix, dtype=np.uint8).reshape(h, w)
