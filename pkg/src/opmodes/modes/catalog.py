"""The 98 operating-mode-parameter (OMP) classes over 17 operating modes (OM).

Numeric waveform parameters follow public amateur-radio/Fldigi mode
conventions. Each row's ``source`` names the convention it comes from; rows
whose suffix meaning is Fldigi-internal (F/FL, L, S/L, x1/x2/x4, BX/OB, Micro)
are marked ``convention-derived``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

from ..dsp import ParameterError

AF_RATE_HZ = 6000
DEFAULT_CENTER_HZ = 1500.0

# symbol rates derived from Fldigi's 8000 Hz and 11025 Hz modem clocks
R8K = lambda symlen: 8000.0 / symlen  # noqa: E731
R11K = lambda symlen: 11025.0 / symlen  # noqa: E731


class ModeFamily(str, enum.Enum):
    CW = "CW"
    FSK_RTTY = "FSK_RTTY"
    PSK = "PSK"
    MULTI_CARRIER_PSK = "MULTI_CARRIER_PSK"
    MFSK = "MFSK"
    IFK = "IFK"
    THROB = "THROB"
    MT63 = "MT63"
    OFDM_GENERIC = "OFDM_GENERIC"
    NOISE = "NOISE"


@dataclass(frozen=True)
class ModeSpec:
    om_label: str
    param: str  # the parameter cell text as listed for this OM
    family: ModeFamily
    baud: float
    tones: int = 0
    tone_spacing_hz: float = 0.0
    carriers: int = 1
    center_hz: float = DEFAULT_CENTER_HZ
    nominal_bandwidth_hz: float = 0.0
    waveform_degenerate_group: str | None = None
    # symbol-stream knobs; they change coding statistics, never the RF parameters
    psk_order: int = 2
    repeat: int = 1
    interleave: bool = False
    ifk_offset: int = 0
    scramble: bool = True
    bits_per_char: int = 7
    source: str = ""

    @property
    def omp_label(self) -> str:
        return self.om_label if self.param == self.om_label else f"{self.om_label} {self.param}"

    @property
    def band_edges_hz(self) -> tuple[float, float]:
        half = self.nominal_bandwidth_hz / 2
        return self.center_hz - half, self.center_hz + half


# Rows exactly as they appear in the mode table: OM, then its parameter cells.
TABLE_ROWS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("BPSK", ("31", "63", "63F", "125", "250", "500", "1000")),
    ("QPSK", ("31", "63", "125", "250", "500")),
    ("8PSK", ("125", "125F", "125FL", "250", "250F", "250FL", "500", "500F", "1000", "1000F", "1200F")),
    ("MC-PSK", ("125C12", "250C6", "500C2", "500C4", "800C2", "1000C2")),
    ("PSKR", ("125", "250", "500", "1000")),
    ("Olivia", ("4/125", "4/250", "8/250", "8/500", "16/500", "16/1000", "32/1000", "64/2000")),
    ("Contestia", ("4/125", "4/250", "4/500", "8/250", "8/500", "16/500", "32/1000", "64/2000")),
    ("MFSK", ("4", "8", "11", "16", "22", "31", "64", "64L", "128", "128L")),
    ("DominoEx", ("EX Micro", "EX4", "EX5", "EX8", "X11", "X16", "X22", "X44", "X88")),
    ("Thor", ("Micro", "100", "11", "16", "22", "25x4", "4", "5", "50x1", "50x2", "8")),
    ("Throb", ("BX1", "BX2", "BX4", "OB1", "OB2", "OB4")),
    ("MT63", ("500S", "500L", "1000S", "1000L", "2000S", "2000L")),
    ("OFDM", ("500F", "750F", "3500")),
    ("RTTY", ("RTTY",)),
    ("IFKP", ("IFKP",)),
    ("CW", ("CW",)),
    ("Noise", ("Noise",)),
)

# "31" and "63" name the nominal rates of 31.25 and 62.5 Bd
PSK_BAUD = {"31": 31.25, "63": 62.5, "125": 125.0, "250": 250.0, "500": 500.0, "1000": 1000.0, "1200": 1200.0}

# (symbol rate, tone spacing) for the 18-tone IFK modes; slow variants are
# double-spaced (Fldigi convention)
IFK_RATES = {
    "Micro": (R8K(4000), R8K(4000)),  # convention-derived: single spacing assumed
    "4": (R8K(2048), 2 * R8K(2048)),
    "5": (R11K(2048), 2 * R11K(2048)),
    "8": (R8K(1024), 2 * R8K(1024)),
    "11": (R11K(1024), R11K(1024)),
    "16": (R8K(512), R8K(512)),
    "22": (R11K(512), R11K(512)),
    "44": (R11K(256), R11K(256)),
    "88": (R11K(128), R11K(128)),
    # Thor wide modes: "RxM" reads as R Bd at M times the symbol rate spacing (convention-derived)
    "25x4": (R8K(320), 4 * R8K(320)),
    "50x1": (R8K(160), R8K(160)),
    "50x2": (R8K(160), 2 * R8K(160)),
    "100": (R8K(80), R8K(80)),
}

# MFSK: tones, symbol rate (Fldigi MFSKn table)
MFSK_PARAMS = {
    "4": (32, R8K(2048)),
    "8": (32, R8K(1024)),
    "11": (16, R11K(1024)),
    "16": (16, R8K(512)),
    "22": (16, R11K(512)),
    "31": (8, R8K(256)),
    "64": (16, R8K(128)),
    "128": (16, R8K(64)),
}

# Throb palettes: OB = original Throb (9 tones), BX = ThrobX (11 tones);
# spacing doubles at 4 Bd (convention-derived)
THROB_PARAMS = {
    "OB": (9, 8.0),
    "BX": (11, 7.8125),
}

# MT63: 64 DBPSK carriers, bandwidth / 64 spacing, 5/10/20 Bd
MT63_BAUD = {"500": 5.0, "1000": 10.0, "2000": 20.0}

# OFDM: (carriers, symbol rate = carrier spacing). The 3500 Hz mode does not
# fit a 3 kHz audio channel; it is clamped to six carriers over 2900 Hz.
OFDM_PARAMS = {
    "500F": (4, 125.0),
    "750F": (3, 250.0),
    "3500": (6, 2900.0 / 6),
}

CW_WPM = 25.0  # choice; the mode table does not fix a keying speed
CW_BANDWIDTH_HZ = 100.0
RTTY_BAUD = 45.45
RTTY_SHIFT_HZ = 170.0
NOISE_BAND_HZ = (50.0, 2950.0)


def _psk_like(om: str, param: str) -> ModeSpec:
    order = {"BPSK": 2, "QPSK": 4, "8PSK": 8, "PSKR": 2}[om]
    digits = param.rstrip("FL")
    baud = PSK_BAUD[digits]
    repeat, interleave = 1, False
    if param.endswith("FL"):
        repeat, interleave = 2, True
    elif param.endswith("F"):
        repeat = 2
    if om == "PSKR":
        repeat, interleave = 2, True
    group = None
    if om in ("BPSK", "PSKR") and digits in ("63", "125", "250", "500", "1000"):
        group = f"bpsk-{digits}"
    elif om == "8PSK":
        group = f"8psk-{digits}"
    return ModeSpec(
        om_label=om,
        param=param,
        family=ModeFamily.PSK,
        baud=baud,
        nominal_bandwidth_hz=baud,
        waveform_degenerate_group=group,
        psk_order=order,
        repeat=repeat,
        interleave=interleave,
        source="PSK31-family convention: BW = symbol rate; F/FL/R = FEC variants (convention-derived)",
    )


def _mc_psk(param: str) -> ModeSpec:
    baud_s, carriers_s = param.split("C")
    baud = float(baud_s)
    carriers = int(carriers_s)
    spacing = 1.5 * baud
    return ModeSpec(
        om_label="MC-PSK",
        param=param,
        family=ModeFamily.MULTI_CARRIER_PSK,
        baud=baud,
        tone_spacing_hz=spacing,
        carriers=carriers,
        nominal_bandwidth_hz=(carriers - 1) * spacing + baud,
        source="multi-carrier PSK nCk: k carriers of n Bd, 1.5 x baud spacing",
    )


def _olivia_like(om: str, param: str) -> ModeSpec:
    tones_s, bw_s = param.split("/")
    tones, bw = int(tones_s), float(bw_s)
    spacing = bw / tones
    if om == "Olivia":
        group = f"olivia-{param}"
        scramble, bpc = True, 7
    else:
        # Contestia pairs with an Olivia row only where one exists
        group = f"olivia-{param}" if param != "4/500" else None
        scramble, bpc = False, 6
    return ModeSpec(
        om_label=om,
        param=param,
        family=ModeFamily.MFSK,
        baud=spacing,
        tones=tones,
        tone_spacing_hz=spacing,
        nominal_bandwidth_hz=bw,
        waveform_degenerate_group=group,
        scramble=scramble,
        bits_per_char=bpc,
        source="Olivia/Contestia T/B: spacing = baud = B/T",
    )


def _mfsk(param: str) -> ModeSpec:
    long_il = param.endswith("L")
    key = param.rstrip("L")
    tones, baud = MFSK_PARAMS[key]
    group = f"mfsk-{key}" if key in ("64", "128") else None
    return ModeSpec(
        om_label="MFSK",
        param=param,
        family=ModeFamily.MFSK,
        baud=baud,
        tones=tones,
        tone_spacing_hz=baud,
        nominal_bandwidth_hz=tones * baud,
        waveform_degenerate_group=group,
        repeat=2,
        interleave=long_il,
        source="Fldigi MFSKn table; L = long interleave (convention-derived)",
    )


def _ifk(om: str, param: str) -> ModeSpec:
    if om == "DominoEx":
        key = param.replace("EX ", "").replace("EX", "").replace("X", "")
        repeat = 1
    elif om == "Thor":
        key = param
        repeat = 2
    else:  # IFKP
        key = None
    if om == "IFKP":
        baud = R11K(2048)
        spacing = 2 * baud
        tones, offset, group = 33, 1, None
        repeat = 1
    else:
        baud, spacing = IFK_RATES[key]
        tones, offset = 18, 2
        group = f"ifk-{key}" if key in ("Micro", "4", "5", "8", "11", "16", "22") else None
    return ModeSpec(
        om_label=om,
        param=param,
        family=ModeFamily.IFK,
        baud=baud,
        tones=tones,
        tone_spacing_hz=spacing,
        nominal_bandwidth_hz=tones * spacing,
        waveform_degenerate_group=group,
        repeat=repeat,
        ifk_offset=offset,
        scramble=False,
        bits_per_char=8,
        source="IFK+ (DominoEX/Thor 18 tones offset 2, IFKP 33 tones offset 1); Thor = DominoEX + FEC",
    )


def _throb(param: str) -> ModeSpec:
    palette, baud_s = param[:2], param[2:]
    tones, spacing = THROB_PARAMS[palette]
    baud = float(baud_s)
    if baud == 4:
        spacing *= 2
    return ModeSpec(
        om_label="Throb",
        param=param,
        family=ModeFamily.THROB,
        baud=baud,
        tones=tones,
        tone_spacing_hz=spacing,
        nominal_bandwidth_hz=tones * spacing,
        source="Throb/ThrobX palettes; BX/OB naming convention-derived",
    )


def _mt63(param: str) -> ModeSpec:
    bw_s, il = param[:-1], param[-1]
    bw = float(bw_s)
    return ModeSpec(
        om_label="MT63",
        param=param,
        family=ModeFamily.MT63,
        baud=MT63_BAUD[bw_s],
        tone_spacing_hz=bw / 64,
        carriers=64,
        nominal_bandwidth_hz=bw,
        waveform_degenerate_group=f"mt63-{bw_s}",
        repeat=2,
        interleave=(il == "L"),
        source="MT63: 64 DBPSK carriers, spacing = BW/64; S/L = short/long interleave",
    )


def _ofdm(param: str) -> ModeSpec:
    carriers, baud = OFDM_PARAMS[param]
    return ModeSpec(
        om_label="OFDM",
        param=param,
        family=ModeFamily.OFDM_GENERIC,
        baud=baud,
        tone_spacing_hz=baud,
        carriers=carriers,
        nominal_bandwidth_hz=carriers * baud,
        source="OFDM-nnn: DBPSK carriers spaced one symbol rate apart (convention-derived)",
    )


def _build(om: str, param: str) -> ModeSpec:
    if om in ("BPSK", "QPSK", "8PSK", "PSKR"):
        return _psk_like(om, param)
    if om == "MC-PSK":
        return _mc_psk(param)
    if om in ("Olivia", "Contestia"):
        return _olivia_like(om, param)
    if om == "MFSK":
        return _mfsk(param)
    if om in ("DominoEx", "Thor", "IFKP"):
        return _ifk(om, param)
    if om == "Throb":
        return _throb(param)
    if om == "MT63":
        return _mt63(param)
    if om == "OFDM":
        return _ofdm(param)
    if om == "RTTY":
        return ModeSpec(
            om_label="RTTY", param="RTTY", family=ModeFamily.FSK_RTTY, baud=RTTY_BAUD, tones=2,
            tone_spacing_hz=RTTY_SHIFT_HZ, nominal_bandwidth_hz=RTTY_SHIFT_HZ + 1.2 * RTTY_BAUD,
            bits_per_char=5, scramble=False, source="amateur RTTY: 45.45 Bd, 170 Hz shift; BW = shift + 1.2 x baud",
        )
    if om == "CW":
        return ModeSpec(
            om_label="CW", param="CW", family=ModeFamily.CW, baud=CW_WPM * 50 / 60,
            nominal_bandwidth_hz=CW_BANDWIDTH_HZ, scramble=False,
            source="PARIS timing at 25 WPM (choice); 5 ms raised-cosine keying",
        )
    if om == "Noise":
        lo, hi = NOISE_BAND_HZ
        return ModeSpec(
            om_label="Noise", param="Noise", family=ModeFamily.NOISE, baud=0.0,
            center_hz=(lo + hi) / 2, nominal_bandwidth_hz=hi - lo, source="band-limited white noise",
        )
    raise NotImplementedError(om)


@lru_cache(maxsize=1)
def _catalog() -> tuple[ModeSpec, ...]:
    return tuple(_build(om, p) for om, params in TABLE_ROWS for p in params)


def catalog() -> list[ModeSpec]:
    """All 98 OMP entries, in table order."""
    return list(_catalog())


@lru_cache(maxsize=1)
def _by_label() -> dict[str, ModeSpec]:
    return {s.omp_label: s for s in _catalog()}


def get_mode(omp_label: str) -> ModeSpec:
    try:
        return _by_label()[omp_label]
    except KeyError:
        raise ParameterError(f"unknown OMP label {omp_label!r}") from None


def omp_labels() -> list[str]:
    return [s.omp_label for s in _catalog()]


def om_labels() -> list[str]:
    return [om for om, _ in TABLE_ROWS]


def rollup_om(omp_label: str) -> str:
    """The OM that owns ``omp_label``."""
    return get_mode(omp_label).om_label


# Waveform-distinct subset used for desk-scale classification runs: at most
# one member of each degenerate group, spread over bandwidths and families.
# OFDM 3500 is left out: clamped below Nyquist, its six overlapping carriers
# have no spectrogram structure that separates them from band-limited Noise.
DISTINCT_SUBSET_20 = (
    "BPSK 31",
    "BPSK 250",
    "QPSK 500",
    "8PSK 1000",
    "MC-PSK 125C12",
    "MC-PSK 1000C2",
    "Olivia 8/250",
    "Olivia 32/1000",
    "MFSK 16",
    "MFSK 128",
    "DominoEx X88",
    "Thor 25x4",
    "Throb OB4",
    "MT63 2000S",
    "MT63 500S",
    "OFDM 750F",
    "IFKP",
    "RTTY",
    "CW",
    "Noise",
)


def format_table(specs: list[ModeSpec] | None = None) -> str:
    """Tab-separated table, one row per OMP, with a header line."""
    specs = catalog() if specs is None else specs
    cols = (
        "omp_label", "om_label", "param", "family", "baud", "tones", "tone_spacing_hz",
        "carriers", "center_hz", "nominal_bandwidth_hz", "waveform_degenerate_group", "source",
    )
    lines = ["\t".join(cols)]
    for s in specs:
        row = []
        for c in cols:
            v = getattr(s, c)
            if isinstance(v, ModeFamily):
                v = v.value
            elif isinstance(v, float):
                v = f"{v:.6g}"
            elif v is None:
                v = ""
            row.append(str(v))
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"
