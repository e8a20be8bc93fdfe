import numpy as np
import pytest
from hypothesis import settings

from opmodes.dsp import RealSignal

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def tone(freq_hz, duration_s=1.0, rate=6000, amp=1.0, phase=0.0):
    t = np.arange(int(round(duration_s * rate))) / rate
    return RealSignal(amp * np.cos(2 * np.pi * freq_hz * t + phase), rate)


def peak_hz(x, rate):
    """Frequency of the largest two-sided FFT bin (Hann-windowed)."""
    x = np.asarray(x)
    spec = np.abs(np.fft.fft(x * np.hanning(len(x))))
    freqs = np.fft.fftfreq(len(x), 1 / rate)
    return freqs[np.argmax(spec)]


def band_power(x, rate, lo, hi):
    spec = np.abs(np.fft.fft(np.asarray(x))) ** 2
    freqs = np.fft.fftfreq(len(x), 1 / rate)
    return spec[(freqs >= lo) & (freqs <= hi)].sum()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.failed:
        num, _, title = name[len("test_criterion_"):].partition("_")
        detail = "; ".join(str(v) for k, v in report.user_properties if k == "measured")
        outcome = "PASS" if report.passed else "FAIL"
        if int(num) not in _ACCEPTANCE or outcome == "FAIL":
            _ACCEPTANCE[int(num)] = (outcome, title.replace("_", " "), detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        outcome, title, detail = _ACCEPTANCE[num]
        terminalreporter.line(f"criterion {num:2d} {outcome}: {title}" + (f"  [{detail}]" if detail else ""))
