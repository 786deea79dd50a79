from pathlib import Path

import numpy as np
import pytest

from amss.acoustics import Waveform
from amss.maskers import load_manifest, write_synthetic_bank
from amss.simulator import synthetic_ambient

DATA = Path(__file__).parent / "data"


def sine(freq, duration=1.0, fs=48000.0, amplitude=1.0, calibration=94.0):
    t = np.arange(int(round(duration * fs))) / fs
    return Waveform(amplitude * np.sin(2 * np.pi * freq * t), fs, calibration)


@pytest.fixture(scope="session")
def bank_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bank")
    write_synthetic_bank(out)
    return out


@pytest.fixture(scope="session")
def manifest(bank_dir):
    return bank_dir / "manifest.csv"


@pytest.fixture
def bank(manifest):
    return load_manifest(manifest)


@pytest.fixture(scope="session")
def ambient_120():
    """Two minutes of synthetic traffic noise at 64 dBA, 32 kHz."""
    return synthetic_ambient(120.0, sample_rate=32000.0, laeq=64.0, seed=3)


@pytest.fixture(scope="session")
def survey_csv():
    return DATA / "survey_fixture.csv"


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
