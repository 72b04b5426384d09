import numpy as np
import pytest

from shuttlesim.device import DriveWaveform, derive_constants
from shuttlesim.presets import chain_capacitance, chain_params


@pytest.fixture(scope="session")
def chain():
    return derive_constants(chain_capacitance())


@pytest.fixture(scope="session")
def gated():
    return derive_constants(chain_capacitance(c_gate=1e-18))


@pytest.fixture(scope="session")
def shuttles():
    # lambda = 10 nm keeps x / lambda small, the regime where the closure is accurate
    return chain_params(omega_s=3e8, Q=1.0, resistance=2e9, decay_length=1e-8)


@pytest.fixture(scope="session")
def drive():
    return DriveWaveform(V0=0.02, omega=1e8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """record(k, ok, detail): one PASS/FAIL line per acceptance criterion, printed in the summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((k, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda kv: kv[0]):
            terminalreporter.write_line(line)
