import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gredp import _backend  # noqa: E402


@pytest.fixture(params=sorted(_backend.available_backends()))
def backend(request, monkeypatch):
    """Run a test once per available DFT kernel backend."""
    monkeypatch.setattr(_backend, "dft_rows", _backend.available_backends()[request.param])
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if not acceptance_log.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(acceptance_log.RESULTS):
        terminalreporter.write_line(acceptance_log.line(n))
