import sys

import numpy as np
import pytest

from birdrl import _kernels_py, kernels


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request, monkeypatch):
    """Run a test once per importable kernel backend."""
    mod = kernels.backends()[request.param]
    for name in kernels._NAMES:
        monkeypatch.setattr(kernels, name, getattr(mod, name, getattr(_kernels_py, name)))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
