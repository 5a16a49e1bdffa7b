import numpy as np
import pytest

from lowshot.decoder import Descriptor

# Smallest legal decoder: 16x16 output with two hidden layers of widths 8 and 4.
TINY = Descriptor(latent_dim=4, resolution=16, channels=3, width=0.0625)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny():
    return TINY


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in mod.REPORT:
            terminalreporter.write_line(line)
