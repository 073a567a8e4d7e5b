from __future__ import annotations

import numpy as np
import pytest

from bridgekit.field import PixelField, RngState


@pytest.fixture
def rng() -> RngState:
    return RngState(0)


def random_u(seed: int, shape=(4, 5, 1)) -> PixelField:
    """Uncertainty field with values in [0, 1], endpoints included."""
    g = np.random.default_rng(seed)
    d = g.uniform(0.0, 1.0, shape)
    d.flat[0] = 0.0
    d.flat[-1] = 1.0
    return PixelField(d)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
