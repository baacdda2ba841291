from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from oneshot_irsts.imaging import Frame

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def blob_frame(size=64, center=(32, 32), half=2, level=0.1, peak=0.9):
    """Flat frame with one bright square of side ``2*half+1``."""
    px = np.full((size, size), level)
    x, y = center
    px[y - half:y + half + 1, x - half:x + half + 1] = peak
    return Frame(px)


def square_mask(shape, center, half):
    m = np.zeros(shape, dtype=bool)
    x, y = center
    m[y - half:y + half + 1, x - half:x + half + 1] = True
    return m


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
