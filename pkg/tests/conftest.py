import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from adlayout.config import fixture_path  # noqa: E402
from adlayout.dataset import Manifest  # noqa: E402
from adlayout.layout import Layout  # noqa: E402
from adlayout.prompting import ExemplarStore  # noqa: E402
from golden import CANONICAL_BOXES  # noqa: E402


@pytest.fixture
def canonical_layout():
    return Layout.build(102, 150, CANONICAL_BOXES)


@pytest.fixture(scope="session")
def store():
    return ExemplarStore.load(fixture_path("exemplars"))


@pytest.fixture(scope="session")
def manifest():
    return Manifest.load(fixture_path("dataset"))


@pytest.fixture
def png(tmp_path):
    """Factory for small RGB PNG files."""

    def make(name="img.png", size=(24, 36), color=(90, 120, 200)):
        path = tmp_path / name
        Image.new("RGB", size, color).save(path)
        return path

    return make


@pytest.fixture
def bright_square():
    img = np.zeros((64, 64))
    img[28:36, 28:36] = 1.0
    return img


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)
