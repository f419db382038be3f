import os
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent


def find_mnist_dir():
    """MNIST directory from INFOLR_MNIST_DIR, else ``data/mnist`` in the repo."""
    for candidate in (os.environ.get("INFOLR_MNIST_DIR"), REPO / "data" / "mnist"):
        if candidate and (Path(candidate) / "train-labels-idx1-ubyte").exists():
            return Path(candidate)
        if candidate and (Path(candidate) / "train-labels-idx1-ubyte.gz").exists():
            return Path(candidate)
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    d = find_mnist_dir()
    if d is None:
        pytest.skip("MNIST files not found; set INFOLR_MNIST_DIR")
    return d


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def _report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
