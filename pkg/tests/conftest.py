from pathlib import Path

import pytest

from wdnrtr.hydraulics import fit_network_coefficients
from wdnrtr.network import load_network

DATA = Path(__file__).parent / "data"


def load(name):
    net = load_network(DATA / f"{name}.json")
    return net, fit_network_coefficients(net)


@pytest.fixture
def data_dir():
    return DATA


# one line per acceptance criterion, printed after the run
RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
