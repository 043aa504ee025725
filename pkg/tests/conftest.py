import os

import numpy as np
import pytest

from hjbnet.network import ValueNet


def pytest_collection_modifyitems(config, items):
    if os.environ.get("HJBNET_EXTENDED", "") not in ("", "0"):
        return
    skip = pytest.mark.skip(reason="extended run; set HJBNET_EXTENDED=1")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


def random_net(d, m, seed=0, scale=0.5):
    """Network with every parameter group nonzero, for derivative checks."""
    rng = np.random.default_rng(seed)
    net = ValueNet(d, m)
    net.theta[:] = scale * rng.standard_normal(net.n_params)
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines, printed again in the terminal summary so captured output does not hide them
ACCEPTANCE = []


@pytest.fixture
def accept():
    def record(number, title, passed, detail):
        line = f"[{number:>2}] {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE.append((number, line))
        print("ACCEPTANCE " + line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE, key=lambda t: t[0]):
            terminalreporter.write_line(line)
