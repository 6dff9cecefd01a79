import math

import numpy as np
import pytest

from qosnet.geometry import BipolarNetwork, NetworkParams


def make_network(points, p=0.5, r=0.3, alpha=3.5, angle=0.0):
    params = NetworkParams(lam=1.0, alpha=alpha, p=p, r=r)
    rx = r * np.array([math.cos(angle), math.sin(angle)])
    return BipolarNetwork(params, np.asarray(points, dtype=float).reshape(-1, 2), rx)


THREE = [[0.5, 0.2], [-0.4, 0.6], [1.2, -0.8]]


@pytest.fixture
def three_net():
    return make_network(THREE)


@pytest.fixture
def three_net_p1():
    return make_network(THREE, p=1.0)


@pytest.fixture
def empty_net():
    return make_network(np.zeros((0, 2)))


def mc_sir(network, draws, seed):
    from qosnet.geometry import SlotDraw, sir

    rng = np.random.default_rng(seed)
    n = network.n_interferers
    return sir(network, SlotDraw(rng.standard_exponential((draws, n + 1)),
                                 rng.random((draws, n)) < network.params.p))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines.values()):
            terminalreporter.write_line(line)
