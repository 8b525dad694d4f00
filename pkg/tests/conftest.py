import numpy as np
import pytest

from nnwmark.nn.layers import Conv2D, Dense, Flatten, GlobalAvgPool, MaxPool, ReLU, ResidualAdd
from nnwmark.nn.model import HostModel, initialize


def numeric_grad(f, x, idx, h=1e-5):
    """Central difference of scalar ``f()`` wrt ``x.flat[idx]``."""
    old = x.flat[idx]
    x.flat[idx] = old + h
    up = f()
    x.flat[idx] = old - h
    down = f()
    x.flat[idx] = old
    return (up - down) / (2 * h)


def rel_close(a, b, rtol, floor=1e-8):
    return abs(a - b) <= rtol * max(abs(a), abs(b)) + floor


@pytest.fixture
def toy_model():
    """Two parameter layers on a 4x4 input, float64."""
    layers = [
        Conv2D("conv", 3, 2, 3, np.float64),
        ReLU("relu"),
        Flatten("flat"),
        Dense("fc", 48, 3, np.float64),
    ]
    model = HostModel(layers, (2, 4, 4), 3)
    initialize(model, seed=11)
    model.layer("conv").params["bias"][:] = [0.1, -0.2, 0.05]
    return model


@pytest.fixture
def every_kind_model():
    """Uses every layer kind, float64."""
    layers = [
        Conv2D("c1", 3, 2, 4, np.float64),
        ReLU("r1"),
        MaxPool("p1", 2),
        Conv2D("c2", 3, 4, 4, np.float64),
        ResidualAdd("add", "p1"),
        ReLU("r2"),
        GlobalAvgPool("gap"),
        Dense("fc", 4, 3, np.float64),
    ]
    model = HostModel(layers, (2, 6, 6), 3)
    initialize(model, seed=5)
    for layer in model.layers:
        if "bias" in layer.params:
            layer.params["bias"][:] = np.linspace(-0.1, 0.1, layer.params["bias"].size)
    return model


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
