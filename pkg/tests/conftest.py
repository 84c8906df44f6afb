import numpy as np
import pytest

from convlstm_rain.convlstm import CELL_TENSORS, CellParams, NetworkSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_spec():
    return NetworkSpec(layer1_filters=4, layer2_filters=2, activation="tanh")


def random_cell(rng, filters, in_ch, grid=(2, 2), kernel=(2, 2), scale=0.5):
    kh, kw = kernel
    shapes = {}
    for name in CELL_TENSORS:
        if name.startswith("W_x"):
            shapes[name] = (filters, in_ch, kh, kw)
        elif name.startswith("W_h"):
            shapes[name] = (filters, filters, kh, kw)
        elif name.startswith("W_c"):
            shapes[name] = (filters,) + tuple(grid)
        else:
            shapes[name] = (filters,)
    return CellParams(**{k: scale * rng.standard_normal(s) for k, s in shapes.items()})


def cell_as_lists(cell):
    return {name: getattr(cell, name).tolist() for name in CELL_TENSORS}


ACCEPTANCE_LINES = []


class _Criterion:
    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.details = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc_type is not None and exc is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"criterion {self.number} [{status}] {self.title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
